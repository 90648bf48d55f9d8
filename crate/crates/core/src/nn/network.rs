use super::layers::{build_layers, Ctx, Layer};
use super::weights::{self, Record};
use super::{LayerSpec, Mode, Real, Tensor};
use crate::error::{Error, Result};

/// An instantiated layer stack with parameters, activations caches and
/// gradient buffers.
pub struct Network<T> {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    freeze_below: Option<usize>,
    dropout_seed: u64,
    forward_ran: bool,
}

impl<T> std::fmt::Debug for Network<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("input_shape", &self.input_shape)
            .field("output_shape", &self.output_shape)
            .field("layers", &self.specs.len())
            .field("freeze_below", &self.freeze_below)
            .finish()
    }
}

/// Read-only view of one parameter tensor.
pub struct ParamView<'a, T> {
    pub name: &'a str,
    pub layer: usize,
    pub tensor: &'a Tensor<T>,
    pub frozen: bool,
}

impl<T: Real> Network<T> {
    /// Builds the layers for per-sample `input_shape`, initializing weights
    /// from N(0, 2 / fan_in) and biases at zero.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut salt = 0;
        let (layers, output_shape) = build_layers(specs, input_shape, "", seed, &mut salt)?;
        Ok(Network {
            input_shape: input_shape.to_vec(),
            output_shape,
            specs: specs.to_vec(),
            layers,
            freeze_below: None,
            dropout_seed: seed,
            forward_ran: false,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Layers with index below `index` keep their parameters fixed.
    pub fn set_freeze_below(&mut self, index: Option<usize>) {
        self.freeze_below = index;
    }

    pub fn freeze_below(&self) -> Option<usize> {
        self.freeze_below
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        self.freeze_below.is_some_and(|f| layer < f)
    }

    /// Seed for the dropout masks of the next training forward pass.
    pub fn set_dropout_seed(&mut self, seed: u64) {
        self.dropout_seed = seed;
    }

    /// Forward pass treating every batch item as an independent sample.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.forward_views(x, mode, 1)
    }

    /// Forward pass where each consecutive group of `views` batch items is one
    /// object; `view_maxpool` layers reduce each group to a single item.
    pub fn forward_views(&mut self, x: &Tensor<T>, mode: Mode, views: usize) -> Result<Tensor<T>> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "network expects [N, {:?}] input, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        if views == 0 {
            return Err(Error::InvalidArgument("view count must be at least 1".into()));
        }
        let ctx = Ctx { mode, dropout_seed: self.dropout_seed, views };
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, &ctx)?;
        }
        self.forward_ran = true;
        Ok(h)
    }

    /// Back-propagates `grad` (gradient of the loss w.r.t. the last output),
    /// accumulating into parameter gradients of unfrozen layers. Returns the
    /// input gradient when requested.
    pub fn backward(&mut self, grad: Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        if !self.forward_ran {
            return Err(Error::Invariant("backward called before forward".into()));
        }
        let stop = if need_input_grad { 0 } else { self.freeze_below.unwrap_or(0) };
        let mut g = grad;
        for i in (0..self.layers.len()).rev() {
            if i < stop {
                return Ok(None);
            }
            let frozen = self.is_frozen(i);
            let need = need_input_grad || i > stop;
            match self.layers[i].backward(g, need, frozen)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, t, _| t.zero_grad());
    }

    pub fn params(&self) -> Vec<ParamView<'_, T>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let frozen = self.is_frozen(i);
                l.params().into_iter().map(move |p| ParamView { name: &p.name, layer: i, tensor: &p.tensor, frozen })
            })
            .collect()
    }

    /// Calls `f(name, tensor, frozen)` for every parameter in order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, bool)) {
        let freeze = self.freeze_below;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let frozen = freeze.is_some_and(|b| i < b);
            layer.visit_params_mut(&mut |p| f(&p.name, &mut p.tensor, frozen));
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    /// Top-level index of the layer owning parameter `name`.
    pub fn layer_of(&self, name: &str) -> Option<usize> {
        self.params().iter().find(|p| p.name == name).map(|p| p.layer)
    }

    pub fn to_records(&self) -> Vec<Record> {
        self.params()
            .iter()
            .map(|p| Record {
                name: p.name.to_string(),
                dims: p.tensor.shape().iter().map(|&d| d as u32).collect(),
                values: p.tensor.data.iter().map(|v| v.to_f64_lossy() as f32).collect(),
            })
            .collect()
    }

    pub fn save_weights(&self) -> Vec<u8> {
        weights::encode(&self.to_records())
    }

    /// Copies matching records into the parameters. Every parameter must be
    /// present with the same shape unless `skip` returns true for its name.
    pub fn load_records(&mut self, records: &[Record], skip: &dyn Fn(&str) -> bool) -> Result<()> {
        let mut plan = Vec::new();
        for p in self.params() {
            if skip(p.name) {
                continue;
            }
            let rec = records
                .iter()
                .position(|r| r.name == p.name)
                .ok_or_else(|| Error::Weights(format!("layer {}: missing from weights file", p.name)))?;
            let dims: Vec<usize> = records[rec].dims.iter().map(|&d| d as usize).collect();
            if dims != p.tensor.shape() {
                return Err(Error::Weights(format!(
                    "layer {}: shape {:?} in file, network expects {:?}",
                    p.name,
                    dims,
                    p.tensor.shape()
                )));
            }
            plan.push((p.name.to_string(), rec));
        }
        let mut it = plan.into_iter().peekable();
        self.visit_params_mut(&mut |name, t, _| {
            if it.peek().is_some_and(|(n, _)| n == name) {
                let (_, rec) = it.next().expect("peeked");
                for (d, s) in t.data.iter_mut().zip(&records[rec].values) {
                    *d = T::from_f64_lossy(*s as f64);
                }
            }
        });
        Ok(())
    }

    pub fn load_weights(&mut self, bytes: &[u8]) -> Result<()> {
        let records = weights::decode(bytes)?;
        self.load_records(&records, &|_| false)
    }

    /// Same architecture and parameter values in another element type.
    pub fn cast<U: Real>(&self) -> Result<Network<U>> {
        let mut other = Network::<U>::new(&self.input_shape, &self.specs, 0)?;
        other.freeze_below = self.freeze_below;
        other.dropout_seed = self.dropout_seed;
        let values: Vec<Vec<U>> = self
            .params()
            .iter()
            .map(|p| p.tensor.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect())
            .collect();
        let mut it = values.into_iter();
        other.visit_params_mut(&mut |_, t, _| t.data = it.next().expect("same architecture"));
        Ok(other)
    }

    /// Index of the first `view_maxpool` layer, if any.
    pub fn view_pool_index(&self) -> Option<usize> {
        self.specs.iter().position(|s| matches!(s, LayerSpec::ViewMaxPool))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(3, 3, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::FullyConnected { units: 6 },
            LayerSpec::ViewMaxPool,
            LayerSpec::FullyConnected { units: 2 },
        ]
    }

    #[test]
    fn weights_round_trip_and_mismatch() {
        let a = Network::<f32>::new(&[2, 6, 6], &tiny(), 1).unwrap();
        let mut b = Network::<f32>::new(&[2, 6, 6], &tiny(), 2).unwrap();
        assert_ne!(a.to_records(), b.to_records());
        b.load_weights(&a.save_weights()).unwrap();
        assert_eq!(a.to_records(), b.to_records());

        let mut other = tiny();
        other[4] = LayerSpec::FullyConnected { units: 7 };
        let mut c = Network::<f32>::new(&[2, 6, 6], &other, 1).unwrap();
        let err = c.load_weights(&a.save_weights()).unwrap_err().to_string();
        assert!(err.contains("4.fc.weight"), "{err}");
    }

    #[test]
    fn backward_requires_forward() {
        let mut n = Network::<f64>::new(&[2, 6, 6], &tiny(), 1).unwrap();
        assert!(n.backward(Tensor::zeros(&[1, 2]), false).is_err());
    }

    #[test]
    fn param_count_matches_specs() {
        let n = Network::<f32>::new(&[2, 6, 6], &tiny(), 1).unwrap();
        let mut shape = vec![2, 6, 6];
        let mut total = 0;
        for s in tiny() {
            total += s.param_count(&shape).unwrap();
            shape = s.output_shape(&shape).unwrap();
        }
        assert_eq!(n.param_count(), total);
        assert_eq!(n.output_shape(), &[2]);
    }

    #[test]
    fn cast_preserves_values() {
        let n = Network::<f32>::new(&[2, 6, 6], &tiny(), 3).unwrap();
        let d = n.cast::<f64>().unwrap();
        assert_eq!(n.to_records(), d.to_records());
    }
}

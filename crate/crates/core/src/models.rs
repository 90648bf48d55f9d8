//! The three networks: V-CNN I, V-CNN II (inception-style) and the multi-view
//! image network, plus multi-view evaluation and head adaptation.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::weights::Record;
use crate::nn::{LayerSpec, Mode, Network, Real, Tensor};

/// Named layer stack with its input shape and class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
    pub freeze_below: Option<usize>,
}

/// One row of the per-layer breakdown; concat branches get their own rows
/// with dotted paths (`layer.branch.index`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub path: String,
    pub kind: &'static str,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// Per-score-vector output of one network for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub model_id: String,
    pub network: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Vcnn1,
    Vcnn2,
    Mvnet,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vcnn1 => "vcnn1",
            Architecture::Vcnn2 => "vcnn2",
            Architecture::Mvnet => "mvnet",
        }
    }

    /// Voxel networks consume occupancy grids; the multi-view net consumes images.
    pub fn is_volumetric(self) -> bool {
        !matches!(self, Architecture::Mvnet)
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "vcnn1" | "vcnni" => Ok(Architecture::Vcnn1),
            "vcnn2" | "vcnnii" => Ok(Architecture::Vcnn2),
            "mvnet" | "mvcnn" => Ok(Architecture::Mvnet),
            _ => Err(Error::InvalidArgument(format!("unknown network {s:?} (vcnn1, vcnn2, mvnet)"))),
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let out = self.output_shape()?;
        if out != [self.class_count] {
            return Err(Error::Shape(format!(
                "{}: final layer yields {:?}, expected [{}]",
                self.name, out, self.class_count
            )));
        }
        if let Some(f) = self.freeze_below {
            if f >= self.layers.len() {
                return Err(Error::InvalidArgument(format!("freeze_below {f} leaves no trainable layer")));
            }
        }
        Ok(())
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        self.layers.iter().try_fold(self.input_shape.clone(), |s, l| l.output_shape(&s))
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layer_rows()?.iter().filter(|r| r.kind != "concat").map(|r| r.params).sum())
    }

    /// Shapes and parameter counts for every layer, without allocating weights.
    pub fn layer_rows(&self) -> Result<Vec<LayerRow>> {
        fn walk(layers: &[LayerSpec], input: &[usize], prefix: &str, rows: &mut Vec<LayerRow>) -> Result<Vec<usize>> {
            let mut shape = input.to_vec();
            for (i, l) in layers.iter().enumerate() {
                let path = if prefix.is_empty() { i.to_string() } else { format!("{prefix}.{i}") };
                if let LayerSpec::Concat { branches } = l {
                    for (b, branch) in branches.iter().enumerate() {
                        walk(branch, &shape, &format!("{path}.{b}"), rows)?;
                    }
                    let out = l.output_shape(&shape)?;
                    rows.push(LayerRow { path, kind: l.kind(), output_shape: out.clone(), params: 0 });
                    shape = out;
                } else {
                    let params = l.param_count(&shape)?;
                    shape = l.output_shape(&shape)?;
                    rows.push(LayerRow { path, kind: l.kind(), output_shape: shape.clone(), params });
                }
            }
            Ok(shape)
        }
        let mut rows = Vec::new();
        walk(&self.layers, &self.input_shape, "", &mut rows)?;
        Ok(rows)
    }

    /// Human-readable architecture listing.
    pub fn to_manifest(&self) -> Result<String> {
        let dims = |s: &[usize]| s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        let mut out = String::new();
        let _ = writeln!(out, "network {}", self.name);
        let _ = writeln!(out, "input {}", dims(&self.input_shape));
        let _ = writeln!(out, "classes {}", self.class_count);
        let _ = writeln!(out, "freeze_below {}", self.freeze_below.map_or("none".to_string(), |f| f.to_string()));
        fn describe_at<'a>(layers: &'a [LayerSpec], path: &str) -> Option<&'a LayerSpec> {
            let mut parts = path.split('.').map(|p| p.parse::<usize>().ok());
            let mut cur = layers.get(parts.next()??)?;
            while let Some(b) = parts.next() {
                let i = parts.next()??;
                match cur {
                    LayerSpec::Concat { branches } => cur = branches.get(b?)?.get(i)?,
                    _ => return None,
                }
            }
            Some(cur)
        }
        for row in self.layer_rows()? {
            let desc = describe_at(&self.layers, &row.path).map(|l| l.describe()).unwrap_or_default();
            let _ = writeln!(out, "{} {} -> {} params={}", row.path, desc, dims(&row.output_shape), row.params);
        }
        let _ = writeln!(out, "total_params {}", self.param_count()?);
        Ok(out)
    }

    pub fn instantiate<T: Real>(&self, seed: u64) -> Result<Network<T>> {
        self.validate()?;
        let mut net = Network::new(&self.input_shape, &self.layers, seed)?;
        net.set_freeze_below(self.freeze_below);
        Ok(net)
    }
}

/// Width knobs for V-CNN I; the defaults reproduce the published layout.
#[derive(Debug, Clone, Copy)]
pub struct Vcnn1Config {
    pub resolution: usize,
    pub filters: usize,
    pub hidden: usize,
    pub class_count: usize,
}

impl Vcnn1Config {
    pub fn new(class_count: usize) -> Self {
        Vcnn1Config { resolution: 30, filters: 64, hidden: 2048, class_count }
    }
}

pub fn vcnn1_with(cfg: Vcnn1Config) -> NetworkSpec {
    let Vcnn1Config { resolution, filters, hidden, class_count } = cfg;
    NetworkSpec {
        name: "vcnn1".into(),
        // depth slices act as input channels
        input_shape: vec![resolution, resolution, resolution],
        layers: vec![
            LayerSpec::conv(filters, 3, 0),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::conv(filters, 3, 0),
            LayerSpec::Relu,
            LayerSpec::conv(filters, 3, 0),
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::FullyConnected { units: hidden },
            LayerSpec::ViewMaxPool,
            LayerSpec::FullyConnected { units: class_count },
        ],
        class_count,
        freeze_below: None,
    }
}

pub fn build_vcnn1(class_count: usize) -> NetworkSpec {
    vcnn1_with(Vcnn1Config::new(class_count))
}

pub fn build_vcnn2(class_count: usize) -> NetworkSpec {
    vcnn2_with(30, class_count)
}

pub fn vcnn2_with(resolution: usize, class_count: usize) -> NetworkSpec {
    NetworkSpec {
        name: "vcnn2".into(),
        input_shape: vec![resolution, resolution, resolution],
        layers: vec![
            LayerSpec::Concat {
                branches: vec![
                    vec![LayerSpec::conv(20, 1, 0)],
                    vec![LayerSpec::conv(20, 3, 1)],
                    vec![LayerSpec::conv(20, 5, 2)],
                ],
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::Concat { branches: vec![vec![LayerSpec::conv(30, 1, 0)], vec![LayerSpec::conv(30, 3, 1)]] },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::conv(30, 3, 1),
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::FullyConnected { units: 2048 },
            LayerSpec::ViewMaxPool,
            LayerSpec::FullyConnected { units: class_count },
        ],
        class_count,
        freeze_below: None,
    }
}

/// Small image CNN over 3-channel views: three conv/pool stages, a 512-unit
/// hidden layer pooled across views, then the classifier.
pub fn build_mvnet(class_count: usize, image_size: usize) -> Result<NetworkSpec> {
    if image_size < 32 {
        return Err(Error::InvalidArgument(format!("multi-view net needs image size >= 32, got {image_size}")));
    }
    let spec = NetworkSpec {
        name: "mvnet".into(),
        input_shape: vec![3, image_size, image_size],
        layers: vec![
            LayerSpec::conv(16, 3, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::conv(32, 3, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::conv(32, 3, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::FullyConnected { units: 512 },
            LayerSpec::Relu,
            LayerSpec::ViewMaxPool,
            LayerSpec::FullyConnected { units: class_count },
        ],
        class_count,
        freeze_below: None,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn build(arch: Architecture, class_count: usize, resolution: usize, image_size: usize) -> Result<NetworkSpec> {
    let spec = match arch {
        Architecture::Vcnn1 => vcnn1_with(Vcnn1Config { resolution, ..Vcnn1Config::new(class_count) }),
        Architecture::Vcnn2 => vcnn2_with(resolution, class_count),
        Architecture::Mvnet => build_mvnet(class_count, image_size)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Scores for `objects` objects whose views are stacked consecutively in
/// `views` (`[objects * per_object, ...]`), with dropout off.
pub fn forward_multiview_batch<T: Real>(
    net: &mut Network<T>,
    views: &Tensor<T>,
    per_object: usize,
) -> Result<Vec<Vec<f64>>> {
    if per_object == 0 || views.batch() == 0 {
        return Err(Error::InvalidArgument("empty view list".into()));
    }
    if net.view_pool_index().is_none() && per_object > 1 {
        return Err(Error::InvalidArgument("network has no view_maxpool layer".into()));
    }
    let out = net.forward_views(views, Mode::Eval, per_object)?;
    Ok(out.data.chunks(out.item_len()).map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect())
}

/// One score vector from all views of one object.
pub fn forward_multiview<T: Real>(net: &mut Network<T>, views: &[Tensor<T>]) -> Result<Vec<f64>> {
    let first = views.first().ok_or_else(|| Error::InvalidArgument("empty view list".into()))?;
    let item = first.shape().to_vec();
    let mut data = Vec::with_capacity(views.len() * first.len());
    for v in views {
        if v.shape() != item.as_slice() {
            return Err(Error::Shape(format!("view shape {:?} differs from {:?}", v.shape(), item)));
        }
        data.extend_from_slice(&v.data);
    }
    let mut shape = vec![views.len()];
    shape.extend_from_slice(&item);
    let batch = Tensor::from_vec(&shape, data)?;
    Ok(forward_multiview_batch(net, &batch, views.len())?.remove(0))
}

/// Re-targets a trained network to `new_class_count` classes: every layer
/// except the final fully connected one keeps its weights, the head is freshly
/// initialized from `seed`.
pub fn adapt_head<T: Real>(
    spec: &NetworkSpec,
    weights: &[Record],
    new_class_count: usize,
    seed: u64,
) -> Result<(NetworkSpec, Network<T>)> {
    let head = spec.layers.len().checked_sub(1).ok_or_else(|| Error::InvalidArgument("empty network".into()))?;
    if !matches!(spec.layers[head], LayerSpec::FullyConnected { .. }) {
        return Err(Error::InvalidArgument(format!("{}: last layer is not fully connected", spec.name)));
    }
    let mut new_spec = spec.clone();
    new_spec.layers[head] = LayerSpec::FullyConnected { units: new_class_count };
    new_spec.class_count = new_class_count;
    let mut net = new_spec.instantiate::<T>(seed)?;
    let head_prefix = format!("{head}.");
    net.load_records(weights, &|name| name.starts_with(&head_prefix))?;
    Ok((new_spec, net))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vcnn1_counts_and_shapes() {
        let spec = build_vcnn1(40);
        let rows = spec.layer_rows().unwrap();
        let shapes: Vec<Vec<usize>> = rows.iter().map(|r| r.output_shape.clone()).collect();
        assert_eq!(shapes[2], vec![64, 14, 14]);
        let counted: Vec<usize> = rows.iter().filter(|r| r.params > 0).map(|r| r.params).collect();
        assert_eq!(counted, vec![17_344, 36_928, 36_928, 3_278_848, 81_960]);
        assert_eq!(spec.param_count().unwrap(), 3_452_008);
        assert_eq!(build_vcnn1(10).layer_rows().unwrap().last().unwrap().params, 20_490);
    }

    #[test]
    fn vcnn2_counts() {
        let spec = build_vcnn2(40);
        let counted: Vec<usize> =
            spec.layer_rows().unwrap().iter().filter(|r| r.params > 0).map(|r| r.params).collect();
        assert_eq!(counted, vec![620, 5_420, 15_020, 1_830, 16_230, 16_230, 55_298_048, 81_960]);
        assert_eq!(spec.param_count().unwrap(), 55_435_358);
    }

    #[test]
    fn mvnet_shape_contract() {
        let spec = build_mvnet(4, 64).unwrap();
        let mut net = spec.instantiate::<f32>(1).unwrap();
        let views: Vec<Tensor<f32>> =
            (0..20).map(|i| Tensor::from_vec(&[3, 64, 64], vec![i as f32 * 0.01; 3 * 64 * 64]).unwrap()).collect();
        assert_eq!(forward_multiview(&mut net, &views).unwrap().len(), 4);
        assert!(build_mvnet(4, 16).is_err());
        let pool = spec.layers.iter().position(|l| *l == LayerSpec::ViewMaxPool).unwrap();
        assert_eq!(pool, spec.layers.len() - 2);
        assert!(matches!(spec.layers[pool - 2], LayerSpec::FullyConnected { units: 512 }));
    }

    #[test]
    fn manifest_lists_every_layer() {
        let m = build_vcnn2(10).to_manifest().unwrap();
        assert!(m.starts_with("network vcnn2\ninput 30x30x30\nclasses 10\n"));
        assert!(m.contains("0.2.0 conv2d filters=20 size=5 stride=1 padding=2 -> 20x30x30 params=15020"));
        assert!(m.contains("0 concat branches=3 -> 60x30x30 params=0"));
        assert!(m.contains("total_params"));
    }

    #[test]
    fn architecture_names() {
        assert_eq!("V-CNN-I".parse::<Architecture>().unwrap(), Architecture::Vcnn1);
        assert_eq!("vcnn2".parse::<Architecture>().unwrap(), Architecture::Vcnn2);
        assert!("alexnet".parse::<Architecture>().is_err());
    }
}

use super::{Network, Real};
use crate::error::{Error, Result};

/// Stochastic gradient descent with momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { learning_rate: 0.001, momentum: 0.9, weight_decay: 0.0005, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// `v <- momentum * v - lr * (g + decay * w); w <- w + v`
pub fn sgd_update<T: Real>(w: &mut [T], g: &[T], v: &mut [T], lr: f64, momentum: f64, decay: f64) {
    let (lr, mu, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum), T::from_f64_lossy(decay));
    for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v - lr * (*g + wd * *w);
        *w += *v;
    }
}

/// Momentum buffers for every parameter of one network, in parameter order.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: OptimizerConfig,
    pub velocity: Vec<(String, Vec<T>)>,
}

impl<T: Real> Sgd<T> {
    pub fn new(config: OptimizerConfig, net: &Network<T>) -> Result<Self> {
        config.validate()?;
        let velocity = net.params().iter().map(|p| (p.name.to_string(), vec![T::zero(); p.tensor.len()])).collect();
        Ok(Sgd { config, velocity })
    }

    /// Applies one update at learning rate `lr`; frozen parameters are skipped.
    pub fn step(&mut self, net: &mut Network<T>, lr: f64) -> Result<()> {
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        let mut i = 0;
        let mut err = None;
        let velocity = &mut self.velocity;
        net.visit_params_mut(&mut |name, tensor, frozen| {
            let Some((vname, v)) = velocity.get_mut(i) else {
                err.get_or_insert(Error::Invariant("optimizer state does not match network".into()));
                return;
            };
            i += 1;
            if vname != name || v.len() != tensor.len() {
                err.get_or_insert(Error::Invariant(format!("optimizer state mismatch at {name}")));
                return;
            }
            if frozen {
                return;
            }
            let g = tensor.grad.take().unwrap_or_else(|| vec![T::zero(); tensor.len()]);
            sgd_update(&mut tensor.data, &g, v, lr, mu, wd);
            tensor.grad = Some(g);
        });
        err.map_or(Ok(()), Err)
    }
}

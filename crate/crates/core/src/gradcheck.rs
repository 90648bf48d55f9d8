//! Central finite-difference checks of the analytic backward pass, run in
//! f64 over every layer kind and a width-reduced V-CNN I.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{vcnn1_with, Vcnn1Config};
use crate::nn::{softmax_loss, LayerSpec, Mode, Network, Tensor};
use crate::util::derive_seed;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-5;
const SAMPLES_PER_TENSOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Fixed random projection of the outputs, sum(r * y).
    Projection,
    SoftmaxLoss,
}

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub objects: usize,
    pub views: usize,
    pub objective: Objective,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CaseOutcome {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Elements sitting on a kink (relu at 0, pooling ties) where the
    /// one-sided differences disagree; excluded from the error.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub name: String,
    pub seeds: usize,
    pub outcome: CaseOutcome,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.outcome.max_rel_error < TOLERANCE && r.outcome.skipped * 10 <= r.outcome.checked)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>5} {:>8} {:>7} {:>14}  status\n",
            "case", "seeds", "checked", "skipped", "max_rel_error"
        );
        for r in &self.rows {
            let ok = r.outcome.max_rel_error < TOLERANCE && r.outcome.skipped * 10 <= r.outcome.checked;
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>8} {:>7} {:>14.3e}  {}",
                r.name,
                r.seeds,
                r.outcome.checked,
                r.outcome.skipped,
                r.outcome.max_rel_error,
                if ok { "ok" } else { "FAIL" }
            );
        }
        out
    }
}

fn case(
    name: &str,
    input: &[usize],
    layers: Vec<LayerSpec>,
    objects: usize,
    views: usize,
    objective: Objective,
) -> GradCase {
    GradCase { name: name.into(), input_shape: input.to_vec(), layers, objects, views, objective }
}

/// One case per layer kind plus the reduced V-CNN I.
pub fn standard_cases() -> Vec<GradCase> {
    use LayerSpec as L;
    use Objective::*;
    let reduced = vcnn1_with(Vcnn1Config { resolution: 18, filters: 4, hidden: 8, class_count: 3 });
    vec![
        case("conv2d", &[3, 6, 6], vec![L::conv(4, 3, 1)], 2, 1, Projection),
        case(
            "conv2d_stride2",
            &[2, 7, 7],
            vec![L::Conv2d { filters: 3, size: 3, stride: 2, padding: 0 }],
            2,
            1,
            Projection,
        ),
        case("relu", &[2, 4, 4], vec![L::Relu], 2, 1, Projection),
        case("maxpool2d", &[2, 6, 6], vec![L::MaxPool2d { size: 2, stride: 2 }], 2, 1, Projection),
        case("dropout", &[3, 4, 4], vec![L::Dropout { rate: 0.3 }], 2, 1, Projection),
        case("fully_connected", &[2, 3, 3], vec![L::FullyConnected { units: 5 }], 3, 1, Projection),
        case(
            "concat",
            &[2, 5, 5],
            vec![L::Concat { branches: vec![vec![L::conv(2, 1, 0)], vec![L::conv(3, 3, 1), L::Relu]] }],
            2,
            1,
            Projection,
        ),
        case("view_maxpool", &[6], vec![L::FullyConnected { units: 4 }, L::ViewMaxPool], 2, 3, Projection),
        case("softmax_loss", &[6], vec![L::FullyConnected { units: 5 }], 4, 1, SoftmaxLoss),
        case("vcnn1_reduced", &reduced.input_shape, reduced.layers, 2, 2, SoftmaxLoss),
    ]
}

struct Problem {
    net: Network<f64>,
    x: Tensor<f64>,
    views: usize,
    objective: Objective,
    projection: Vec<f64>,
    labels: Vec<usize>,
}

impl Problem {
    fn loss(&mut self) -> Result<(f64, Tensor<f64>)> {
        let y = self.net.forward_views(&self.x, Mode::Train, self.views)?;
        match self.objective {
            Objective::Projection => {
                let l = y.data.iter().zip(&self.projection).map(|(a, b)| a * b).sum();
                Ok((l, Tensor::from_vec(y.shape(), self.projection.clone())?))
            }
            Objective::SoftmaxLoss => softmax_loss(&y, &self.labels),
        }
    }

    fn value(&mut self) -> Result<f64> {
        Ok(self.loss()?.0)
    }
}

fn set_param(net: &mut Network<f64>, name: &str, index: usize, value: f64) {
    net.visit_params_mut(&mut |n, t, _| {
        if n == name {
            t.data[index] = value;
        }
    });
}

/// Compares one analytic derivative with central differences; returns None
/// when the one-sided slopes disagree (a kink inside the step).
fn compare(analytic: f64, plus: f64, minus: f64, base: f64) -> Option<f64> {
    let central = (plus - minus) / (2.0 * STEP);
    let forward = (plus - base) / STEP;
    let backward = (base - minus) / STEP;
    if (forward - backward).abs() > 1e-3 * forward.abs().max(backward.abs()).max(1e-3) {
        return None;
    }
    Some((analytic - central).abs() / analytic.abs().max(central.abs()).max(REL_FLOOR))
}

pub fn check_case(case: &GradCase, seed: u64) -> Result<CaseOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::<f64>::new(&case.input_shape, &case.layers, derive_seed(seed, "weights"))?;
    let item: usize = case.input_shape.iter().product();
    let batch = case.objects * case.views;
    let mut shape = vec![batch];
    shape.extend_from_slice(&case.input_shape);
    let x = Tensor::from_vec(&shape, (0..batch * item).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    let out_len = case.objects * net.output_shape().iter().product::<usize>();
    let classes = net.output_shape()[0];
    let mut p = Problem {
        net,
        x,
        views: case.views,
        objective: case.objective,
        projection: (0..out_len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        labels: (0..case.objects).map(|_| rng.random_range(0..classes)).collect(),
    };
    p.net.set_dropout_seed(derive_seed(seed, "dropout"));

    p.net.zero_grad();
    let (base, grad) = p.loss()?;
    let input_grad = p.net.backward(grad, true)?.ok_or_else(|| Error::Invariant("no input gradient".into()))?;

    let mut outcome = CaseOutcome::default();
    let mut record = |r: Option<f64>| match r {
        Some(e) => {
            outcome.checked += 1;
            outcome.max_rel_error = outcome.max_rel_error.max(e);
        }
        None => outcome.skipped += 1,
    };

    let params: Vec<(String, Vec<f64>, Vec<f64>)> = p
        .net
        .params()
        .iter()
        .map(|v| (v.name.to_string(), v.tensor.data.clone(), v.tensor.grad.clone().unwrap_or_default()))
        .collect();
    for (name, values, grads) in &params {
        if grads.len() != values.len() {
            return Err(Error::Invariant(format!("{name}: missing gradient")));
        }
        for i in sample(&mut rng, values.len(), SAMPLES_PER_TENSOR.min(values.len())) {
            set_param(&mut p.net, name, i, values[i] + STEP);
            let plus = p.value()?;
            set_param(&mut p.net, name, i, values[i] - STEP);
            let minus = p.value()?;
            set_param(&mut p.net, name, i, values[i]);
            record(compare(grads[i], plus, minus, base));
        }
    }
    let xn = p.x.len();
    for i in sample(&mut rng, xn, (2 * SAMPLES_PER_TENSOR).min(xn)) {
        let orig = p.x.data[i];
        p.x.data[i] = orig + STEP;
        let plus = p.value()?;
        p.x.data[i] = orig - STEP;
        let minus = p.value()?;
        p.x.data[i] = orig;
        record(compare(input_grad.data[i], plus, minus, base));
    }
    Ok(outcome)
}

/// Runs every standard case over `seeds` derived seeds.
pub fn run_suite(seed: u64, seeds: usize) -> Result<SuiteReport> {
    let mut rows = Vec::new();
    for c in standard_cases() {
        let mut total = CaseOutcome::default();
        for s in 0..seeds {
            let o = check_case(&c, derive_seed(seed, &format!("{}/{s}", c.name)))?;
            total.checked += o.checked;
            total.skipped += o.skipped;
            total.max_rel_error = total.max_rel_error.max(o.max_rel_error);
        }
        rows.push(SuiteRow { name: c.name.clone(), seeds, outcome: total });
    }
    Ok(SuiteReport { rows })
}

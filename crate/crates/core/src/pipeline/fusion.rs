//! Weighted score fusion with a simplex grid search for the weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::{argmax, average_per_class_accuracy, confusion_matrix};
use crate::error::{Error, Result};
use crate::models::ClassScores;
use crate::nn::{softmax, Tensor};

pub const DEFAULT_GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub components: Vec<String>,
    pub weights: Vec<f64>,
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        if self.components.len() != self.weights.len() || self.weights.is_empty() {
            return Err(Error::InvalidArgument("fusion weights do not match components".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("fusion weights {:?} are not on the simplex", self.weights)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreTransform {
    /// Final-layer scores as produced.
    #[default]
    Raw,
    Softmax,
}

/// Component scores matched up by model id: `(ids, per-component rows)`.
struct Aligned {
    ids: Vec<String>,
    rows: Vec<Vec<Vec<f64>>>,
    classes: usize,
}

fn align(components: &[Vec<ClassScores>], transform: ScoreTransform) -> Result<Aligned> {
    let first = components.first().ok_or_else(|| Error::InvalidArgument("no fusion components".into()))?;
    let mut ids: Vec<String> = first.iter().map(|s| s.model_id.clone()).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate model id in scores".into()));
    }
    let classes = first.first().map_or(0, |s| s.scores.len());
    let mut rows = Vec::with_capacity(components.len());
    for comp in components {
        let by_id: BTreeMap<&str, &ClassScores> = comp.iter().map(|s| (s.model_id.as_str(), s)).collect();
        if by_id.len() != ids.len() || comp.len() != ids.len() {
            return Err(Error::InvalidArgument("fusion components cover different models".into()));
        }
        let mut r = Vec::with_capacity(ids.len());
        for id in &ids {
            let s = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("model {id} missing from a fusion component")))?;
            if s.scores.len() != classes {
                return Err(Error::Shape(format!("{id}: {} scores, expected {classes}", s.scores.len())));
            }
            r.push(match transform {
                ScoreTransform::Raw => s.scores.clone(),
                ScoreTransform::Softmax => softmax(&Tensor::from_vec(&[1, classes], s.scores.clone())?).data,
            });
        }
        rows.push(r);
    }
    Ok(Aligned { ids, rows, classes })
}

fn predict(a: &Aligned, weights: &[f64]) -> Vec<usize> {
    let mut fused = vec![0.0; a.classes];
    (0..a.ids.len())
        .map(|m| {
            fused.iter_mut().for_each(|v| *v = 0.0);
            for (c, w) in a.rows.iter().zip(weights) {
                for (f, s) in fused.iter_mut().zip(&c[m]) {
                    *f += w * s;
                }
            }
            argmax(&fused)
        })
        .collect()
}

/// Predicted class per model (sorted by model id) from the weighted sum of
/// component scores.
pub fn fuse_scores(
    components: &[Vec<ClassScores>],
    weights: &FusionWeights,
    transform: ScoreTransform,
) -> Result<Vec<(String, usize)>> {
    weights.validate()?;
    if weights.weights.len() != components.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} components",
            weights.weights.len(),
            components.len()
        )));
    }
    let a = align(components, transform)?;
    let preds = predict(&a, &weights.weights);
    Ok(a.ids.into_iter().zip(preds).collect())
}

/// All ways to split `n` units over `m` parts, first part descending.
fn compositions(n: usize, m: usize) -> Vec<Vec<usize>> {
    if m == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in (0..=n).rev() {
        for mut rest in compositions(n - first, m - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Exhaustive search over the simplex grid with spacing `step` for the
/// weights maximizing validation average per-class accuracy. Ties go to the
/// weight vector closest to uniform, then to the earliest grid point.
pub fn fit_fusion_weights(
    names: &[String],
    components: &[Vec<ClassScores>],
    labels: &BTreeMap<String, usize>,
    classes: usize,
    step: f64,
    transform: ScoreTransform,
) -> Result<(FusionWeights, f64)> {
    if names.len() != components.len() {
        return Err(Error::InvalidArgument("component names do not match score sets".into()));
    }
    let units = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || (units * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("grid step {step} must divide 1")));
    }
    let a = align(components, transform)?;
    if a.classes != classes {
        return Err(Error::Shape(format!("scores have {} classes, expected {classes}", a.classes)));
    }
    let truth: Vec<usize> = a
        .ids
        .iter()
        .map(|id| labels.get(id).copied().ok_or_else(|| Error::Dataset(format!("no label for {id}"))))
        .collect::<Result<_>>()?;
    let n = units as usize;
    let m = components.len();
    let mut best: Option<(f64, i64, Vec<usize>)> = None;
    for grid in compositions(n, m) {
        let w: Vec<f64> = grid.iter().map(|&k| k as f64 / n as f64).collect();
        let metric = average_per_class_accuracy(&confusion_matrix(&predict(&a, &w), &truth, classes)?);
        let spread: i64 = grid.iter().map(|&k| (k as i64 * m as i64 - n as i64).pow(2)).sum();
        let better = match &best {
            None => true,
            Some((bm, bs, _)) => metric > *bm || (metric == *bm && spread < *bs),
        };
        if better {
            best = Some((metric, spread, grid));
        }
    }
    let (metric, _, grid) = best.expect("grid is never empty");
    let weights =
        FusionWeights { components: names.to_vec(), weights: grid.iter().map(|&k| k as f64 / n as f64).collect() };
    Ok((weights, metric))
}

//! Multi-view evaluation and the average per-class accuracy metric.

use serde::{Deserialize, Serialize};

use super::cache::SampleSet;
use crate::error::{Error, Result};
use crate::models::{forward_multiview_batch, ClassScores};
use crate::nn::{Network, Tensor};

/// Index of the largest value, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `confusion[true][predicted]`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Shape(format!("class index out of range for {classes} classes")));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Within-class accuracy; None for classes without samples.
pub fn per_class_accuracy(confusion: &[Vec<usize>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect()
}

/// Mean of the within-class accuracies over classes that have samples.
pub fn average_per_class_accuracy(confusion: &[Vec<usize>]) -> f64 {
    let accs: Vec<f64> = per_class_accuracy(confusion).into_iter().flatten().collect();
    if accs.is_empty() {
        0.0
    } else {
        accs.iter().sum::<f64>() / accs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub network: String,
    /// Views (or orientations) pooled per model; several for fused results.
    pub views: Vec<usize>,
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<Option<f64>>,
    pub metric: f64,
}

impl EvalSummary {
    pub fn from_predictions(
        network: &str,
        views: Vec<usize>,
        classes: &[String],
        predictions: &[usize],
        labels: &[usize],
    ) -> Result<Self> {
        let confusion = confusion_matrix(predictions, labels, classes.len())?;
        Ok(EvalSummary {
            network: network.into(),
            views,
            classes: classes.to_vec(),
            per_class: per_class_accuracy(&confusion),
            metric: average_per_class_accuracy(&confusion),
            confusion,
        })
    }

    pub fn per_class_table(&self) -> String {
        let mut out = format!("{:<20} {:>8} {:>9}\n", "class", "models", "accuracy");
        for (i, c) in self.classes.iter().enumerate() {
            let total: usize = self.confusion[i].iter().sum();
            let acc = self.per_class[i].map_or("-".to_string(), |a| format!("{:.4}", a));
            out += &format!("{:<20} {:>8} {:>9}\n", c, total, acc);
        }
        out += &format!("average per-class accuracy {:.4}\n", self.metric);
        out
    }
}

pub struct Evaluation {
    pub summary: EvalSummary,
    pub scores: Vec<ClassScores>,
}

/// Pools every model's views through the network (dropout off) and scores
/// the argmax predictions.
pub fn evaluate(net: &mut Network<f32>, samples: &SampleSet, classes: &[String], network: &str) -> Result<Evaluation> {
    if net.input_shape() != samples.item_shape.as_slice() {
        return Err(Error::Shape(format!(
            "network expects {:?} but cached samples are {:?}",
            net.input_shape(),
            samples.item_shape
        )));
    }
    if net.output_shape() != [classes.len()] {
        return Err(Error::Shape(format!(
            "network has {:?} outputs for {} classes",
            net.output_shape(),
            classes.len()
        )));
    }
    const OBJECTS_PER_BATCH: usize = 4;
    let mut scores = Vec::with_capacity(samples.objects());
    for start in (0..samples.objects()).step_by(OBJECTS_PER_BATCH) {
        let end = (start + OBJECTS_PER_BATCH).min(samples.objects());
        let mut data = Vec::new();
        for o in start..end {
            data.extend(samples.object_inputs(o));
        }
        let mut shape = vec![(end - start) * samples.per_object];
        shape.extend_from_slice(&samples.item_shape);
        let rows = forward_multiview_batch(net, &Tensor::from_vec(&shape, data)?, samples.per_object)?;
        for (o, row) in (start..end).zip(rows) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("non-finite score for {}", samples.model_ids[o])));
            }
            scores.push(ClassScores { model_id: samples.model_ids[o].clone(), network: network.into(), scores: row });
        }
    }
    let preds: Vec<usize> = scores.iter().map(|s| argmax(&s.scores)).collect();
    let summary = EvalSummary::from_predictions(network, vec![samples.per_object], classes, &preds, &samples.labels)?;
    Ok(Evaluation { summary, scores })
}

/// Every class with test models must also have training models.
pub fn check_label_coverage(train: &SampleSet, test: &SampleSet, classes: &[String]) -> Result<()> {
    for &l in &test.labels {
        if !train.labels.contains(&l) {
            return Err(Error::Dataset(format!("class {} appears in test but not in training", classes[l])));
        }
    }
    Ok(())
}

pub fn scores_to_jsonl(scores: &[ClassScores]) -> String {
    scores.iter().map(|s| serde_json::to_string(s).expect("scores serialize") + "\n").collect()
}

pub fn scores_from_jsonl(text: &str) -> Result<Vec<ClassScores>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

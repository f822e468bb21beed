//! Evaluation metrics: confusion matrix over original class ids, accuracy,
//! per-class precision/recall, and the exact-unlearning verdict.

mod grid;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::nn::{argmax, ModelParameters};

pub use grid::{run_benchmark_grid, CellKind, GridConfig, GridReport, GridRow};

const PREDICT_CHUNK: usize = 512;

/// Anything that maps a dataset to global class predictions.
pub trait Predictor {
    fn predict_dataset(&self, ds: &LabeledDataset) -> Result<Vec<u32>>;
}

impl Predictor for EnsembleModel {
    fn predict_dataset(&self, ds: &LabeledDataset) -> Result<Vec<u32>> {
        EnsembleModel::predict_dataset(self, ds)
    }
}

impl Predictor for ModelParameters<f32> {
    fn predict_dataset(&self, ds: &LabeledDataset) -> Result<Vec<u32>> {
        let all: Vec<usize> = (0..ds.len()).collect();
        let w = self.output_classes().len();
        let mut out = Vec::with_capacity(ds.len());
        for idx in all.chunks(PREDICT_CHUNK) {
            let p = self.forward(&ds.batch(idx))?;
            out.extend(p.data().chunks(w).map(|row| self.output_classes()[argmax(row)]));
        }
        Ok(out)
    }
}

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(labels: &[u32], predictions: &[u32], classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in labels.iter().zip(predictions) {
            if t as usize >= classes || p as usize >= classes {
                return Err(Error::InvalidLabel {
                    label: t.max(p),
                    reason: format!("outside {classes} classes"),
                });
            }
            m.counts[t as usize][p as usize] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Number of samples predicted as `class`.
    pub fn column_sum(&self, class: u32) -> u64 {
        self.counts.iter().map(|r| r[class as usize]).sum()
    }

    /// Number of samples whose true class is `class`.
    pub fn row_sum(&self, class: u32) -> u64 {
        self.counts[class as usize].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.trace() as f64 / t as f64
        }
    }

    /// Undefined (None) when nothing was predicted as `class`.
    pub fn precision(&self, class: u32) -> Option<f64> {
        let col = self.column_sum(class);
        (col > 0).then(|| self.counts[class as usize][class as usize] as f64 / col as f64)
    }

    /// Undefined (None) when `class` has no samples.
    pub fn recall(&self, class: u32) -> Option<f64> {
        let row = self.row_sum(class);
        (row > 0).then(|| self.counts[class as usize][class as usize] as f64 / row as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigTag {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub strategy: String,
    pub replay_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub samples: u64,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_retrain_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<ConfigTag>,
}

impl EvaluationReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let c = confusion.classes() as u32;
        Self {
            accuracy: confusion.accuracy(),
            samples: confusion.total(),
            precision: (0..c).map(|k| confusion.precision(k)).collect(),
            recall: (0..c).map(|k| confusion.recall(k)).collect(),
            confusion,
            train_seconds: None,
            avg_retrain_seconds: None,
            tag: None,
        }
    }
}

/// Metrics of `model` on `ds`, over the dataset's full class inventory.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, ds: &LabeledDataset) -> Result<EvaluationReport> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let predictions = model.predict_dataset(ds)?;
    let m = ConfusionMatrix::from_predictions(ds.labels(), &predictions, ds.num_classes())?;
    Ok(EvaluationReport::from_confusion(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub class: u32,
    pub verdict: Verdict,
    /// Test samples predicted as the removed class.
    pub predicted_as_class: u64,
    pub report: EvaluationReport,
}

/// Pass exactly when no sample of `ds` is predicted as `class`.
pub fn verify_exact<P: Predictor + ?Sized>(model: &P, ds: &LabeledDataset, class: u32) -> Result<Verification> {
    if class as usize >= ds.num_classes() {
        return Err(Error::UnknownClass(class.to_string()));
    }
    let report = evaluate(model, ds)?;
    let predicted_as_class = report.confusion.column_sum(class);
    Ok(Verification {
        class,
        verdict: if predicted_as_class == 0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        predicted_as_class,
        report,
    })
}

/// Highest accuracy reachable on `ds` once `class` can no longer be predicted.
pub fn accuracy_bound_without(ds: &LabeledDataset, class: u32) -> f64 {
    let n = ds.labels().iter().filter(|&&l| l == class).count();
    1.0 - n as f64 / ds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn perfect_predictor_is_diagonal() {
        let labels: Vec<u32> = (0..100).map(|i| (i % 4) as u32).collect();
        let m = ConfusionMatrix::from_predictions(&labels, &labels, 4).unwrap();
        let r = EvaluationReport::from_confusion(m);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.samples, 100);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.confusion.counts[i][j] > 0, i == j);
            }
        }
        assert!(r.precision.iter().all(|p| *p == Some(1.0)));
    }

    #[test]
    fn uniform_random_predictor_near_one_tenth() {
        let mut rng = RngState::new(5).rng();
        let labels: Vec<u32> = (0..10_000).map(|i| (i % 10) as u32).collect();
        let preds: Vec<u32> = (0..10_000).map(|_| (rng.uniform() * 10.0) as u32).collect();
        let m = ConfusionMatrix::from_predictions(&labels, &preds, 10).unwrap();
        // binomial(10000, 0.1): sd = 0.003, so +-0.01 is over three sd
        let sd = (0.1f64 * 0.9 / 10_000.0).sqrt();
        assert!(0.01 > 3.0 * sd);
        assert!((m.accuracy() - 0.1).abs() <= 0.01, "{}", m.accuracy());
        assert_eq!(m.total(), 10_000);
    }

    #[test]
    fn undefined_precision_and_recall() {
        let m = ConfusionMatrix::from_predictions(&[0, 0, 1], &[0, 0, 0], 3).unwrap();
        assert_eq!(m.precision(1), None);
        assert_eq!(m.recall(2), None);
        assert_eq!(m.recall(1), Some(0.0));
        assert_eq!(m.precision(0), Some(2.0 / 3.0));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(ConfusionMatrix::from_predictions(&[0, 1], &[0], 2).is_err());
        assert!(ConfusionMatrix::from_predictions(&[0], &[5], 2).is_err());
    }
}

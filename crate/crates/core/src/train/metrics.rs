//! Accuracy and macro-averaged F1 from a confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Invalid(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Invalid(format!(
                    "class index {} outside 0..{classes}",
                    t.max(p)
                )));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.counts.len()).map(|c| self.counts[c][c]).sum()
    }

    /// F1 of one class; zero when the class is neither present nor predicted.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class];
        let fp: usize = (0..self.counts.len())
            .filter(|&t| t != class)
            .map(|t| self.counts[t][class])
            .sum();
        let fn_: usize = (0..self.counts.len())
            .filter(|&p| p != class)
            .map(|p| self.counts[class][p])
            .sum();
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::Invalid(
                "cannot score an empty prediction set".into(),
            ));
        }
        let classes = confusion.counts.len();
        let macro_f1 = (0..classes).map(|c| confusion.f1(c)).sum::<f64>() / classes as f64;
        Ok(Metrics {
            accuracy: confusion.correct() as f64 / total as f64,
            macro_f1,
            confusion,
        })
    }

    pub fn compute(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        Metrics::from_confusion(ConfusionMatrix::new(truth, predicted, classes)?)
    }
}

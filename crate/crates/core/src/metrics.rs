//! Confusion matrix and the mIoU / total accuracy / average accuracy scores.

use serde::{Deserialize, Serialize};

use crate::data::{SemanticImage, VOID};
use crate::error::{invalid, Error, Result};

/// Pixel counts; rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    /// `None` when the class never occurs in either prediction or ground truth.
    pub iou: Option<f64>,
    /// `None` when the class has no ground-truth pixels.
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub miou: f64,
    pub total_acc: f64,
    pub avg_acc: f64,
    pub per_class: Vec<ClassScore>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every pixel whose ground truth is not void.
    pub fn accumulate(&mut self, pred: &SemanticImage, gt: &SemanticImage) -> Result<()> {
        if !pred.same_shape(gt) {
            return Err(invalid(format!(
                "prediction {}×{} vs ground truth {}×{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        let c = self.num_classes;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == VOID {
                continue;
            }
            if g as usize >= c || p as usize >= c {
                return Err(invalid(format!("label pair ({g}, {p}) outside {c} classes")));
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Classes absent from both rows and columns are left out of the means;
    /// average accuracy is the mean recall over classes with ground truth.
    pub fn scores(&self) -> Result<Scores> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("confusion matrix is empty".into()));
        }
        let c = self.num_classes;
        let mut per_class = Vec::new();
        let (mut iou_sum, mut iou_n, mut rec_sum, mut rec_n, mut trace) = (0.0, 0, 0.0, 0, 0);
        for k in 0..c {
            let diag = self.get(k, k);
            let row: u64 = (0..c).map(|j| self.get(k, j)).sum();
            let col: u64 = (0..c).map(|j| self.get(j, k)).sum();
            trace += diag;
            let union = row + col - diag;
            let iou = (union > 0).then(|| diag as f64 / union as f64);
            let recall = (row > 0).then(|| diag as f64 / row as f64);
            if let Some(v) = iou {
                iou_sum += v;
                iou_n += 1;
            }
            if let Some(v) = recall {
                rec_sum += v;
                rec_n += 1;
            }
            if union > 0 {
                per_class.push(ClassScore {
                    class: k,
                    iou,
                    recall,
                    support: row,
                });
            }
        }
        Ok(Scores {
            miou: iou_sum / iou_n as f64,
            total_acc: trace as f64 / total as f64,
            avg_acc: rec_sum / rec_n as f64,
            per_class,
        })
    }
}

//! Confusion-matrix accumulation, mean IoU and pixel accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMap, IGNORE_LABEL};

/// `K x K` counts; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::shape(
                "confusion matrix",
                format!("{} counts for {num_classes} classes", counts.len()),
            ));
        }
        Ok(ConfusionMatrix { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one pixel per non-ignored ground-truth label. The matrix is left
    /// untouched when any label is out of range.
    pub fn accumulate_slices(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(
                "accumulate",
                format!("{} predictions vs {} labels", pred.len(), gt.len()),
            ));
        }
        let k = self.num_classes;
        for (&p, &g) in pred.iter().zip(gt) {
            if p as usize >= k {
                return Err(Error::LabelOutOfRange {
                    label: p,
                    num_classes: k,
                });
            }
            if g != IGNORE_LABEL && g as usize >= k {
                return Err(Error::LabelOutOfRange {
                    label: g,
                    num_classes: k,
                });
            }
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g != IGNORE_LABEL {
                self.counts[g as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::shape(
                "accumulate",
                format!(
                    "prediction {}x{} vs ground truth {}x{}",
                    pred.width, pred.height, gt.width, gt.height
                ),
            ));
        }
        self.accumulate_slices(&pred.data, &gt.data)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape(
                "merge",
                format!("{} vs {} classes", self.num_classes, other.num_classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Empty("confusion matrix"));
        }
        let trace: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }

    /// IoU of every class; `None` where the class is absent from both ground
    /// truth and predictions.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..k).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..k).map(|g| self.get(g, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes present in ground truth or predictions.
    pub fn mean_iou(&self) -> Result<f64> {
        let present: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::Empty("confusion matrix"));
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    pub fn report(&self) -> Result<MetricsReport> {
        Ok(MetricsReport {
            mean_iou: self.mean_iou()?,
            pixel_accuracy: self.pixel_accuracy()?,
            class_iou: self.class_iou(),
            scored_pixels: self.total(),
            num_classes: self.num_classes,
            confusion: self.counts.clone(),
        })
    }
}

/// Evaluation summary written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_iou: f64,
    pub pixel_accuracy: f64,
    /// `null` for classes absent from both ground truth and predictions.
    pub class_iou: Vec<Option<f64>>,
    pub scored_pixels: u64,
    pub num_classes: usize,
    /// Row-major counts, rows = ground truth.
    pub confusion: Vec<u64>,
}

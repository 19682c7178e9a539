//! Training loss and evaluation metrics.

mod loss;
mod metrics;

pub use loss::{dice_ce_loss, seg_loss, DICE_EPS};
pub use metrics::{
    case_metrics, extract_boundary, hd95, hd95_penalty, overlap_metrics, p95_rank, CaseClassMetrics, ClassOverlap, ClassReport,
    EmptyFlag, Hd95, MeanReport, MetricsReport,
};

use crate::error::{Error, Result};

/// Integer class map with pixel spacing in mm (row, column).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMask {
    pub h: usize,
    pub w: usize,
    pub classes: Vec<u8>,
    pub spacing: (f64, f64),
}

impl LabelMask {
    pub fn new(h: usize, w: usize, classes: Vec<u8>) -> Result<Self> {
        Self::with_spacing(h, w, classes, (1.0, 1.0))
    }

    pub fn with_spacing(h: usize, w: usize, classes: Vec<u8>, spacing: (f64, f64)) -> Result<Self> {
        if h == 0 || w == 0 || classes.len() != h * w {
            return Err(Error::shape("label_mask", format!("{} labels for {h}x{w}", classes.len())));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0 && spacing.0.is_finite() && spacing.1.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing {spacing:?} must be positive")));
        }
        Ok(LabelMask { h, w, classes, spacing })
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.classes.iter().find(|&&c| c as usize >= num_classes) {
            Some(c) => Err(Error::InvalidArgument(format!("class id {c} out of range for {num_classes} classes"))),
            None => Ok(()),
        }
    }

    /// Keeps the top-left label of every `factor x factor` block; spacing scales up.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.h % factor != 0 || self.w % factor != 0 {
            return Err(Error::shape("downsample", format!("{}x{} not divisible by {factor}", self.h, self.w)));
        }
        let (h, w) = (self.h / factor, self.w / factor);
        let classes = (0..h * w).map(|i| self.classes[(i / w) * factor * self.w + (i % w) * factor]).collect();
        Ok(LabelMask { h, w, classes, spacing: (self.spacing.0 * factor as f64, self.spacing.1 * factor as f64) })
    }

    pub fn binary(&self, class: u8) -> Vec<bool> {
        self.classes.iter().map(|&c| c == class).collect()
    }
}

//! Confusion-matrix segmentation metrics.
//!
//! Classes with no ground-truth pixels are left out of every class mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{LabelMap, HAND, NUM_CLASSES, OBJECT};

/// `counts[gt][pred]` pixel counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pair(pred: &LabelMap, gt: &LabelMap) -> Result<Self> {
        let mut cm = Self::new();
        cm.accumulate(pred, gt)?;
        Ok(cm)
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(Error::invalid(
                "accumulate",
                format!(
                    "prediction is {}×{} but ground truth is {}×{}",
                    pred.width(),
                    pred.height(),
                    gt.width(),
                    gt.height()
                ),
            ));
        }
        for (&p, &g) in pred.classes().iter().zip(gt.classes()) {
            self.counts[g as usize][p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn gt_count(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn pred_count(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..NUM_CLASSES).all(|g| (0..NUM_CLASSES).all(|p| g == p || self.counts[g][p] == 0))
    }

    fn non_empty(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::invalid("metrics", "confusion matrix is empty")),
            t => Ok(t as f64),
        }
    }

    fn present(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_CLASSES).filter(|&c| self.gt_count(c) > 0)
    }

    /// Intersection over union of one class, `None` when absent from the
    /// ground truth.
    pub fn class_iu(&self, class: usize) -> Option<f64> {
        let row = self.gt_count(class);
        if row == 0 {
            return None;
        }
        let diag = self.counts[class][class];
        Some(diag as f64 / (row + self.pred_count(class) - diag) as f64)
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.non_empty()?;
        let diag: u64 = (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum();
        Ok(diag as f64 / total)
    }

    pub fn mean_accuracy(&self) -> Result<f64> {
        self.non_empty()?;
        let accs: Vec<f64> = self
            .present()
            .map(|c| self.counts[c][c] as f64 / self.gt_count(c) as f64)
            .collect();
        Ok(accs.iter().sum::<f64>() / accs.len() as f64)
    }

    pub fn mean_iu(&self) -> Result<f64> {
        self.non_empty()?;
        let ius: Vec<f64> = self.present().filter_map(|c| self.class_iu(c)).collect();
        Ok(ius.iter().sum::<f64>() / ius.len() as f64)
    }

    pub fn fw_iu(&self) -> Result<f64> {
        let total = self.non_empty()?;
        Ok(self
            .present()
            .map(|c| self.gt_count(c) as f64 * self.class_iu(c).unwrap_or(0.0))
            .sum::<f64>()
            / total)
    }

    /// Mean IU over the hand and object classes only.
    pub fn hand_object_mean_iou(&self) -> Result<f64> {
        let ius: Vec<f64> = [HAND, OBJECT].iter().filter_map(|&c| self.class_iu(c as usize)).collect();
        if ius.is_empty() {
            return Err(Error::invalid(
                "hand_object_mean_iou",
                "neither hand nor object appears in the ground truth",
            ));
        }
        Ok(ius.iter().sum::<f64>() / ius.len() as f64)
    }

    pub fn report(&self, frames: usize) -> Result<EvalReport> {
        Ok(EvalReport {
            frames,
            pixels: self.total(),
            pixel_accuracy: self.pixel_accuracy()?,
            mean_accuracy: self.mean_accuracy()?,
            mean_iu: self.mean_iu()?,
            fw_iu: self.fw_iu()?,
            hand_object_mean_iou: self.hand_object_mean_iou().ok(),
            class_iu: [0, 1, 2].map(|c| self.class_iu(c)),
            confusion: *self,
        })
    }
}

/// Evaluation summary over a set of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub pixels: u64,
    pub pixel_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iu: f64,
    pub fw_iu: f64,
    pub hand_object_mean_iou: Option<f64>,
    pub class_iu: [Option<f64>; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// Human-readable report with percentages to two decimals.
    pub fn to_text(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), pct);
        let mut s = String::new();
        s.push_str(&format!("frames = {}\n", self.frames));
        s.push_str(&format!("pixels = {}\n", self.pixels));
        s.push_str(&format!("mean_iou = {}\n", opt(self.hand_object_mean_iou)));
        s.push_str(&format!("pixel_accuracy = {}\n", pct(self.pixel_accuracy)));
        s.push_str(&format!("mean_accuracy = {}\n", pct(self.mean_accuracy)));
        s.push_str(&format!("mean_iu = {}\n", pct(self.mean_iu)));
        s.push_str(&format!("fw_iu = {}\n", pct(self.fw_iu)));
        for (name, iu) in ["background", "hand", "object"].iter().zip(self.class_iu) {
            s.push_str(&format!("iu_{name} = {}\n", opt(iu)));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::BACKGROUND;

    fn labels(w: usize, h: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn accumulate_basic() {
        let a = LabelMap::filled(5, 2, HAND);
        let cm = ConfusionMatrix::from_pair(&a, &a).unwrap();
        assert_eq!(cm.counts[1][1], 10);
        assert_eq!(cm.total(), 10);

        let zero = LabelMap::filled(5, 2, BACKGROUND);
        let cm = ConfusionMatrix::from_pair(&zero, &a).unwrap();
        assert_eq!(cm.counts[1][0], 10);
        assert_eq!(cm.total(), 10);

        assert!(ConfusionMatrix::from_pair(&zero, &LabelMap::filled(2, 5, HAND)).is_err());
    }

    #[test]
    fn perfect_prediction_is_one() {
        let gt = labels(3, 2, &[0, 1, 2, 2, 1, 0]);
        let cm = ConfusionMatrix::from_pair(&gt, &gt).unwrap();
        for v in [cm.pixel_accuracy(), cm.mean_accuracy(), cm.mean_iu(), cm.fw_iu(), cm.hand_object_mean_iou()] {
            assert_eq!(v.unwrap(), 1.0);
        }
        assert!(cm.is_diagonal());
    }

    #[test]
    fn one_class_swallowed_by_another() {
        // gt: 4 hand + 4 object; pred calls everything hand.
        let gt = labels(4, 2, &[1, 1, 1, 1, 2, 2, 2, 2]);
        let pred = LabelMap::filled(4, 2, HAND);
        let cm = ConfusionMatrix::from_pair(&pred, &gt).unwrap();
        assert_eq!(cm.pixel_accuracy().unwrap(), 0.5);
        assert_eq!(cm.mean_accuracy().unwrap(), 0.5);
        // hand IU = 4 / (4 + 8 − 4) = 0.5, object IU = 0.
        assert_eq!(cm.mean_iu().unwrap(), 0.25);
        assert_eq!(cm.fw_iu().unwrap(), 0.25);
        assert_eq!(cm.hand_object_mean_iou().unwrap(), 0.25);
    }

    #[test]
    fn absent_object_is_excluded() {
        let gt = labels(2, 2, &[0, 1, 1, 0]);
        let cm = ConfusionMatrix::from_pair(&gt, &gt).unwrap();
        assert_eq!(cm.class_iu(2), None);
        assert_eq!(cm.hand_object_mean_iou().unwrap(), 1.0);
    }

    #[test]
    fn hand_object_iou_hand_computed() {
        let gt = labels(4, 4, &[0, 0, 1, 1, 0, 1, 1, 1, 2, 2, 1, 0, 2, 2, 2, 0]);
        let pr = labels(4, 4, &[0, 1, 1, 1, 0, 1, 2, 1, 2, 2, 1, 0, 0, 2, 2, 2]);
        let cm = ConfusionMatrix::from_pair(&pr, &gt).unwrap();
        // hand: gt 6, pred 6, both 5 → 5/7; object: gt 5, pred 6, both 4 → 4/7.
        let expect = (5.0 / 7.0 + 4.0 / 7.0) / 2.0;
        assert!((cm.hand_object_mean_iou().unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_errors() {
        let cm = ConfusionMatrix::new();
        assert!(cm.pixel_accuracy().is_err());
        assert!(cm.mean_iu().is_err());
        let bg = LabelMap::filled(2, 2, BACKGROUND);
        let cm = ConfusionMatrix::from_pair(&bg, &bg).unwrap();
        assert!(cm.hand_object_mean_iou().is_err());
    }

    #[test]
    fn report_text_has_two_decimals() {
        let gt = labels(2, 2, &[0, 1, 2, 1]);
        let text = ConfusionMatrix::from_pair(&gt, &gt).unwrap().report(1).unwrap().to_text();
        assert!(text.contains("mean_iou = 100.00"));
        assert!(text.contains("pixel_accuracy = 100.00"));
        assert!(text.contains("fw_iu = 100.00"));
    }
}

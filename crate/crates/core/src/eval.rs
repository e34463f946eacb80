//! Confusion-matrix accumulation, per-class IoU / mIoU, and classification
//! accuracy. Per-class IoU is `TP / (TP + FP + FN)`; classes absent from both
//! prediction and ground truth are reported as undefined and excluded from
//! the mean (PASCAL VOC convention).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// C x C pixel counts; entry `(i, j)` counts pixels with ground truth `i`
/// predicted as `j`. Merging matrices is plain addition, so per-image
/// matrices can be computed in parallel and combined in any grouping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_count: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_count: usize) -> Self {
        ConfusionMatrix {
            class_count,
            counts: vec![0; class_count * class_count],
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.class_count + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.class_count() != self.class_count || gt.class_count() != self.class_count {
            return Err(Error::Dimension(format!(
                "confusion matrix over {} classes, maps have {} and {}",
                self.class_count,
                gt.class_count(),
                pred.class_count()
            )));
        }
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::Dimension(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        for (p, g) in pred.classes().iter().zip(gt.classes()) {
            self.counts[*g as usize * self.class_count + *p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_count != self.class_count {
            return Err(Error::Dimension(format!(
                "merging {}-class into {}-class matrix",
                other.class_count, self.class_count
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
        Ok(())
    }

    /// Per-class IoU (`None` where TP+FP+FN is zero) and the mean over the
    /// defined classes. Errors if every class is undefined.
    pub fn iou(&self) -> Result<IouReport> {
        let c = self.class_count;
        let mut per_class = Vec::with_capacity(c);
        for k in 0..c {
            let tp = self.count(k, k);
            let row: u64 = (0..c).map(|j| self.count(k, j)).sum();
            let col: u64 = (0..c).map(|i| self.count(i, k)).sum();
            let denom = row + col - tp;
            per_class.push(if denom == 0 {
                None
            } else {
                Some(tp as f64 / denom as f64)
            });
        }
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::Evaluation("every class undefined".into()));
        }
        let miou = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(IouReport { per_class, miou })
    }

    /// Mean IoU over the listed classes only, skipping undefined ones.
    pub fn subset_miou(&self, classes: &[usize]) -> Result<f64> {
        let report = self.iou()?;
        let mut vals = Vec::new();
        for &k in classes {
            if k >= self.class_count {
                return Err(Error::Config(format!(
                    "subset class {k} outside [0, {})",
                    self.class_count
                )));
            }
            if let Some(v) = report.per_class[k] {
                vals.push(v);
            }
        }
        if vals.is_empty() {
            return Err(Error::Evaluation("every subset class undefined".into()));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Fraction of correctly classified pixels/samples.
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Evaluation("accuracy of an empty matrix".into()));
        }
        let hits: u64 = (0..self.class_count).map(|k| self.count(k, k)).sum();
        Ok(hits as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// JSON summary shape for eval outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IouSummary {
    pub miou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_miou: Option<f64>,
    /// Class index -> IoU; undefined classes are omitted.
    pub per_class: BTreeMap<usize, f64>,
}

impl IouSummary {
    pub fn from_matrix(cm: &ConfusionMatrix, subset: Option<&[usize]>) -> Result<Self> {
        let report = cm.iou()?;
        let subset_miou = match subset {
            Some(s) => Some(cm.subset_miou(s)?),
            None => None,
        };
        let per_class = report
            .per_class
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect();
        Ok(IouSummary {
            miou: report.miou,
            subset_miou,
            per_class,
        })
    }
}

/// `class,iou` rows; undefined classes print `undefined`.
pub fn iou_csv(report: &IouReport) -> String {
    let mut out = String::from("class,iou\n");
    for (k, v) in report.per_class.iter().enumerate() {
        match v {
            Some(v) => writeln!(out, "{k},{v:.6}").expect("string write"),
            None => writeln!(out, "{k},undefined").expect("string write"),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, vals: &[u32]) -> LabelMap {
        LabelMap::new(c, 1, vals.len(), vals.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let mut cm = ConfusionMatrix::new(3);
        let gt = map(3, &[0, 1, 2, 1]);
        cm.accumulate(&gt, &gt).unwrap();
        let r = cm.iou().unwrap();
        assert_eq!(r.miou, 1.0);
        for v in r.per_class.iter().flatten() {
            assert_eq!(*v, 1.0);
        }
        assert_eq!(cm.accuracy().unwrap(), 1.0);
    }

    #[test]
    fn hand_counted_case() {
        // gt = [0,0,1,1], pred = [0,0,0,0]:
        // class 0: TP=2, FP=2, FN=0 -> 0.5; class 1: TP=0 -> 0; mIoU 0.25
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&map(2, &[0, 0, 0, 0]), &map(2, &[0, 0, 1, 1])).unwrap();
        let r = cm.iou().unwrap();
        assert_eq!(r.per_class[0], Some(0.5));
        assert_eq!(r.per_class[1], Some(0.0));
        assert_eq!(r.miou, 0.25);
    }

    #[test]
    fn accumulation_is_additive() {
        let gt1 = map(3, &[0, 1]);
        let pr1 = map(3, &[0, 2]);
        let gt2 = map(3, &[2, 2]);
        let pr2 = map(3, &[2, 1]);

        let mut separate = ConfusionMatrix::new(3);
        separate.accumulate(&pr1, &gt1).unwrap();
        separate.accumulate(&pr2, &gt2).unwrap();

        let mut concat = ConfusionMatrix::new(3);
        concat
            .accumulate(&map(3, &[0, 2, 2, 1]), &map(3, &[0, 1, 2, 2]))
            .unwrap();
        assert_eq!(separate, concat);

        let mut merged = ConfusionMatrix::new(3);
        let mut a = ConfusionMatrix::new(3);
        a.accumulate(&pr1, &gt1).unwrap();
        let mut b = ConfusionMatrix::new(3);
        b.accumulate(&pr2, &gt2).unwrap();
        merged.merge(&a).unwrap();
        merged.merge(&b).unwrap();
        assert_eq!(merged, separate);
    }

    #[test]
    fn absent_class_is_undefined_not_zero() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&map(3, &[0, 1]), &map(3, &[0, 1])).unwrap();
        let r = cm.iou().unwrap();
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn empty_matrix_is_evaluation_error() {
        let cm = ConfusionMatrix::new(2);
        assert!(matches!(cm.iou(), Err(Error::Evaluation(_))));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut cm = ConfusionMatrix::new(2);
        let a = LabelMap::new(2, 1, 2, vec![0, 1]).unwrap();
        let b = LabelMap::new(2, 2, 1, vec![0, 1]).unwrap();
        assert!(matches!(cm.accumulate(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn relabeling_symmetry() {
        // Swapping labels 0<->1 in both maps permutes per-class IoU.
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&map(2, &[0, 0, 1, 0]), &map(2, &[0, 1, 1, 1])).unwrap();
        let r = cm.iou().unwrap();
        let mut swapped = ConfusionMatrix::new(2);
        swapped
            .accumulate(&map(2, &[1, 1, 0, 1]), &map(2, &[1, 0, 0, 0]))
            .unwrap();
        let rs = swapped.iou().unwrap();
        assert_eq!(r.per_class[0], rs.per_class[1]);
        assert_eq!(r.per_class[1], rs.per_class[0]);
        assert_eq!(r.miou, rs.miou);
    }

    #[test]
    fn subset_miou_uses_listed_classes_only() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&map(3, &[0, 0, 1, 2]), &map(3, &[0, 1, 1, 2])).unwrap();
        // class 0: TP=1 FP=1 FN=0 -> 0.5; class 1: TP=1 FP=0 FN=1 -> 0.5; class 2 -> 1.0
        let all = cm.iou().unwrap().miou;
        assert!((all - (0.5 + 0.5 + 1.0) / 3.0).abs() < 1e-12);
        let sub = cm.subset_miou(&[0, 2]).unwrap();
        assert!((sub - 0.75).abs() < 1e-12);
    }

    #[test]
    fn csv_shape() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&map(3, &[0, 1]), &map(3, &[0, 1])).unwrap();
        let csv = iou_csv(&cm.iou().unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,iou");
        assert_eq!(lines[1], "0,1.000000");
        assert_eq!(lines[3], "2,undefined");
    }
}

//! Per-pixel map types: soft segmentation maps, one-hot/integer label maps,
//! and Shannon entropy maps.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance on a pixel's class-probability sum.
pub const PROB_SUM_TOL: f32 = 1e-5;

/// Soft segmentation map: tensor `[C,H,W]` where each pixel's class vector is
/// a discrete distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    t: Tensor,
}

impl ProbMap {
    pub fn new(t: Tensor) -> Result<Self> {
        let [c, h, w] = t.shape() else {
            return Err(Error::Dimension(format!(
                "ProbMap expects [C,H,W], got {:?}",
                t.shape()
            )));
        };
        let (c, hw) = (*c, h * w);
        let data = t.data();
        for px in 0..hw {
            let mut sum = 0.0f32;
            for ch in 0..c {
                let v = data[ch * hw + px];
                if v < 0.0 {
                    return Err(Error::Numeric(format!(
                        "ProbMap entry {v} < 0 at pixel {px}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::Numeric(format!(
                    "ProbMap pixel {px} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ProbMap { t })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.t
    }

    pub fn into_tensor(self) -> Tensor {
        self.t
    }

    pub fn class_count(&self) -> usize {
        self.t.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.t.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.t.shape()[2]
    }

    /// Per-pixel argmax; ties break toward the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let (c, h, w) = (self.class_count(), self.height(), self.width());
        let hw = h * w;
        let data = self.t.data();
        let mut classes = vec![0u32; hw];
        for px in 0..hw {
            let mut best = 0usize;
            let mut best_v = data[px];
            for ch in 1..c {
                let v = data[ch * hw + px];
                if v > best_v {
                    best_v = v;
                    best = ch;
                }
            }
            classes[px] = best as u32;
        }
        LabelMap {
            class_count: c,
            h,
            w,
            classes,
        }
    }
}

/// Dense label map: one class index in `[0, C)` per pixel. Equivalent to a
/// one-hot `[C,H,W]` tensor, which `to_onehot` materializes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    class_count: usize,
    h: usize,
    w: usize,
    classes: Vec<u32>,
}

impl LabelMap {
    pub fn new(class_count: usize, h: usize, w: usize, classes: Vec<u32>) -> Result<Self> {
        if class_count < 1 {
            return Err(Error::Config("LabelMap needs at least one class".into()));
        }
        if classes.len() != h * w {
            return Err(Error::Dimension(format!(
                "LabelMap {h}x{w} expects {} entries, got {}",
                h * w,
                classes.len()
            )));
        }
        if let Some(bad) = classes.iter().find(|&&v| v as usize >= class_count) {
            return Err(Error::Input(format!(
                "label value {bad} outside [0, {class_count})"
            )));
        }
        Ok(LabelMap {
            class_count,
            h,
            w,
            classes,
        })
    }

    /// Accepts a strict one-hot `[C,H,W]` tensor.
    pub fn from_onehot(t: &Tensor) -> Result<Self> {
        let [c, h, w] = t.shape() else {
            return Err(Error::Dimension(format!(
                "one-hot LabelMap expects [C,H,W], got {:?}",
                t.shape()
            )));
        };
        let (c, hw) = (*c, h * w);
        let data = t.data();
        let mut classes = vec![0u32; hw];
        for px in 0..hw {
            let mut ones = 0;
            for ch in 0..c {
                let v = data[ch * hw + px];
                if v == 1.0 {
                    classes[px] = ch as u32;
                    ones += 1;
                } else if v != 0.0 {
                    return Err(Error::Input(format!(
                        "one-hot entry {v} is neither 0 nor 1"
                    )));
                }
            }
            if ones != 1 {
                return Err(Error::Input(format!(
                    "pixel {px} has {ones} ones in its one-hot vector"
                )));
            }
        }
        Ok(LabelMap {
            class_count: c,
            h: *h,
            w: *w,
            classes,
        })
    }

    pub fn to_onehot(&self) -> Tensor {
        let hw = self.h * self.w;
        let mut data = vec![0.0f32; self.class_count * hw];
        for (px, &cls) in self.classes.iter().enumerate() {
            data[cls as usize * hw + px] = 1.0;
        }
        Tensor::new(vec![self.class_count, self.h, self.w], data)
            .expect("one-hot construction is shape-exact")
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn class_at(&self, y: usize, x: usize) -> usize {
        self.classes[y * self.w + x] as usize
    }

    pub fn present_classes(&self) -> BTreeSet<usize> {
        self.classes.iter().map(|&c| c as usize).collect()
    }

    /// Fraction of pixels carrying class `c`.
    pub fn class_fraction(&self, c: usize) -> f64 {
        let hits = self.classes.iter().filter(|&&v| v as usize == c).count();
        hits as f64 / self.classes.len() as f64
    }
}

/// Per-pixel Shannon entropy (nats) of a [`ProbMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    h: usize,
    w: usize,
    values: Vec<f32>,
}

impl EntropyMap {
    pub fn new(h: usize, w: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::Dimension(format!(
                "EntropyMap {h}x{w} expects {} values, got {}",
                h * w,
                values.len()
            )));
        }
        let mut values = values;
        for v in &mut values {
            if !v.is_finite() || *v < -1e-4 {
                return Err(Error::Numeric(format!("invalid entropy value {v}")));
            }
            // Absorb f32 rounding just below zero.
            *v = v.max(0.0);
        }
        Ok(EntropyMap { h, w, values })
    }

    /// Accepts `[H,W]` or `[1,H,W]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match t.shape() {
            [h, w] => (*h, *w),
            [1, h, w] => (*h, *w),
            s => {
                return Err(Error::Dimension(format!(
                    "EntropyMap expects [H,W] or [1,H,W], got {s:?}"
                )));
            }
        };
        EntropyMap::new(h, w, t.data().to_vec())
    }

    pub fn tensor_1hw(&self) -> Tensor {
        Tensor::new(vec![1, self.h, self.w], self.values.clone())
            .expect("entropy values are finite by construction")
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

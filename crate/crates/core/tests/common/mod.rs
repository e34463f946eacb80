//! Shared test oracles, independent of the library's implementation paths.
//!
//! The gradient oracle reimplements every forward computation in f64 with
//! plain loops (no tape, no shared kernels) so central finite differences on
//! it check the engine's reverse-mode f32 gradients against an independent
//! route.

#![allow(dead_code)]

use entrank::ParameterSet;

pub const PROB_EPS64: f64 = 1e-7;

/// Naive six-loop 3x3 convolution, zero padding 1.
pub fn conv2d64(
    input: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    co: usize,
    stride: usize,
) -> Vec<f64> {
    let oh = (h - 1) / stride + 1;
    let ow = (w - 1) / stride + 1;
    let mut out = vec![0.0f64; co * oh * ow];
    for oc in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..ci {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * stride + ky) as isize - 1;
                            let ix = (ox * stride + kx) as isize - 1;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                acc += weight[((oc * ci + ic) * 3 + ky) * 3 + kx]
                                    * input[(ic * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

pub fn relu64(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub fn leaky_relu64(xs: &mut [f64], slope: f64) {
    for x in xs {
        if *x < 0.0 {
            *x *= slope;
        }
    }
}

pub fn sigmoid64(xs: &mut [f64]) {
    for x in xs {
        *x = 1.0 / (1.0 + (-*x).exp());
    }
}

pub fn softmax_channels64(x: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; c * hw];
    for px in 0..hw {
        let mut max = f64::NEG_INFINITY;
        for ch in 0..c {
            max = max.max(x[ch * hw + px]);
        }
        let mut sum = 0.0;
        for ch in 0..c {
            let e = (x[ch * hw + px] - max).exp();
            out[ch * hw + px] = e;
            sum += e;
        }
        for ch in 0..c {
            out[ch * hw + px] /= sum;
        }
    }
    out
}

/// Per-pixel entropy with the same clamp the engine applies.
pub fn entropy64(probs: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; hw];
    for px in 0..hw {
        let mut acc = 0.0;
        for ch in 0..c {
            let p = probs[ch * hw + px];
            acc -= p * p.max(PROB_EPS64).ln();
        }
        out[px] = acc;
    }
    out
}

/// Pixel-mean cross-entropy against integer labels.
pub fn cross_entropy_mean64(probs: &[f64], labels: &[u32], _c: usize, hw: usize) -> f64 {
    let mut acc = 0.0;
    for px in 0..hw {
        let p = probs[labels[px] as usize * hw + px];
        acc -= p.max(PROB_EPS64).ln();
    }
    acc / hw as f64
}

pub fn disc_loss_mean64(d_src: &[f64], d_tgt: &[f64]) -> f64 {
    let ms = d_src.iter().map(|d| d.max(PROB_EPS64).ln()).sum::<f64>() / d_src.len() as f64;
    let mt = d_tgt
        .iter()
        .map(|d| (1.0 - d).max(PROB_EPS64).ln())
        .sum::<f64>()
        / d_tgt.len() as f64;
    -ms - mt
}

pub fn gen_adv_mean64(d_tgt: &[f64]) -> f64 {
    -d_tgt.iter().map(|d| d.max(PROB_EPS64).ln()).sum::<f64>() / d_tgt.len() as f64
}

/// Matrix [m,k] times vector [k].
pub fn matvec64(a: &[f64], x: &[f64], m: usize, k: usize) -> Vec<f64> {
    (0..m)
        .map(|i| (0..k).map(|p| a[i * k + p] * x[p]).sum())
        .collect()
}

/// Flattens parameter values to f64 in insertion order.
pub fn flatten_params(params: &ParameterSet) -> Vec<f64> {
    let mut out = Vec::new();
    for name in params.names() {
        out.extend(params.value(name).unwrap().data().iter().map(|&v| f64::from(v)));
    }
    out
}

/// Flattens accumulated gradients in the same order as `flatten_params`.
pub fn flatten_grads(params: &ParameterSet) -> Vec<f64> {
    let mut out = Vec::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        out.extend(params.grad(&name).unwrap().iter().map(|&v| f64::from(v)));
    }
    out
}

/// f64 mirror of the segmentation generator: conv3x3/ReLU stack with a
/// channelwise-softmax head, reading a flat parameter vector laid out like
/// the engine's ParameterSet (weight then bias per layer).
pub fn seg_generator64(
    params: &[f64],
    dims: &[(usize, usize)],
    x: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut off = 0;
    let mut cur = x.to_vec();
    for (i, &(ci, co)) in dims.iter().enumerate() {
        let wlen = co * ci * 9;
        let weight = &params[off..off + wlen];
        let bias = &params[off + wlen..off + wlen + co];
        off += wlen + co;
        cur = conv2d64(&cur, ci, h, w, weight, bias, co, 1);
        if i + 1 < dims.len() {
            relu64(&mut cur);
        }
    }
    let c = dims.last().unwrap().1;
    softmax_channels64(&cur, c, h * w)
}

/// f64 mirror of the segmentation discriminator: conv3x3/LeakyReLU(0.2)
/// stack with a per-pixel sigmoid head over a `[1,H,W]` entropy map.
pub fn seg_discriminator64(
    params: &[f64],
    dims: &[(usize, usize)],
    entropy: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut off = 0;
    let mut cur = entropy.to_vec();
    for (i, &(ci, co)) in dims.iter().enumerate() {
        let wlen = co * ci * 9;
        let weight = &params[off..off + wlen];
        let bias = &params[off + wlen..off + wlen + co];
        off += wlen + co;
        cur = conv2d64(&cur, ci, h, w, weight, bias, co, 1);
        if i + 1 < dims.len() {
            leaky_relu64(&mut cur, 0.2);
        }
    }
    sigmoid64(&mut cur);
    cur
}

/// Exact round-half-up of `(num/den) * n` in integer arithmetic — the
/// independent oracle for the split-size contract with decimal lambdas.
pub fn round_half_up_rational(num: u64, den: u64, n: u64) -> u64 {
    (2 * num * n + den) / (2 * den)
}

/// Set-based IoU oracle: per class, intersection and union of pixel index
/// sets; classes with an empty union are undefined.
pub fn set_iou(pred: &[u32], gt: &[u32], class_count: usize) -> (Vec<Option<f64>>, f64) {
    use std::collections::HashSet;
    let mut per_class = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let a: HashSet<usize> = pred
            .iter()
            .enumerate()
            .filter(|(_, &v)| v as usize == c)
            .map(|(i, _)| i)
            .collect();
        let b: HashSet<usize> = gt
            .iter()
            .enumerate()
            .filter(|(_, &v)| v as usize == c)
            .map(|(i, _)| i)
            .collect();
        let union = a.union(&b).count();
        per_class.push(if union == 0 {
            None
        } else {
            Some(a.intersection(&b).count() as f64 / union as f64)
        });
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = defined.iter().sum::<f64>() / defined.len() as f64;
    (per_class, miou)
}

/// Central finite differences of a scalar function.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut grads = Vec::with_capacity(at.len());
    let mut probe = at.to_vec();
    for i in 0..at.len() {
        probe[i] = at[i] + h;
        let up = f(&probe);
        probe[i] = at[i] - h;
        let down = f(&probe);
        probe[i] = at[i];
        grads.push((up - down) / (2.0 * h));
    }
    grads
}

/// Central differences at step `h` and `h/2` with Richardson validation:
/// where the two estimates disagree, an activation kink sits inside the
/// probe interval and finite differences are not a valid oracle for that
/// coordinate. Returns the `h/2` estimates and a validity mask.
pub fn central_diff_validated(
    f: impl Fn(&[f64]) -> f64,
    at: &[f64],
    h: f64,
) -> (Vec<f64>, Vec<bool>) {
    let coarse = central_diff(&f, at, h);
    let fine = central_diff(&f, at, h / 2.0);
    let valid = coarse
        .iter()
        .zip(&fine)
        .map(|(&c, &s)| (c - s).abs() <= 1e-3 * c.abs().max(s.abs()).max(1e-3))
        .collect();
    (fine, valid)
}

/// `grad_agreement` over the valid coordinates only; returns
/// (tight fraction, max rel err, excluded fraction).
pub fn grad_agreement_masked(
    analytic: &[f64],
    oracle: &[f64],
    valid: &[bool],
) -> (f64, f64, f64) {
    assert_eq!(analytic.len(), oracle.len());
    assert_eq!(analytic.len(), valid.len());
    let errs: Vec<f64> = analytic
        .iter()
        .zip(oracle)
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|((&a, &b), _)| rel_err(a, b))
        .collect();
    assert!(!errs.is_empty(), "every coordinate excluded");
    let tight = errs.iter().filter(|&&e| e < 1e-3).count() as f64 / errs.len() as f64;
    let max = errs.iter().cloned().fold(0.0, f64::max);
    let excluded = 1.0 - errs.len() as f64 / analytic.len() as f64;
    (tight, max, excluded)
}

/// Relative error with an absolute floor so near-zero gradients are compared
/// to an absolute tolerance of `1e-3 * floor`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Checks analytic gradients against the oracle and returns
/// (fraction below 1e-3, max error).
pub fn grad_agreement(analytic: &[f64], oracle: &[f64]) -> (f64, f64) {
    assert_eq!(analytic.len(), oracle.len());
    assert!(!analytic.is_empty());
    let errs: Vec<f64> = analytic
        .iter()
        .zip(oracle)
        .map(|(&a, &b)| rel_err(a, b))
        .collect();
    let tight = errs.iter().filter(|&&e| e < 1e-3).count() as f64 / errs.len() as f64;
    let max = errs.iter().cloned().fold(0.0, f64::max);
    (tight, max)
}

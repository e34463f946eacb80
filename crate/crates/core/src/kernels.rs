//! Low-level numeric kernels behind the tape ops.
//!
//! Convolutions are 3x3 with zero padding 1 and stride 1 or 2. The stride-1
//! paths are written as shifted row accumulations over equal-length slice
//! pairs so the inner loops autovectorize.

/// Output spatial size for kernel 3, padding 1.
pub fn conv_out_dim(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// Valid output range along one axis for a given kernel offset `k` (0..3):
/// positions `o` with `o*stride + k - 1` inside `[0, n)`.
fn conv_span(n: usize, out_n: usize, stride: usize, k: usize) -> (usize, usize) {
    let start = usize::from(k == 0); // ceil(1/stride) == 1 for stride 1 or 2
    let end = (((n - k) / stride) + 1).min(out_n);
    (start, end)
}

/// input `[ci, h, w]`, weight `[co, ci, 3, 3]`, bias `[co]` -> `[co, oh, ow]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f32],
    ci: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    bias: &[f32],
    co: usize,
    stride: usize,
) -> Vec<f32> {
    let oh = conv_out_dim(h, stride);
    let ow = conv_out_dim(w, stride);
    let mut out = vec![0.0f32; co * oh * ow];
    for (oc, out_plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        out_plane.fill(bias[oc]);
        for ic in 0..ci {
            let in_plane = &input[ic * h * w..][..h * w];
            for ky in 0..3 {
                let (y0, y1) = conv_span(h, oh, stride, ky);
                for kx in 0..3 {
                    let wv = weight[((oc * ci + ic) * 3 + ky) * 3 + kx];
                    let (x0, x1) = conv_span(w, ow, stride, kx);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * stride + ky - 1;
                        let orow = &mut out_plane[oy * ow + x0..oy * ow + x1];
                        let ix0 = x0 * stride + kx - 1;
                        if stride == 1 {
                            let irow = &in_plane[iy * w + ix0..][..x1 - x0];
                            for (o, i) in orow.iter_mut().zip(irow) {
                                *o += wv * *i;
                            }
                        } else {
                            let irow = &in_plane[iy * w..][..w];
                            for (j, o) in orow.iter_mut().enumerate() {
                                *o += wv * irow[ix0 + j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv2d` w.r.t. input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f32],
    ci: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    co: usize,
    stride: usize,
    d_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let oh = conv_out_dim(h, stride);
    let ow = conv_out_dim(w, stride);
    let mut d_input = vec![0.0f32; ci * h * w];
    let mut d_weight = vec![0.0f32; co * ci * 9];
    let mut d_bias = vec![0.0f32; co];

    for oc in 0..co {
        let d_plane = &d_out[oc * oh * ow..][..oh * ow];
        d_bias[oc] = d_plane.iter().sum();
        for ic in 0..ci {
            let in_plane = &input[ic * h * w..][..h * w];
            let di_plane = &mut d_input[ic * h * w..][..h * w];
            for ky in 0..3 {
                let (y0, y1) = conv_span(h, oh, stride, ky);
                for kx in 0..3 {
                    let wv = weight[((oc * ci + ic) * 3 + ky) * 3 + kx];
                    let (x0, x1) = conv_span(w, ow, stride, kx);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut dw = 0.0f32;
                    for oy in y0..y1 {
                        let iy = oy * stride + ky - 1;
                        let drow = &d_plane[oy * ow + x0..oy * ow + x1];
                        let ix0 = x0 * stride + kx - 1;
                        if stride == 1 {
                            let irow = &in_plane[iy * w + ix0..][..x1 - x0];
                            let dirow = &mut di_plane[iy * w + ix0..][..x1 - x0];
                            for ((d, i), di) in drow.iter().zip(irow).zip(dirow) {
                                dw += *d * *i;
                                *di += wv * *d;
                            }
                        } else {
                            for (j, d) in drow.iter().enumerate() {
                                let ix = ix0 + j * stride;
                                dw += *d * in_plane[iy * w + ix];
                                di_plane[iy * w + ix] += wv * *d;
                            }
                        }
                    }
                    d_weight[((oc * ci + ic) * 3 + ky) * 3 + kx] = dw;
                }
            }
        }
    }
    (d_input, d_weight, d_bias)
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..][..n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * *bv;
            }
        }
    }
    c
}

/// Gradients of `matmul`: `dA = dC B^T`, `dB = A^T dC`.
pub fn matmul_backward(
    a: &[f32],
    b: &[f32],
    m: usize,
    k: usize,
    n: usize,
    d_out: &[f32],
) -> (Vec<f32>, Vec<f32>) {
    let mut da = vec![0.0f32; m * k];
    let mut db = vec![0.0f32; k * n];
    for i in 0..m {
        let drow = &d_out[i * n..][..n];
        for p in 0..k {
            let brow = &b[p * n..][..n];
            da[i * k + p] = drow.iter().zip(brow).map(|(d, bv)| d * bv).sum();
            let av = a[i * k + p];
            let dbrow = &mut db[p * n..][..n];
            for (dbv, d) in dbrow.iter_mut().zip(drow) {
                *dbv += av * *d;
            }
        }
    }
    (da, db)
}

/// Nearest-neighbor x2 upsample of `[c, h, w]`.
pub fn upsample2x(input: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let ip = &input[ch * h * w..][..h * w];
        let op = &mut out[ch * oh * ow..][..oh * ow];
        for y in 0..oh {
            let irow = &ip[(y / 2) * w..][..w];
            let orow = &mut op[y * ow..][..ow];
            for (x, o) in orow.iter_mut().enumerate() {
                *o = irow[x / 2];
            }
        }
    }
    out
}

/// Backward of `upsample2x`: each input cell sums its 2x2 output block.
pub fn upsample2x_backward(d_out: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h * 2, w * 2);
    let mut d_in = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let dp = &d_out[ch * oh * ow..][..oh * ow];
        let dip = &mut d_in[ch * h * w..][..h * w];
        for y in 0..oh {
            let drow = &dp[y * ow..][..ow];
            let dirow = &mut dip[(y / 2) * w..][..w];
            for (x, d) in drow.iter().enumerate() {
                dirow[x / 2] += *d;
            }
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Direct six-loop convolution used as the reference.
    fn conv2d_naive(
        input: &[f32],
        ci: usize,
        h: usize,
        w: usize,
        weight: &[f32],
        bias: &[f32],
        co: usize,
        stride: usize,
    ) -> Vec<f32> {
        let oh = conv_out_dim(h, stride);
        let ow = conv_out_dim(w, stride);
        let mut out = vec![0.0f32; co * oh * ow];
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

    fn randvec(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng::uniform(rng, -1.0, 1.0)).collect()
    }

    #[test]
    fn conv_matches_naive_reference() {
        let mut r = rng::stream(11, "conv");
        for &(ci, co, h, w, stride) in
            &[(1, 1, 5, 5, 1), (3, 4, 8, 6, 1), (2, 3, 7, 7, 2), (4, 2, 8, 8, 2)]
        {
            let input = randvec(&mut r, ci * h * w);
            let weight = randvec(&mut r, co * ci * 9);
            let bias = randvec(&mut r, co);
            let fast = conv2d(&input, ci, h, w, &weight, &bias, co, stride);
            let naive = conv2d_naive(&input, ci, h, w, &weight, &bias, co, stride);
            for (a, b) in fast.iter().zip(&naive) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_kernel_preserves_input() {
        // Center weight 1 per matching channel, all else 0, zero bias.
        let (c, h, w) = (2, 6, 5);
        let mut r = rng::stream(5, "ident");
        let input = randvec(&mut r, c * h * w);
        let mut weight = vec![0.0f32; c * c * 9];
        for ch in 0..c {
            weight[(ch * c + ch) * 9 + 4] = 1.0;
        }
        let out = conv2d(&input, c, h, w, &weight, &vec![0.0; c], c, 1);
        assert_eq!(out, input);
    }

    #[test]
    fn matmul_small_case() {
        // [2,3] x [3,2]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn upsample_blocks() {
        let input = [1.0, 2.0, 3.0, 4.0];
        let out = upsample2x(&input, 1, 2, 2);
        assert_eq!(
            out,
            vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let back = upsample2x_backward(&out, 1, 2, 2);
        assert_eq!(back, vec![4.0, 8.0, 12.0, 16.0]);
    }
}

//! Convolution and normalization kernels on raw slices.
//!
//! Layouts: signals `[batch, channels, length]`, conv weights
//! `[out, in, kernel]`, transposed-conv weights `[in, out, kernel]`.
//! Batch elements are processed in order, and weight gradients are summed
//! in batch order, so results do not depend on scheduling.

use super::real::{matmul_into, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn conv_out_len(len_in: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = len_in + 2 * padding;
        if padded < span {
            None
        } else {
            Some((padded - span) / stride + 1)
        }
    }

    pub fn transposed_out_len(len_in: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        ((len_in.max(1) - 1) * stride + kernel).checked_sub(2 * padding)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col<R: Real>(x: &[R], g: &ConvGeom, cols: &mut [R]) {
    let (k, lo) = (g.kernel, g.len_out);
    for ci in 0..g.c_in {
        let row_x = &x[ci * g.len_in..(ci + 1) * g.len_in];
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * lo..(ci * k + kk + 1) * lo];
            let offset = (kk * g.dilation) as isize - g.padding as isize;
            for (t, c) in row.iter_mut().enumerate() {
                let i = (t * g.stride) as isize + offset;
                *c = if i >= 0 && (i as usize) < g.len_in {
                    row_x[i as usize]
                } else {
                    R::zero()
                };
            }
        }
    }
}

fn col2im_add<R: Real>(cols: &[R], g: &ConvGeom, dx: &mut [R]) {
    let (k, lo) = (g.kernel, g.len_out);
    for ci in 0..g.c_in {
        let row_dx = &mut dx[ci * g.len_in..(ci + 1) * g.len_in];
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * lo..(ci * k + kk + 1) * lo];
            let offset = (kk * g.dilation) as isize - g.padding as isize;
            for (t, c) in row.iter().enumerate() {
                let i = (t * g.stride) as isize + offset;
                if i >= 0 && (i as usize) < g.len_in {
                    row_dx[i as usize] += *c;
                }
            }
        }
    }
}

pub fn conv1d_forward<R: Real>(x: &[R], w: &[R], g: &ConvGeom) -> Vec<R> {
    let ck = g.c_in * g.kernel;
    let mut out = vec![R::zero(); g.batch * g.c_out * g.len_out];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![R::zero(); ck * g.len_out]
    };
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
        let ob = &mut out[b * g.c_out * g.len_out..(b + 1) * g.c_out * g.len_out];
        let src: &[R] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        matmul_into(w, false, src, false, ob, g.c_out, ck, g.len_out, R::zero());
    }
    out
}

/// Returns `(dx, dw)`; either may be skipped.
pub fn conv1d_backward<R: Real>(
    x: &[R],
    w: &[R],
    dout: &[R],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<R>>, Option<Vec<R>>) {
    let ck = g.c_in * g.kernel;
    let mut dx = need_dx.then(|| vec![R::zero(); g.batch * g.c_in * g.len_in]);
    let mut dw = need_dw.then(|| vec![R::zero(); g.c_out * ck]);
    let mut cols = vec![R::zero(); ck * g.len_out];
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
        let db = &dout[b * g.c_out * g.len_out..(b + 1) * g.c_out * g.len_out];
        if let Some(dw) = dw.as_mut() {
            let src: &[R] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols
            };
            matmul_into(db, false, src, true, dw, g.c_out, g.len_out, ck, R::one());
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
            if g.is_pointwise() {
                matmul_into(w, true, db, false, dxb, ck, g.c_out, g.len_out, R::zero());
            } else {
                matmul_into(w, true, db, false, &mut cols, ck, g.c_out, g.len_out, R::zero());
                col2im_add(&cols, g, dxb);
            }
        }
    }
    (dx, dw)
}

/// Scatter of `cols[co*K + k, t]` into `out[co, t*s - p + k]`.
fn tcol2im_add<R: Real>(cols: &[R], g: &ConvGeom, out: &mut [R]) {
    let (k, li) = (g.kernel, g.len_in);
    for co in 0..g.c_out {
        let orow = &mut out[co * g.len_out..(co + 1) * g.len_out];
        for kk in 0..k {
            let row = &cols[(co * k + kk) * li..(co * k + kk + 1) * li];
            for (t, c) in row.iter().enumerate() {
                let i = (t * g.stride + kk) as isize - g.padding as isize;
                if i >= 0 && (i as usize) < g.len_out {
                    orow[i as usize] += *c;
                }
            }
        }
    }
}

fn tim2col<R: Real>(dout: &[R], g: &ConvGeom, cols: &mut [R]) {
    let (k, li) = (g.kernel, g.len_in);
    for co in 0..g.c_out {
        let orow = &dout[co * g.len_out..(co + 1) * g.len_out];
        for kk in 0..k {
            let row = &mut cols[(co * k + kk) * li..(co * k + kk + 1) * li];
            for (t, c) in row.iter_mut().enumerate() {
                let i = (t * g.stride + kk) as isize - g.padding as isize;
                *c = if i >= 0 && (i as usize) < g.len_out {
                    orow[i as usize]
                } else {
                    R::zero()
                };
            }
        }
    }
}

pub fn conv_transpose1d_forward<R: Real>(x: &[R], w: &[R], g: &ConvGeom) -> Vec<R> {
    let ck = g.c_out * g.kernel;
    let mut out = vec![R::zero(); g.batch * g.c_out * g.len_out];
    let mut cols = vec![R::zero(); ck * g.len_in];
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
        matmul_into(w, true, xb, false, &mut cols, ck, g.c_in, g.len_in, R::zero());
        tcol2im_add(&cols, g, &mut out[b * g.c_out * g.len_out..(b + 1) * g.c_out * g.len_out]);
    }
    out
}

pub fn conv_transpose1d_backward<R: Real>(
    x: &[R],
    w: &[R],
    dout: &[R],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<R>>, Option<Vec<R>>) {
    let ck = g.c_out * g.kernel;
    let mut dx = need_dx.then(|| vec![R::zero(); g.batch * g.c_in * g.len_in]);
    let mut dw = need_dw.then(|| vec![R::zero(); g.c_in * ck]);
    let mut cols = vec![R::zero(); ck * g.len_in];
    for b in 0..g.batch {
        tim2col(&dout[b * g.c_out * g.len_out..(b + 1) * g.c_out * g.len_out], g, &mut cols);
        let xb = &x[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
            matmul_into(w, false, &cols, false, dxb, g.c_in, ck, g.len_in, R::zero());
        }
        if let Some(dw) = dw.as_mut() {
            matmul_into(xb, false, &cols, true, dw, g.c_in, g.len_in, ck, R::one());
        }
    }
    (dx, dw)
}

/// Normalizes over axis 1 of `[batch, channels, length]`. Returns the
/// output and the per-position reciprocal standard deviations.
pub fn layer_norm_forward<R: Real>(x: &[R], batch: usize, ch: usize, len: usize, eps: f64) -> (Vec<R>, Vec<R>) {
    let mut out = vec![R::zero(); x.len()];
    let mut rstd = vec![R::zero(); batch * len];
    for b in 0..batch {
        let base = b * ch * len;
        for t in 0..len {
            let mut mean = 0.0f64;
            for c in 0..ch {
                mean += x[base + c * len + t].as_f64();
            }
            mean /= ch as f64;
            let mut var = 0.0f64;
            for c in 0..ch {
                let d = x[base + c * len + t].as_f64() - mean;
                var += d * d;
            }
            var /= ch as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[b * len + t] = R::from_f64(r);
            for c in 0..ch {
                let i = base + c * len + t;
                out[i] = R::from_f64((x[i].as_f64() - mean) * r);
            }
        }
    }
    (out, rstd)
}

pub fn layer_norm_backward<R: Real>(
    y: &[R],
    rstd: &[R],
    dy: &[R],
    batch: usize,
    ch: usize,
    len: usize,
) -> Vec<R> {
    let mut dx = vec![R::zero(); y.len()];
    for b in 0..batch {
        let base = b * ch * len;
        for t in 0..len {
            let (mut mdy, mut mdyy) = (0.0f64, 0.0f64);
            for c in 0..ch {
                let i = base + c * len + t;
                mdy += dy[i].as_f64();
                mdyy += dy[i].as_f64() * y[i].as_f64();
            }
            mdy /= ch as f64;
            mdyy /= ch as f64;
            let r = rstd[b * len + t].as_f64();
            for c in 0..ch {
                let i = base + c * len + t;
                dx[i] = R::from_f64(r * (dy[i].as_f64() - mdy - y[i].as_f64() * mdyy));
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.c_out * g.len_out];
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for t in 0..g.len_out {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for k in 0..g.kernel {
                            let i = (t * g.stride + k * g.dilation) as isize - g.padding as isize;
                            if i >= 0 && (i as usize) < g.len_in {
                                acc += w[(co * g.c_in + ci) * g.kernel + k]
                                    * x[(b * g.c_in + ci) * g.len_in + i as usize];
                            }
                        }
                    }
                    out[(b * g.c_out + co) * g.len_out + t] = acc;
                }
            }
        }
        out
    }

    fn naive_conv_t(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.c_out * g.len_out];
        for b in 0..g.batch {
            for ci in 0..g.c_in {
                for t in 0..g.len_in {
                    for co in 0..g.c_out {
                        for k in 0..g.kernel {
                            let i = (t * g.stride + k) as isize - g.padding as isize;
                            if i >= 0 && (i as usize) < g.len_out {
                                out[(b * g.c_out + co) * g.len_out + i as usize] +=
                                    x[(b * g.c_in + ci) * g.len_in + t] * w[(ci * g.c_out + co) * g.kernel + k];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 * s).sin() * 1.3).round() / 2.0 + 0.1 * i as f64 % 0.7).collect()
    }

    #[test]
    fn conv_matches_naive() {
        for &(k, s, p, d) in &[(3, 1, 1, 1), (5, 2, 2, 1), (3, 1, 2, 2), (1, 1, 0, 1), (4, 3, 0, 1)] {
            let len_in = 11;
            let g = ConvGeom {
                batch: 2,
                c_in: 3,
                c_out: 4,
                len_in,
                len_out: ConvGeom::conv_out_len(len_in, k, s, p, d).unwrap(),
                kernel: k,
                stride: s,
                padding: p,
                dilation: d,
            };
            let x = seq(2 * 3 * len_in, 0.37);
            let w = seq(4 * 3 * k, 0.91);
            let got = conv1d_forward(&x, &w, &g);
            let want = naive_conv(&x, &w, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_matches_naive() {
        for &(k, s, p) in &[(8, 4, 2), (4, 2, 1), (3, 1, 1), (16, 8, 4)] {
            let len_in = 5;
            let g = ConvGeom {
                batch: 2,
                c_in: 3,
                c_out: 2,
                len_in,
                len_out: ConvGeom::transposed_out_len(len_in, k, s, p).unwrap(),
                kernel: k,
                stride: s,
                padding: p,
                dilation: 1,
            };
            let x = seq(2 * 3 * len_in, 0.53);
            let w = seq(3 * 2 * k, 0.29);
            let got = conv_transpose1d_forward(&x, &w, &g);
            let want = naive_conv_t(&x, &w, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn length_formulas() {
        assert_eq!(ConvGeom::conv_out_len(10, 3, 1, 1, 1), Some(10));
        assert_eq!(ConvGeom::transposed_out_len(4, 8, 4, 2), Some(16));
    }
}

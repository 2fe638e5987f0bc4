//! Raw CPU kernels shared by the tape and the inference path.
//!
//! Layout is NCHW throughout. Every kernel runs single-threaded with a fixed
//! accumulation order, so outputs are bitwise reproducible.

use super::{gemm, Scalar};

/// Geometry of a stride-1 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.kw
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let mut r = 0;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut col[r * p..(r + 1) * p];
                let lo = g.pad.saturating_sub(kj);
                let hi = (g.w + g.pad).saturating_sub(kj).min(wo);
                for oy in 0..ho {
                    let row = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    row[..lo].fill(T::zero());
                    row[hi..].fill(T::zero());
                    let ix0 = lo + kj - g.pad;
                    row[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                }
                r += 1;
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let mut r = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &col[r * p..(r + 1) * p];
                let lo = g.pad.saturating_sub(kj);
                let hi = (g.w + g.pad).saturating_sub(kj).min(wo);
                for oy in 0..ho {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        continue;
                    }
                    let ix0 = lo + kj - g.pad;
                    let dst = &mut plane[iy as usize * g.w + ix0..iy as usize * g.w + ix0 + (hi - lo)];
                    for (d, s) in dst.iter_mut().zip(&src[oy * wo + lo..oy * wo + hi]) {
                        *d = *d + *s;
                    }
                }
                r += 1;
            }
        }
    }
}

/// `y[b] = W * im2col(x[b]) + bias`; weight is `c_out x c_in x kh x kw`.
pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let p = g.out_h() * g.out_w();
    let k = g.patch();
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * p;
    let mut y = vec![T::zero(); g.batch * out_sz];
    let mut col = vec![T::zero(); k * p];
    for b in 0..g.batch {
        im2col(g, &x[b * in_sz..(b + 1) * in_sz], &mut col);
        let yb = &mut y[b * out_sz..(b + 1) * out_sz];
        for (o, row) in yb.chunks_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        gemm(false, false, g.c_out, p, k, T::one(), weight, &col, T::one(), yb);
    }
    y
}

/// Gradients of a convolution. Returns `(dx, dweight, dbias)`; `dx` is only
/// computed when requested.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let p = g.out_h() * g.out_w();
    let k = g.patch();
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * p;
    let mut dw = vec![T::zero(); g.c_out * k];
    let mut db = vec![T::zero(); g.c_out];
    let mut dx = if need_dx { Some(vec![T::zero(); g.batch * in_sz]) } else { None };
    let mut col = vec![T::zero(); k * p];
    let mut dcol = vec![T::zero(); if need_dx { k * p } else { 0 }];
    for b in 0..g.batch {
        let dyb = &dy[b * out_sz..(b + 1) * out_sz];
        for (o, row) in dyb.chunks(p).enumerate() {
            db[o] = db[o] + row.iter().copied().sum::<T>();
        }
        im2col(g, &x[b * in_sz..(b + 1) * in_sz], &mut col);
        gemm(false, true, g.c_out, k, p, T::one(), dyb, &col, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            gemm(true, false, k, p, g.c_out, T::one(), weight, dyb, T::zero(), &mut dcol);
            col2im_add(g, &dcol, &mut dx[b * in_sz..(b + 1) * in_sz]);
        }
    }
    (dx, dw, db)
}

/// 2x2 stride-2 max pooling over `planes` planes of `h x w`. Returns the
/// pooled values and the flat input index of each maximum (first wins ties).
pub fn maxpool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub fn global_avg_pool<T: Scalar>(x: &[T], planes: usize, hw: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(hw).unwrap();
    x.chunks(hw).take(planes).map(|p| p.iter().copied().sum::<T>() * inv).collect()
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Row-wise numerically stable log-softmax.
pub fn log_softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let s: T = out[start..].iter().copied().sum();
        for v in &mut out[start..] {
            *v = *v / s;
        }
    }
    out
}

/// `x W + b` for `x: rows x n_in`, `W: n_in x n_out`.
/// Rounds identically to `Tape::matmul` followed by `Tape::add_bias`.
pub fn linear<T: Scalar>(x: &[T], rows: usize, n_in: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let n_out = bias.len();
    let mut y = vec![T::zero(); rows * n_out];
    gemm(false, false, rows, n_out, n_in, T::one(), x, weight, T::zero(), &mut y);
    for row in y.chunks_mut(n_out) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
    y
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

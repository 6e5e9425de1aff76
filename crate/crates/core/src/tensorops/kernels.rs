use std::ops::Range;

use crate::grid::{backward_flow, GridSpec, Pose2};
use crate::real::Real;

use super::{FeatureMap, ParamTensor};

pub(crate) fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Logistic function, kept strictly inside `(0, 1)`.
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    s.max(T::min_positive_value()).min(T::one() - T::epsilon())
}

/// Precomputed bilinear taps of a backward warp with zero padding.
#[derive(Clone, Debug)]
pub struct WarpPlan<T = f32> {
    h: usize,
    w: usize,
    /// `(destination, source, weight)` in destination order.
    taps: Vec<(u32, u32, T)>,
}

impl<T: Real> WarpPlan<T> {
    pub fn new(spec: &GridSpec, rel: &Pose2) -> Self {
        let flow = backward_flow(spec, rel);
        let (h, w) = (spec.h_cells, spec.w_cells);
        let mut taps = Vec::with_capacity(h * w);
        for (dst, &(si, sj)) in flow.coords.iter().enumerate() {
            let (i0, j0) = (si.floor(), sj.floor());
            let (fi, fj) = (si - i0, sj - j0);
            let corners = [
                (i0, j0, (1.0 - fi) * (1.0 - fj)),
                (i0, j0 + 1.0, (1.0 - fi) * fj),
                (i0 + 1.0, j0, fi * (1.0 - fj)),
                (i0 + 1.0, j0 + 1.0, fi * fj),
            ];
            for (ci, cj, wt) in corners {
                if wt == 0.0 || ci < 0.0 || cj < 0.0 || ci >= h as f64 || cj >= w as f64 {
                    continue;
                }
                let src = ci as usize * w + cj as usize;
                taps.push((dst as u32, src as u32, T::lit(wt)));
            }
        }
        WarpPlan { h, w, taps }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Warps `channels` stacked planes of `input` into `out` (overwritten).
    pub(crate) fn forward(&self, input: &[T], out: &mut [T]) {
        let p = self.plane();
        for (src_plane, dst_plane) in input.chunks_exact(p).zip(out.chunks_exact_mut(p)) {
            dst_plane.iter_mut().for_each(|v| *v = T::zero());
            for &(d, s, wt) in &self.taps {
                dst_plane[d as usize] = dst_plane[d as usize] + wt * src_plane[s as usize];
            }
        }
    }

    /// Adjoint: scatters `grad_out` back onto the source planes.
    pub(crate) fn backward(&self, grad_out: &[T], grad_in: &mut [T]) {
        let p = self.plane();
        for (g_dst, g_src) in grad_out.chunks_exact(p).zip(grad_in.chunks_exact_mut(p)) {
            for &(d, s, wt) in &self.taps {
                g_src[s as usize] = g_src[s as usize] + wt * g_dst[d as usize];
            }
        }
    }

    pub fn apply(&self, f: &FeatureMap<T>) -> FeatureMap<T> {
        assert_eq!(f.plane(), self.plane(), "warp plan built for a different grid");
        let mut out = vec![T::zero(); f.values.len()];
        self.forward(&f.values, &mut out);
        FeatureMap { values: out, ..*f }
    }
}

/// Geometry of a stride-1, zero same-padded square convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub dil: (usize, usize),
}

impl ConvGeom {
    pub fn pad(&self) -> (usize, usize) {
        (self.dil.0 * (self.k - 1) / 2, self.dil.1 * (self.k - 1) / 2)
    }

    pub fn patch(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Padded plane dimensions.
    fn padded(&self) -> (usize, usize) {
        let (ph, pw) = self.pad();
        (self.h + 2 * ph, self.w + 2 * pw)
    }

    /// Length of the strided output window: output `(i, j)` lives at
    /// `i * wp + j` so every tap reads a contiguous shifted slice.
    fn span(&self) -> usize {
        let (_, wp) = self.padded();
        (self.h - 1) * wp + self.w
    }

    fn tap_offset(&self, ki: usize, kj: usize) -> usize {
        let (_, wp) = self.padded();
        ki * self.dil.0 * wp + kj * self.dil.1
    }
}

/// Zero-pads every channel plane; 1x1 kernels need no copy and get an empty buffer.
pub(crate) fn pad_input<T: Real>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    if g.k == 1 {
        return Vec::new();
    }
    let (ph, pw) = g.pad();
    let (hp, wp) = g.padded();
    let mut out = vec![T::zero(); g.in_ch * hp * wp];
    for (src, dst) in x.chunks_exact(g.plane()).zip(out.chunks_exact_mut(hp * wp)) {
        for (i, row) in src.chunks_exact(g.w).enumerate() {
            let o = (i + ph) * wp + pw;
            dst[o..o + g.w].copy_from_slice(row);
        }
    }
    out
}

/// Moves rows between the compact `h x w` layout and the strided window.
fn compact<T: Real>(g: &ConvGeom, ext: &[T], rows: usize) -> Vec<T> {
    let (_, wp) = g.padded();
    let n = g.span();
    let mut out = Vec::with_capacity(rows * g.plane());
    for r in ext.chunks_exact(n).take(rows) {
        for i in 0..g.h {
            out.extend_from_slice(&r[i * wp..i * wp + g.w]);
        }
    }
    out
}

fn expand<T: Real>(g: &ConvGeom, y: &[T], rows: usize) -> Vec<T> {
    let (_, wp) = g.padded();
    let n = g.span();
    let mut out = vec![T::zero(); rows * n];
    for (src, dst) in y.chunks_exact(g.plane()).zip(out.chunks_exact_mut(n)) {
        for (i, row) in src.chunks_exact(g.w).enumerate() {
            dst[i * wp..i * wp + g.w].copy_from_slice(row);
        }
    }
    out
}

/// Returns the output and the padded input, which backward needs for the
/// weight gradient. One GEMM per kernel tap over shifted views of the padded
/// input; no patch matrix is materialised.
pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> (Vec<T>, Vec<T>) {
    let xpad = pad_input(g, x);
    let (src, plane): (&[T], usize) = if g.k == 1 { (x, g.plane()) } else { (&xpad, g.padded().0 * g.padded().1) };
    let n = g.span();
    let (patch, taps) = (g.patch(), g.k * g.k);
    let mut ext = vec![T::zero(); g.out_ch * n];
    for (o, row) in ext.chunks_exact_mut(n).enumerate() {
        row.iter_mut().for_each(|v| *v = b[o]);
    }
    for ki in 0..g.k {
        for kj in 0..g.k {
            let t = ki * g.k + kj;
            let off = g.tap_offset(ki, kj);
            T::gemm(
                g.out_ch,
                g.in_ch,
                n,
                T::one(),
                &w[t..],
                (patch as isize, taps as isize),
                &src[off..],
                (plane as isize, 1),
                T::one(),
                &mut ext,
                (n as isize, 1),
            );
        }
    }
    let y = if g.k == 1 { ext } else { compact(g, &ext, g.out_ch) };
    (y, xpad)
}

/// Accumulates parameter gradients and returns the input gradient over
/// `dx_channels` (other channels stay zero), or `None` when that is empty.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    xpad: &[T],
    w: &[T],
    dy: &[T],
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    dx_channels: &[Range<usize>],
) -> Option<Vec<T>> {
    let hw = g.plane();
    let n = g.span();
    let (patch, taps) = (g.patch(), g.k * g.k);
    let (hp, wp) = g.padded();
    let (src, plane): (&[T], usize) = if g.k == 1 { (x, hw) } else { (xpad, hp * wp) };
    if let Some(db) = db {
        for (o, row) in dy.chunks_exact(hw).enumerate() {
            let s: T = row.iter().copied().sum();
            db[o] = db[o] + s;
        }
    }
    // Zeros in the gap columns keep wrapped reads out of every product.
    let dy_ext: Vec<T> = if g.k == 1 { Vec::new() } else { expand(g, dy, g.out_ch) };
    let dy_ext: &[T] = if g.k == 1 { dy } else { &dy_ext };
    if let Some(dw) = dw {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let t = ki * g.k + kj;
                T::gemm(
                    g.out_ch,
                    n,
                    g.in_ch,
                    T::one(),
                    dy_ext,
                    (n as isize, 1),
                    &src[g.tap_offset(ki, kj)..],
                    (1, plane as isize),
                    T::one(),
                    &mut dw[t..],
                    (patch as isize, taps as isize),
                );
            }
        }
    }
    if dx_channels.iter().all(|r| r.is_empty()) {
        return None;
    }
    let mut dxpad = vec![T::zero(); g.in_ch * plane];
    for r in dx_channels.iter().filter(|r| !r.is_empty()) {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let t = ki * g.k + kj;
                T::gemm(
                    r.len(),
                    g.out_ch,
                    n,
                    T::one(),
                    &w[r.start * taps + t..],
                    (taps as isize, patch as isize),
                    dy_ext,
                    (n as isize, 1),
                    T::one(),
                    &mut dxpad[r.start * plane + g.tap_offset(ki, kj)..],
                    (plane as isize, 1),
                );
            }
        }
    }
    if g.k == 1 {
        return Some(dxpad);
    }
    let (ph, pw) = g.pad();
    let mut dx = Vec::with_capacity(g.in_ch * hw);
    for c in dxpad.chunks_exact(plane) {
        for i in 0..g.h {
            let o = (i + ph) * wp + pw;
            dx.extend_from_slice(&c[o..o + g.w]);
        }
    }
    Some(dx)
}

/// Reference convolution by direct summation, used to check the fast path.
pub fn conv2d_naive<T: Real>(
    f: &FeatureMap<T>,
    weight: &ParamTensor<T>,
    bias: &ParamTensor<T>,
    dilation: (usize, usize),
) -> FeatureMap<T> {
    let (out_ch, in_ch, k) = (weight.shape[0], weight.shape[1], weight.shape[2]);
    assert_eq!(in_ch, f.channels);
    let (ph, pw) = (dilation.0 * (k - 1) / 2, dilation.1 * (k - 1) / 2);
    let mut out = FeatureMap::zeros(out_ch, f.height, f.width);
    for o in 0..out_ch {
        for i in 0..f.height {
            for j in 0..f.width {
                let mut acc = bias.values[o];
                for c in 0..in_ch {
                    for ki in 0..k {
                        for kj in 0..k {
                            let si = (i + ki * dilation.0) as isize - ph as isize;
                            let sj = (j + kj * dilation.1) as isize - pw as isize;
                            if si < 0 || sj < 0 || si >= f.height as isize || sj >= f.width as isize {
                                continue;
                            }
                            let wv = weight.values[((o * in_ch + c) * k + ki) * k + kj];
                            acc = acc + wv * f.get(c, si as usize, sj as usize);
                        }
                    }
                }
                out.set(o, i, j, acc);
            }
        }
    }
    out
}

/// Channel-wise normalization at every spatial location.
/// Returns `(output, normalized, inverse_std)`.
pub(crate) fn layer_norm_forward<T: Real>(
    x: &[T],
    channels: usize,
    plane: usize,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::from_usize(channels).unwrap();
    let mut mean = vec![T::zero(); plane];
    for xc in x.chunks_exact(plane) {
        for (m, &v) in mean.iter_mut().zip(xc) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); plane];
    for xc in x.chunks_exact(plane) {
        for ((s, &v), &m) in var.iter_mut().zip(xc).zip(&mean) {
            let d = v - m;
            *s = *s + d * d;
        }
    }
    let rstd: Vec<T> = var.iter().map(|&s| T::one() / (s / n + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for c in 0..channels {
        let r = c * plane..(c + 1) * plane;
        for (p, ((xh, yv), &v)) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&x[r]).enumerate() {
            *xh = (v - mean[p]) * rstd[p];
            *yv = gain[c] * *xh + bias[c];
        }
    }
    (y, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    channels: usize,
    plane: usize,
    dgain: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    if let Some(dg) = dgain {
        for c in 0..channels {
            let r = c * plane..(c + 1) * plane;
            let s: T = dy[r.clone()].iter().zip(&xhat[r]).map(|(&a, &b)| a * b).sum();
            dg[c] = dg[c] + s;
        }
    }
    if let Some(db) = dbias {
        for c in 0..channels {
            let s: T = dy[c * plane..(c + 1) * plane].iter().copied().sum();
            db[c] = db[c] + s;
        }
    }
    if !want_dx {
        return None;
    }
    let n = T::from_usize(channels).unwrap();
    let mut sum_d = vec![T::zero(); plane];
    let mut sum_dx = vec![T::zero(); plane];
    for c in 0..channels {
        let r = c * plane..(c + 1) * plane;
        for p in 0..plane {
            let d = dy[r.start + p] * gain[c];
            sum_d[p] = sum_d[p] + d;
            sum_dx[p] = sum_dx[p] + d * xhat[r.start + p];
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for c in 0..channels {
        for p in 0..plane {
            let k = c * plane + p;
            let d = dy[k] * gain[c];
            dx[k] = rstd[p] * (d - sum_d[p] / n - xhat[k] * sum_dx[p] / n);
        }
    }
    Some(dx)
}

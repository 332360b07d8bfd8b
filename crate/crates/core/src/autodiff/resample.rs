//! Bilinear resampling with half-pixel centers.
//!
//! Destination index `d` samples source coordinate `(d + 0.5)·in/out − 0.5`,
//! clamped to `[0, in − 1]`. Interpolation is written as `a + f·(b − a)` so
//! constant inputs are reproduced exactly.

use crate::tensor::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

pub(crate) fn axis_taps<T: Real>(src: usize, dst: usize) -> Vec<Tap<T>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: T::from_f64(s - lo as f64),
            }
        })
        .collect()
}

pub(crate) fn resample_plane<T: Real>(
    src: &[T],
    src_w: usize,
    dst: &mut [T],
    dst_w: usize,
    ys: &[Tap<T>],
    xs: &[Tap<T>],
) {
    for (oy, ty) in ys.iter().enumerate() {
        let r0 = &src[ty.lo * src_w..(ty.lo + 1) * src_w];
        let r1 = &src[ty.hi * src_w..(ty.hi + 1) * src_w];
        let out = &mut dst[oy * dst_w..(oy + 1) * dst_w];
        for (o, tx) in out.iter_mut().zip(xs) {
            let top = r0[tx.lo] + tx.frac * (r0[tx.hi] - r0[tx.lo]);
            let bottom = r1[tx.lo] + tx.frac * (r1[tx.hi] - r1[tx.lo]);
            *o = top + ty.frac * (bottom - top);
        }
    }
}

/// Adjoint of [`resample_plane`]; accumulates into `d_src`.
pub(crate) fn resample_plane_backward<T: Real>(
    d_dst: &[T],
    dst_w: usize,
    d_src: &mut [T],
    src_w: usize,
    ys: &[Tap<T>],
    xs: &[Tap<T>],
) {
    let one = T::one();
    for (oy, ty) in ys.iter().enumerate() {
        let g_row = &d_dst[oy * dst_w..(oy + 1) * dst_w];
        for (g, tx) in g_row.iter().zip(xs) {
            let g_top = *g * (one - ty.frac);
            let g_bottom = *g * ty.frac;
            let r0 = ty.lo * src_w;
            let r1 = ty.hi * src_w;
            d_src[r0 + tx.lo] = d_src[r0 + tx.lo] + g_top * (one - tx.frac);
            d_src[r0 + tx.hi] = d_src[r0 + tx.hi] + g_top * tx.frac;
            d_src[r1 + tx.lo] = d_src[r1 + tx.lo] + g_bottom * (one - tx.frac);
            d_src[r1 + tx.hi] = d_src[r1 + tx.hi] + g_bottom * tx.frac;
        }
    }
}

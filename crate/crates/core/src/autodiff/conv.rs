//! Same-padded strided convolution and its transpose, lowered to GEMM.
//!
//! Both operations share one index map between a "large" grid of size
//! `H×W` and a "small" grid of size `ceil(H/s)×ceil(W/s)`: small position
//! `o` and kernel tap `k` touch large position `o*s + k - (ksize-1)/2`.
//! A convolution gathers from the large grid (im2col); a transposed
//! convolution scatters into it (col2im).

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Border handling for out-of-range taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Out-of-range taps read the nearest border pixel.
    Replicate,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl Geometry {
    fn pad_h(&self) -> isize {
        ((self.kh - 1) / 2) as isize
    }
    fn pad_w(&self) -> isize {
        ((self.kw - 1) / 2) as isize
    }
    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }
    pub fn col_rows(&self) -> usize {
        self.channels * self.taps()
    }
    pub fn small_plane(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Large-grid coordinate for a small-grid coordinate and tap, or `None`
    /// when it falls outside under zero padding.
    #[inline]
    fn resolve(o: usize, k: usize, stride: usize, pad: isize, extent: usize, mode: Padding) -> Option<usize> {
        let i = (o * stride + k) as isize - pad;
        if i >= 0 && (i as usize) < extent {
            Some(i as usize)
        } else {
            match mode {
                Padding::Zero => None,
                Padding::Replicate => Some(i.clamp(0, extent as isize - 1) as usize),
            }
        }
    }

    fn index_tables(&self, mode: Padding) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let ys = (0..self.kh)
            .flat_map(|ky| {
                (0..self.small_h).map(move |oy| Self::resolve(oy, ky, self.stride, self.pad_h(), self.big_h, mode))
            })
            .collect();
        let xs = (0..self.kw)
            .flat_map(|kx| {
                (0..self.small_w).map(move |ox| Self::resolve(ox, kx, self.stride, self.pad_w(), self.big_w, mode))
            })
            .collect();
        (ys, xs)
    }

    /// Gather `channels×big_h×big_w` into a `(channels·taps) × small_plane` matrix.
    pub fn im2col<T: Real>(&self, big: &[T], col: &mut [T], mode: Padding) {
        let (ys, xs) = self.index_tables(mode);
        let big_plane = self.big_h * self.big_w;
        let mut row = 0;
        for c in 0..self.channels {
            let src = &big[c * big_plane..(c + 1) * big_plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut col[row * self.small_plane()..(row + 1) * self.small_plane()];
                    let xmap = &xs[kx * self.small_w..(kx + 1) * self.small_w];
                    for oy in 0..self.small_h {
                        let out = &mut dst[oy * self.small_w..(oy + 1) * self.small_w];
                        match ys[ky * self.small_h + oy] {
                            Some(iy) => {
                                let line = &src[iy * self.big_w..(iy + 1) * self.big_w];
                                for (o, ix) in out.iter_mut().zip(xmap) {
                                    *o = ix.map_or(T::zero(), |ix| line[ix]);
                                }
                            }
                            None => out.fill(T::zero()),
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-add a column matrix back onto the large grid (adjoint of `im2col`).
    pub fn col2im<T: Real>(&self, col: &[T], big: &mut [T], mode: Padding) {
        let (ys, xs) = self.index_tables(mode);
        let big_plane = self.big_h * self.big_w;
        let mut row = 0;
        for c in 0..self.channels {
            let dst = &mut big[c * big_plane..(c + 1) * big_plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &col[row * self.small_plane()..(row + 1) * self.small_plane()];
                    let xmap = &xs[kx * self.small_w..(kx + 1) * self.small_w];
                    for oy in 0..self.small_h {
                        if let Some(iy) = ys[ky * self.small_h + oy] {
                            let line = &mut dst[iy * self.big_w..(iy + 1) * self.big_w];
                            let vals = &src[oy * self.small_w..(oy + 1) * self.small_w];
                            for (v, ix) in vals.iter().zip(xmap) {
                                if let Some(ix) = ix {
                                    line[*ix] = line[*ix] + *v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn check_kernel(op: &'static str, input: Shape, kernel: Shape, in_axis: usize) -> Result<()> {
    if kernel.0[in_axis] != input.c() {
        return Err(Error::ShapeMismatch {
            op,
            left: input,
            right: kernel,
        });
    }
    if kernel.h() == 0 || kernel.w() == 0 {
        return Err(Error::invalid(op, format!("empty kernel {kernel}")));
    }
    Ok(())
}

pub(crate) fn conv_geometry(input: Shape, kernel: Shape, stride: usize) -> Result<Geometry> {
    check_kernel("conv2d", input, kernel, 1)?;
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    if kernel.h() % 2 == 0 || kernel.w() % 2 == 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("same padding needs odd kernel extents, got {kernel}"),
        ));
    }
    Ok(Geometry {
        channels: input.c(),
        big_h: input.h(),
        big_w: input.w(),
        small_h: input.h().div_ceil(stride),
        small_w: input.w().div_ceil(stride),
        kh: kernel.h(),
        kw: kernel.w(),
        stride,
    })
}

pub(crate) fn conv_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Geometry)> {
    let g = conv_geometry(input.shape(), kernel.shape(), stride)?;
    let (n, o) = (input.shape().n(), kernel.shape().n());
    let out_shape = Shape::new(n, o, g.small_h, g.small_w);
    let mut out = Tensor::zeros(out_shape);
    let mut col = vec![T::zero(); g.col_rows() * g.small_plane()];
    let in_len = g.channels * g.big_h * g.big_w;
    let out_len = o * g.small_plane();
    for b in 0..n {
        g.im2col(&input.data()[b * in_len..(b + 1) * in_len], &mut col, padding);
        let dst = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
        T::gemm(
            o,
            g.col_rows(),
            g.small_plane(),
            T::one(),
            kernel.data(),
            g.col_rows() as isize,
            1,
            &col,
            g.small_plane() as isize,
            1,
            T::zero(),
            dst,
            g.small_plane() as isize,
            1,
        );
    }
    Ok((out, g))
}

/// Gradients of a convolution. `d_input`/`d_kernel` are accumulated into.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    g: &Geometry,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    d_out: &[T],
    padding: Padding,
    d_input: Option<&mut [T]>,
    d_kernel: Option<&mut [T]>,
) {
    let n = input.shape().n();
    let o = kernel.shape().n();
    let in_len = g.channels * g.big_h * g.big_w;
    let out_len = o * g.small_plane();
    let mut col = vec![T::zero(); g.col_rows() * g.small_plane()];
    if let Some(dk) = d_kernel {
        for b in 0..n {
            g.im2col(&input.data()[b * in_len..(b + 1) * in_len], &mut col, padding);
            T::gemm(
                o,
                g.small_plane(),
                g.col_rows(),
                T::one(),
                &d_out[b * out_len..(b + 1) * out_len],
                g.small_plane() as isize,
                1,
                &col,
                1,
                g.small_plane() as isize,
                T::one(),
                dk,
                g.col_rows() as isize,
                1,
            );
        }
    }
    if let Some(di) = d_input {
        for b in 0..n {
            T::gemm(
                g.col_rows(),
                o,
                g.small_plane(),
                T::one(),
                kernel.data(),
                1,
                g.col_rows() as isize,
                &d_out[b * out_len..(b + 1) * out_len],
                g.small_plane() as isize,
                1,
                T::zero(),
                &mut col,
                g.small_plane() as isize,
                1,
            );
            g.col2im(&col, &mut di[b * in_len..(b + 1) * in_len], padding);
        }
    }
}

pub(crate) fn transposed_geometry(input: Shape, kernel: Shape, stride: usize) -> Result<Geometry> {
    check_kernel("transposed_conv2d", input, kernel, 1)?;
    if stride != 1 && stride != 2 {
        return Err(Error::invalid(
            "transposed_conv2d",
            format!("unsupported stride {stride}, expected 1 or 2"),
        ));
    }
    Ok(Geometry {
        channels: kernel.n(),
        big_h: input.h() * stride,
        big_w: input.w() * stride,
        small_h: input.h(),
        small_w: input.w(),
        kh: kernel.h(),
        kw: kernel.w(),
        stride,
    })
}

/// Kernel `(O, C, kh, kw)` rearranged as an `(O·kh·kw) × C` matrix.
fn permute_kernel<T: Real>(kernel: &Tensor<T>) -> Vec<T> {
    let [o, c, kh, kw] = kernel.shape().0;
    let taps = kh * kw;
    let mut out = vec![T::zero(); o * taps * c];
    for oc in 0..o {
        for ic in 0..c {
            for t in 0..taps {
                out[(oc * taps + t) * c + ic] = kernel.data()[(oc * c + ic) * taps + t];
            }
        }
    }
    out
}

pub(crate) fn transposed_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Geometry)> {
    let g = transposed_geometry(input.shape(), kernel.shape(), stride)?;
    let [n, c, _, _] = input.shape().0;
    let out_shape = Shape::new(n, g.channels, g.big_h, g.big_w);
    let mut out = Tensor::zeros(out_shape);
    let wp = permute_kernel(kernel);
    let mut col = vec![T::zero(); g.col_rows() * g.small_plane()];
    let in_len = c * g.small_plane();
    let out_len = g.channels * g.big_h * g.big_w;
    for b in 0..n {
        T::gemm(
            g.col_rows(),
            c,
            g.small_plane(),
            T::one(),
            &wp,
            c as isize,
            1,
            &input.data()[b * in_len..(b + 1) * in_len],
            g.small_plane() as isize,
            1,
            T::zero(),
            &mut col,
            g.small_plane() as isize,
            1,
        );
        g.col2im(&col, &mut out.data_mut()[b * out_len..(b + 1) * out_len], Padding::Zero);
    }
    Ok((out, g))
}

pub(crate) fn transposed_backward<T: Real>(
    g: &Geometry,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    d_out: &[T],
    d_input: Option<&mut [T]>,
    d_kernel: Option<&mut [T]>,
) {
    let [n, c, _, _] = input.shape().0;
    let in_len = c * g.small_plane();
    let out_len = g.channels * g.big_h * g.big_w;
    let wp = permute_kernel(kernel);
    let mut d_wp = vec![T::zero(); wp.len()];
    let mut col = vec![T::zero(); g.col_rows() * g.small_plane()];
    let want_kernel = d_kernel.is_some();
    let mut d_input = d_input;
    for b in 0..n {
        g.im2col(&d_out[b * out_len..(b + 1) * out_len], &mut col, Padding::Zero);
        if let Some(di) = d_input.as_deref_mut() {
            T::gemm(
                c,
                g.col_rows(),
                g.small_plane(),
                T::one(),
                &wp,
                1,
                c as isize,
                &col,
                g.small_plane() as isize,
                1,
                T::one(),
                &mut di[b * in_len..(b + 1) * in_len],
                g.small_plane() as isize,
                1,
            );
        }
        if want_kernel {
            T::gemm(
                g.col_rows(),
                g.small_plane(),
                c,
                T::one(),
                &col,
                g.small_plane() as isize,
                1,
                &input.data()[b * in_len..(b + 1) * in_len],
                1,
                g.small_plane() as isize,
                T::one(),
                &mut d_wp,
                c as isize,
                1,
            );
        }
    }
    if let Some(dk) = d_kernel {
        let [o, ci, kh, kw] = kernel.shape().0;
        let taps = kh * kw;
        for oc in 0..o {
            for ic in 0..ci {
                for t in 0..taps {
                    let k = (oc * ci + ic) * taps + t;
                    dk[k] = dk[k] + d_wp[(oc * taps + t) * ci + ic];
                }
            }
        }
    }
}

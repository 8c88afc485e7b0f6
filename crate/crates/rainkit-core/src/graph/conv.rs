//! GEMM-backed convolution and transposed convolution with their backward
//! kernels. One im2col/col2im pair serves all six directions; the transposed
//! convolution is exactly the adjoint of the forward convolution with the
//! same weight, which the tests pin down via inner-product identities.
//!
//! Kernels parallelize over the batch only, and every reduction runs in a
//! fixed order, so results are bitwise reproducible regardless of thread
//! scheduling.

use super::{BackFn, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};
use rayon::prelude::*;

/// Spatial output size of a convolution.
pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Spatial output size of a transposed convolution.
pub fn conv_transpose_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + k - 2 * pad
}

/// Geometry of one convolution: the "big" side (conv input / transposed-conv
/// output) and the "small" side (conv output / transposed-conv input).
#[derive(Clone, Copy, Debug)]
struct Geom {
    big_c: usize,
    big_h: usize,
    big_w: usize,
    small_c: usize,
    small_h: usize,
    small_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn ck(&self) -> usize {
        self.big_c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Valid output range [lo, hi) along one axis for a kernel offset, i.e.
    /// those positions whose source index lands inside the big side.
    fn valid_range(&self, extent_big: usize, extent_small: usize, koff: usize) -> (usize, usize) {
        let p = self.pad as isize;
        let ko = koff as isize;
        let s = self.stride as isize;
        // src = pos*s - p + ko in [0, extent_big)
        let lo = (p - ko + s - 1).div_euclid(s).max(0) as usize;
        let hi_num = extent_big as isize - 1 + p - ko;
        let hi = if hi_num < 0 { 0 } else { (hi_num.div_euclid(s) + 1) as usize };
        (lo.min(extent_small), hi.min(extent_small))
    }
}

/// Unroll one sample of the big side into a (big_c*k*k) x (small_h*small_w)
/// column matrix, zero-filling the padding region.
fn im2col<T: Element>(big: &[T], g: &Geom, col: &mut [T]) {
    let cols = g.cols();
    debug_assert_eq!(col.len(), g.ck() * cols);
    debug_assert_eq!(big.len(), g.big_c * g.big_h * g.big_w);
    for c in 0..g.big_c {
        let src_plane = &big[c * g.big_h * g.big_w..][..g.big_h * g.big_w];
        for ky in 0..g.k {
            let (y_lo, y_hi) = g.valid_range(g.big_h, g.small_h, ky);
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * cols..][..cols];
                let (x_lo, x_hi) = g.valid_range(g.big_w, g.small_w, kx);
                dst[..y_lo * g.small_w].fill(T::zero());
                dst[y_hi * g.small_w..].fill(T::zero());
                for y in y_lo..y_hi {
                    let sy = y * g.stride + ky - g.pad;
                    let drow = &mut dst[y * g.small_w..][..g.small_w];
                    drow[..x_lo].fill(T::zero());
                    drow[x_hi..].fill(T::zero());
                    let src_row = &src_plane[sy * g.big_w..][..g.big_w];
                    if g.stride == 1 {
                        let s0 = x_lo + kx - g.pad;
                        drow[x_lo..x_hi].copy_from_slice(&src_row[s0..s0 + (x_hi - x_lo)]);
                    } else {
                        for x in x_lo..x_hi {
                            drow[x] = src_row[x * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back into one sample of
/// the big side (which must be zeroed by the caller).
fn col2im_acc<T: Element>(col: &[T], g: &Geom, big: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.big_c {
        let dst_plane = &mut big[c * g.big_h * g.big_w..][..g.big_h * g.big_w];
        for ky in 0..g.k {
            let (y_lo, y_hi) = g.valid_range(g.big_h, g.small_h, ky);
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * cols..][..cols];
                let (x_lo, x_hi) = g.valid_range(g.big_w, g.small_w, kx);
                for y in y_lo..y_hi {
                    let sy = y * g.stride + ky - g.pad;
                    let dst_row = &mut dst_plane[sy * g.big_w..][..g.big_w];
                    let srow = &src[y * g.small_w..][..g.small_w];
                    for x in x_lo..x_hi {
                        dst_row[x * g.stride + kx - g.pad] = dst_row[x * g.stride + kx - g.pad] + srow[x];
                    }
                }
            }
        }
    }
}

/// small = W @ im2col(big) + bias, batched. `w` is (small_c, big_c, k, k).
fn conv_fwd<T: Element>(big: &[T], n: usize, g: &Geom, w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let cols = g.cols();
    let (ck, big_len, small_len) = (g.ck(), g.big_c * g.big_h * g.big_w, g.small_c * cols);
    let mut out = vec![T::zero(); n * small_len];
    out.par_chunks_mut(small_len)
        .zip(big.par_chunks(big_len))
        .for_each(|(y, x)| {
            let mut col = vec![T::zero(); ck * cols];
            im2col(x, g, &mut col);
            unsafe {
                T::gemm(
                    g.small_c,
                    ck,
                    cols,
                    T::one(),
                    w.as_ptr(),
                    ck as isize,
                    1,
                    col.as_ptr(),
                    cols as isize,
                    1,
                    T::zero(),
                    y.as_mut_ptr(),
                    cols as isize,
                    1,
                );
            }
            if let Some(b) = bias {
                for c in 0..g.small_c {
                    let bc = b[c];
                    for v in &mut y[c * cols..(c + 1) * cols] {
                        *v = *v + bc;
                    }
                }
            }
        });
    out
}

/// big = col2im(W^T @ small), batched: gradient w.r.t. the conv input, and
/// also the forward pass of the transposed convolution.
fn conv_spread<T: Element>(small: &[T], n: usize, g: &Geom, w: &[T]) -> Vec<T> {
    let cols = g.cols();
    let (ck, big_len, small_len) = (g.ck(), g.big_c * g.big_h * g.big_w, g.small_c * cols);
    let mut out = vec![T::zero(); n * big_len];
    out.par_chunks_mut(big_len)
        .zip(small.par_chunks(small_len))
        .for_each(|(x, y)| {
            let mut col = vec![T::zero(); ck * cols];
            unsafe {
                T::gemm(
                    ck,
                    g.small_c,
                    cols,
                    T::one(),
                    w.as_ptr(),
                    1,
                    ck as isize,
                    y.as_ptr(),
                    cols as isize,
                    1,
                    T::zero(),
                    col.as_mut_ptr(),
                    cols as isize,
                    1,
                );
            }
            col2im_acc(&col, g, x);
        });
    out
}

/// dW = sum_n small_n @ im2col(big_n)^T; returns a (small_c, big_c, k, k) flat
/// buffer. Per-sample partials are reduced in batch order.
fn conv_weight_grad<T: Element>(small: &[T], big: &[T], n: usize, g: &Geom) -> Vec<T> {
    let cols = g.cols();
    let (ck, big_len, small_len) = (g.ck(), g.big_c * g.big_h * g.big_w, g.small_c * cols);
    let partials: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut col = vec![T::zero(); ck * cols];
            im2col(&big[i * big_len..][..big_len], g, &mut col);
            let mut dw = vec![T::zero(); g.small_c * ck];
            unsafe {
                T::gemm(
                    g.small_c,
                    cols,
                    ck,
                    T::one(),
                    small[i * small_len..].as_ptr(),
                    cols as isize,
                    1,
                    col.as_ptr(),
                    1,
                    cols as isize,
                    T::zero(),
                    dw.as_mut_ptr(),
                    ck as isize,
                    1,
                );
            }
            dw
        })
        .collect();
    let mut dw = vec![T::zero(); g.small_c * ck];
    for part in partials {
        for (d, p) in dw.iter_mut().zip(part) {
            *d = *d + p;
        }
    }
    dw
}

/// Per-channel sums of the small side over batch and space (bias gradient).
fn channel_sums<T: Element>(small: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let s = &small[(i * c + ch) * plane..][..plane];
            let mut acc = T::zero();
            for v in s {
                acc = acc + *v;
            }
            out[ch] = out[ch] + acc;
        }
    }
    out
}

fn check_kernel(op: &'static str, ws: Shape, stride: usize, pad: usize) -> Result<()> {
    if ws.h != ws.w {
        return Err(Error::invalid(op, format!("kernel must be square, got {}x{}", ws.h, ws.w)));
    }
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be >= 1"));
    }
    if pad >= ws.h {
        return Err(Error::invalid(op, format!("padding {pad} >= kernel {k}", k = ws.h)));
    }
    Ok(())
}

impl<T: Element> Tape<T> {
    /// 2-D convolution. `weight` is (C_out, C_in, k, k); `bias` is (1, C_out, 1, 1).
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        check_kernel("conv2d", ws, stride, pad)?;
        if xs.c != ws.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim: "input channels",
                expected: ws.c.to_string(),
                got: xs.c.to_string(),
            });
        }
        if xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim: "spatial extent",
                expected: format!(">= kernel {}", ws.h),
                got: format!("{}x{} with pad {pad}", xs.h, xs.w),
            });
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.c != ws.n || bs.n != 1 || bs.h != 1 || bs.w != 1 {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    dim: "bias channels",
                    expected: format!("1x{}x1x1", ws.n),
                    got: bs.to_string(),
                });
            }
        }
        let g = Geom {
            big_c: xs.c,
            big_h: xs.h,
            big_w: xs.w,
            small_c: ws.n,
            small_h: conv_out_size(xs.h, ws.h, stride, pad),
            small_w: conv_out_size(xs.w, ws.w, stride, pad),
            k: ws.h,
            stride,
            pad,
        };
        let xt = self.value(x).clone();
        let wt = self.value(weight).clone();
        let bt = bias.map(|b| self.value(b).clone());
        let out_data = conv_fwd(xt.data(), xs.n, &g, wt.data(), bt.as_ref().map(|t| t.data()));
        let out = Tensor::from_vec(Shape::new(xs.n, g.small_c, g.small_h, g.small_w), out_data)?;
        out.debug_check_finite("conv2d");

        let needs = self.needs(x)
            || self.needs(weight)
            || bias.map(|b| self.needs(b)).unwrap_or(false);
        let n = xs.n;
        let back: BackFn<T> = Box::new(move |gy, sink| {
            if sink.wants(x) {
                let gx = conv_spread(gy, n, &g, wt.data());
                sink.acc(x, |buf| {
                    for (b, v) in buf.iter_mut().zip(gx) {
                        *b = *b + v;
                    }
                });
            }
            if sink.wants(weight) {
                let gw = conv_weight_grad(gy, xt.data(), n, &g);
                sink.acc(weight, |buf| {
                    for (b, v) in buf.iter_mut().zip(gw) {
                        *b = *b + v;
                    }
                });
            }
            if let Some(b) = bias {
                if sink.wants(b) {
                    let gb = channel_sums(gy, n, g.small_c, g.small_h * g.small_w);
                    sink.acc(b, |buf| {
                        for (bu, v) in buf.iter_mut().zip(gb) {
                            *bu = *bu + v;
                        }
                    });
                }
            }
        });
        Ok(self.push(out, needs, Some(back)))
    }

    /// Transposed 2-D convolution, the adjoint of [`Tape::conv2d`] with the
    /// same weight. `weight` is (C_in, C_out, k, k); `bias` is (1, C_out, 1, 1).
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        check_kernel("conv_transpose2d", ws, stride, pad)?;
        if xs.c != ws.n {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                dim: "input channels",
                expected: ws.n.to_string(),
                got: xs.c.to_string(),
            });
        }
        let out_h = conv_transpose_out_size(xs.h, ws.h, stride, pad);
        let out_w = conv_transpose_out_size(xs.w, ws.w, stride, pad);
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.c != ws.c || bs.n != 1 || bs.h != 1 || bs.w != 1 {
                return Err(Error::ShapeMismatch {
                    op: "conv_transpose2d",
                    dim: "bias channels",
                    expected: format!("1x{}x1x1", ws.c),
                    got: bs.to_string(),
                });
            }
        }
        // Equivalent conv maps the big side (our output) to the small side
        // (our input) with weight (small_c=xs.c, big_c=ws.c, k, k).
        let g = Geom {
            big_c: ws.c,
            big_h: out_h,
            big_w: out_w,
            small_c: xs.c,
            small_h: xs.h,
            small_w: xs.w,
            k: ws.h,
            stride,
            pad,
        };
        let xt = self.value(x).clone();
        let wt = self.value(weight).clone();
        let bt = bias.map(|b| self.value(b).clone());
        let mut out_data = conv_spread(xt.data(), xs.n, &g, wt.data());
        if let Some(b) = bt.as_ref() {
            let plane = out_h * out_w;
            for i in 0..xs.n {
                for c in 0..ws.c {
                    let bc = b.data()[c];
                    for v in &mut out_data[(i * ws.c + c) * plane..][..plane] {
                        *v = *v + bc;
                    }
                }
            }
        }
        let out = Tensor::from_vec(Shape::new(xs.n, ws.c, out_h, out_w), out_data)?;
        out.debug_check_finite("conv_transpose2d");

        let needs = self.needs(x)
            || self.needs(weight)
            || bias.map(|b| self.needs(b)).unwrap_or(false);
        let n = xs.n;
        let back: BackFn<T> = Box::new(move |gy, sink| {
            if sink.wants(x) {
                let gx = conv_fwd(gy, n, &g, wt.data(), None);
                sink.acc(x, |buf| {
                    for (b, v) in buf.iter_mut().zip(gx) {
                        *b = *b + v;
                    }
                });
            }
            if sink.wants(weight) {
                let gw = conv_weight_grad(xt.data(), gy, n, &g);
                sink.acc(weight, |buf| {
                    for (b, v) in buf.iter_mut().zip(gw) {
                        *b = *b + v;
                    }
                });
            }
            if let Some(b) = bias {
                if sink.wants(b) {
                    let gb = channel_sums(gy, n, g.big_c, g.big_h * g.big_w);
                    sink.acc(b, |buf| {
                        for (bu, v) in buf.iter_mut().zip(gb) {
                            *bu = *bu + v;
                        }
                    });
                }
            }
        });
        Ok(self.push(out, needs, Some(back)))
    }
}

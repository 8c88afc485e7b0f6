//! Dense rank-4 tensors in batch-channel-height-width layout.
//!
//! Values are immutable once built; the autodiff graph shares them by `Arc`.
//! No general broadcasting: the op set in [`crate::graph`] covers exactly what
//! the networks need, with a handful of targeted channel/mask broadcasts.

mod element;

pub use element::Element;

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::sync::Arc;

/// Logical shape (N, C, H, W). All four extents are at least 1.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(n >= 1 && c >= 1 && h >= 1 && w >= 1, "zero-sized tensor dim");
        Shape { n, c, h, w }
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements per sample (C*H*W).
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Spatial extent (H*W).
    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Immutable dense tensor. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor<T: Element> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                dim: "numel",
                expected: shape.numel().to_string(),
                got: data.len().to_string(),
            });
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: Arc::new(vec![T::zero(); shape.numel()]) }
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor { shape, data: Arc::new(vec![v; shape.numel()]) }
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::new(1, 1, 1, 1), v)
    }

    /// Uniform samples in [lo, hi).
    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Tensor { shape, data: Arc::new(data) }
    }

    /// Gaussian samples, Box-Muller over the ChaCha stream.
    pub fn rand_normal(shape: Shape, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.numel();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let a = 2.0 * std::f64::consts::PI * u2;
            data.push(T::from_f64(mean + std * r * a.cos()));
            if data.len() < n {
                data.push(T::from_f64(mean + std * r * a.sin()));
            }
        }
        Tensor { shape, data: Arc::new(data) }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; clones the storage iff it is shared.
    pub fn make_mut(&mut self) -> &mut [T] {
        let v: &mut Vec<T> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor { shape: self.shape, data: Arc::new(data) }
    }

    /// Convert elements to another precision.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor { shape: self.shape, data: Arc::new(data) }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Debug-build guard: forward ops must not emit NaN/Inf from finite inputs.
    #[inline]
    pub fn debug_check_finite(&self, op: &'static str) {
        #[cfg(debug_assertions)]
        {
            if !self.is_all_finite() {
                panic!("non-finite output of op `{op}` (shape {})", self.shape);
            }
        }
        #[cfg(not(debug_assertions))]
        {
            let _ = op;
        }
    }

    /// Nearest-neighbor resize over the spatial dims. Source index is
    /// `floor(dst * src_extent / dst_extent)`, so binary inputs stay binary.
    /// Not differentiable; used for masks and inspection, never on grad paths.
    pub fn resize_nearest(&self, new_h: usize, new_w: usize) -> Tensor<T> {
        assert!(new_h >= 1 && new_w >= 1);
        let s = self.shape;
        if new_h == s.h && new_w == s.w {
            return self.clone();
        }
        let out_shape = Shape::new(s.n, s.c, new_h, new_w);
        let mut out = vec![T::zero(); out_shape.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let src = &self.data[(n * s.c + c) * s.plane()..][..s.plane()];
                let dst = &mut out[(n * s.c + c) * new_h * new_w..][..new_h * new_w];
                for y in 0..new_h {
                    let sy = (y * s.h / new_h).min(s.h - 1);
                    for x in 0..new_w {
                        let sx = (x * s.w / new_w).min(s.w - 1);
                        dst[y * new_w + x] = src[sy * s.w + sx];
                    }
                }
            }
        }
        Tensor { shape: out_shape, data: Arc::new(out) }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>", self.shape)
    }
}

/// Resize a binary mask to a new resolution and re-threshold at 0.5.
///
/// Nearest-neighbor alone preserves binarity; the threshold also normalizes
/// masks that arrive as soft values.
pub fn resize_mask<T: Element>(mask: &Tensor<T>, new_h: usize, new_w: usize) -> Tensor<T> {
    let half = T::from_f64(0.5);
    mask.resize_nearest(new_h, new_w)
        .map(|v| if v > half { T::one() } else { T::zero() })
}

/// Number of nonzero sites per sample in a single-channel mask.
pub fn mask_counts<T: Element>(mask: &Tensor<T>) -> Vec<usize> {
    let s = mask.shape();
    debug_assert_eq!(s.c, 1, "masks are single-channel");
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            mask.data()[n * plane..(n + 1) * plane]
                .iter()
                .filter(|v| **v != T::zero())
                .count()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_same_size_is_identity() {
        let t = Tensor::<f32>::from_vec(
            Shape::new(1, 1, 2, 2),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let r = t.resize_nearest(2, 2);
        assert_eq!(r.data(), t.data());
    }

    #[test]
    fn resize_upscales_mask_block() {
        // 2x2 [[1,0],[0,0]] -> 4x4: top-left 2x2 block of ones.
        let t = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = t.resize_nearest(4, 4);
        let expect = [
            1.0, 1.0, 0.0, 0.0, //
            1.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(r.data(), &expect);
    }

    #[test]
    fn resize_downscale_samples_grid() {
        // 4x4 checkerboard with rows shifted: sampled indices are (0,0),(0,2),(2,0),(2,2).
        let mut v = vec![0.0f32; 16];
        for y in 0..4 {
            for x in 0..4 {
                v[y * 4 + x] = ((y + x) % 2) as f32;
            }
        }
        let t = Tensor::from_vec(Shape::new(1, 1, 4, 4), v).unwrap();
        let r = t.resize_nearest(2, 2);
        // (y*4/2, x*4/2) = (0,0),(0,2),(2,0),(2,2) -> parity 0 everywhere.
        assert_eq!(r.data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mask_counts_per_sample() {
        let m = Tensor::<f32>::from_vec(
            Shape::new(2, 1, 2, 2),
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        assert_eq!(mask_counts(&m), vec![2, 1]);
    }

    #[test]
    fn binary_mask_stays_binary_after_resize() {
        let m = Tensor::<f32>::from_vec(Shape::new(1, 1, 3, 3), vec![1., 0., 1., 0., 1., 0., 1., 0., 1.]).unwrap();
        let r = resize_mask(&m, 7, 5);
        assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

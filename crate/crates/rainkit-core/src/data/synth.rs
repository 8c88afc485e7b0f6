//! Procedural dataset: smooth-gradient scenes with soft shapes and a light
//! texture, connected elliptical foreground masks covering 1-50% of the
//! pixels, and an invertible appearance jitter applied to the foreground.
//! Everything is a pure function of the seed.

use super::compose::compose;
use super::CompositeSample;
use crate::rng::rng_from;
use crate::tensor::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ranges of the per-sample foreground appearance transform. Each factor is
/// drawn uniformly from its range. With every range collapsed to 1.0 the
/// transform is the identity and the composite equals the ground truth.
#[derive(Clone, Copy, Debug)]
pub struct JitterSpec {
    pub brightness: (f64, f64),
    pub color: (f64, f64),
    pub contrast: (f64, f64),
    pub gamma: (f64, f64),
}

impl JitterSpec {
    pub fn identity() -> Self {
        JitterSpec {
            brightness: (1.0, 1.0),
            color: (1.0, 1.0),
            contrast: (1.0, 1.0),
            gamma: (1.0, 1.0),
        }
    }

    /// Desk-scale default: strong but monotone appearance shifts.
    pub fn strong() -> Self {
        JitterSpec {
            brightness: (0.6, 1.5),
            color: (0.75, 1.3),
            contrast: (0.6, 1.5),
            gamma: (0.65, 1.5),
        }
    }

    pub fn is_identity(&self) -> bool {
        let id = |r: (f64, f64)| r.0 == 1.0 && r.1 == 1.0;
        id(self.brightness) && id(self.color) && id(self.contrast) && id(self.gamma)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> JitterParams {
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        };
        JitterParams {
            brightness: draw(rng, self.brightness),
            color: [
                draw(rng, self.color),
                draw(rng, self.color),
                draw(rng, self.color),
            ],
            contrast: draw(rng, self.contrast),
            gamma: draw(rng, self.gamma),
        }
    }
}

struct JitterParams {
    brightness: f64,
    color: [f64; 3],
    contrast: f64,
    gamma: f64,
}

impl JitterParams {
    /// Monotone map on [0,1]: gamma, then contrast about 0.5, then gains.
    /// Identity factors short-circuit so the identity spec is bit-exact.
    fn apply(&self, v: f64, channel: usize) -> f64 {
        let mut x = v;
        if self.gamma != 1.0 {
            x = x.max(0.0).powf(self.gamma);
        }
        if self.contrast != 1.0 {
            x = 0.5 + (x - 0.5) * self.contrast;
        }
        let gain = self.brightness * self.color[channel];
        if gain != 1.0 {
            x *= gain;
        }
        x.clamp(0.0, 1.0)
    }
}

/// Ground-truth scene in [0,1]: oriented gradient base, a handful of soft
/// shapes, a global tone, and low-amplitude noise.
fn gen_scene(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let base: [f64; 3] = core::array::from_fn(|_| rng.gen_range(0.25..0.75));
    let amp: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-0.35..0.35));
    let mut img = vec![0.0f64; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let t = (x as f64 / s) * dx + (y as f64 / s) * dy;
            for c in 0..3 {
                img[c * size * size + y * size + x] = base[c] + amp[c] * t;
            }
        }
    }

    let shapes = rng.gen_range(3..=6);
    for _ in 0..shapes {
        let cx = rng.gen_range(0.0..s);
        let cy = rng.gen_range(0.0..s);
        let a = rng.gen_range(0.08..0.35) * s;
        let b = rng.gen_range(0.08..0.35) * s;
        let rot: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let color: [f64; 3] = core::array::from_fn(|_| rng.gen_range(0.1..0.9));
        let alpha = rng.gen_range(0.35..0.9);
        let (cr, sr) = (rot.cos(), rot.sin());
        let edge = 1.5; // soft edge width in ellipse-normalized units per pixel
        for y in 0..size {
            for x in 0..size {
                let px = x as f64 - cx;
                let py = y as f64 - cy;
                let u = (px * cr + py * sr) / a;
                let v = (-px * sr + py * cr) / b;
                let d = (u * u + v * v).sqrt();
                if d < 1.0 + edge / a.min(b) {
                    let soft = ((1.0 + edge / a.min(b) - d) / (edge / a.min(b))).clamp(0.0, 1.0);
                    let w = alpha * soft;
                    for c in 0..3 {
                        let i = c * size * size + y * size + x;
                        img[i] = img[i] * (1.0 - w) + color[c] * w;
                    }
                }
            }
        }
    }

    // global per-channel tone so foreground and background share one palette
    let tone: [f64; 3] = core::array::from_fn(|_| rng.gen_range(0.7..1.3));
    let noise_amp = 0.015;
    for c in 0..3 {
        for i in 0..size * size {
            let n = rng.gen_range(-noise_amp..noise_amp);
            let idx = c * size * size + i;
            img[idx] = (img[idx] * tone[c] + n).clamp(0.05, 0.95);
        }
    }
    img
}

/// Rasterize a union of ellipses (subsequent centers drawn inside the first,
/// so the union stays connected) at a global scale factor.
struct MaskShapes {
    ellipses: Vec<(f64, f64, f64, f64, f64)>, // cx, cy, a, b, rot
}

impl MaskShapes {
    fn sample(size: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = size as f64;
        let count = rng.gen_range(1..=3);
        let cx = rng.gen_range(0.2 * s..0.8 * s);
        let cy = rng.gen_range(0.2 * s..0.8 * s);
        let mut ellipses = Vec::with_capacity(count);
        for i in 0..count {
            let a = rng.gen_range(0.10..0.28) * s;
            let b = rng.gen_range(0.10..0.28) * s;
            let rot = rng.gen_range(0.0..std::f64::consts::PI);
            let (ex, ey) = if i == 0 {
                (cx, cy)
            } else {
                (
                    cx + rng.gen_range(-0.15 * s..0.15 * s),
                    cy + rng.gen_range(-0.15 * s..0.15 * s),
                )
            };
            ellipses.push((ex, ey, a, b, rot));
        }
        MaskShapes { ellipses }
    }

    fn rasterize(&self, size: usize, scale: f64) -> Vec<f32> {
        let mut m = vec![0.0f32; size * size];
        for &(cx, cy, a, b, rot) in &self.ellipses {
            let (cr, sr) = (rot.cos(), rot.sin());
            let (sa, sb) = (a * scale, b * scale);
            for y in 0..size {
                for x in 0..size {
                    let px = x as f64 - cx;
                    let py = y as f64 - cy;
                    let u = (px * cr + py * sr) / sa;
                    let v = (-px * sr + py * cr) / sb;
                    if u * u + v * v <= 1.0 {
                        m[y * size + x] = 1.0;
                    }
                }
            }
        }
        m
    }
}

/// Connected mask with foreground ratio close to `target` (binary search on a
/// global shape scale).
fn gen_mask(size: usize, target: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let shapes = MaskShapes::sample(size, rng);
    let total = (size * size) as f64;
    let ratio_of = |m: &[f32]| m.iter().filter(|v| **v != 0.0).count() as f64 / total;
    let (mut lo, mut hi) = (0.05f64, 4.0f64);
    let mut best = shapes.rasterize(size, 1.0);
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        let m = shapes.rasterize(size, mid);
        let r = ratio_of(&m);
        if (r - target).abs() < 0.01 {
            return m;
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
        best = m;
    }
    best
}

/// Deterministic synthetic dataset of `n` samples at `size` x `size`.
pub fn synth_dataset(n: usize, size: usize, seed: u64, jitter: &JitterSpec) -> Vec<CompositeSample> {
    assert!(n >= 1 && size >= 8);
    (0..n)
        .map(|i| {
            let mut rng = rng_from(seed, "synth", i as u64);
            let scene = gen_scene(size, &mut rng);
            // spread targets across the bucket range [1%, 48%]
            let target = rng.gen_range(0.015..0.48);
            let mask_v = loop {
                let m = gen_mask(size, target, &mut rng);
                let cnt = m.iter().filter(|v| **v != 0.0).count();
                if cnt >= 1 && cnt < size * size {
                    break m;
                }
            };
            let params = jitter.sample(&mut rng);
            let plane = size * size;
            let identity = jitter.is_identity();
            let mut fg = vec![0.0f32; 3 * plane];
            let mut gt = vec![0.0f32; 3 * plane];
            for c in 0..3 {
                for i in 0..plane {
                    let v = scene[c * plane + i];
                    let g = (2.0 * v - 1.0) as f32;
                    gt[c * plane + i] = g;
                    fg[c * plane + i] = if identity {
                        g
                    } else {
                        (2.0 * params.apply(v, c) - 1.0) as f32
                    };
                }
            }
            let shape = Shape::new(1, 3, size, size);
            let gt = Tensor::from_vec(shape, gt).expect("gt");
            let fg = Tensor::from_vec(shape, fg).expect("fg");
            let mask = Tensor::from_vec(Shape::new(1, 1, size, size), mask_v).expect("mask");
            let composite = compose(&fg, &gt, &mask).expect("compose");
            CompositeSample { composite, mask, ground_truth: gt }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;

    #[test]
    fn identity_jitter_reproduces_ground_truth() {
        let data = synth_dataset(4, 32, 7, &JitterSpec::identity());
        for s in &data {
            assert_eq!(s.composite.data(), s.ground_truth.data());
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let a = synth_dataset(3, 32, 11, &JitterSpec::strong());
        let b = synth_dataset(3, 32, 11, &JitterSpec::strong());
        for (x, y) in a.iter().zip(&b) {
            let xb: Vec<u32> = x.composite.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.composite.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
            assert_eq!(x.mask.data(), y.mask.data());
        }
    }

    #[test]
    fn background_is_untouched_by_synthesis() {
        let data = synth_dataset(6, 32, 13, &JitterSpec::strong());
        for s in &data {
            let plane = 32 * 32;
            for c in 0..3 {
                for i in 0..plane {
                    if s.mask.data()[i] == 0.0 {
                        assert_eq!(
                            s.composite.data()[c * plane + i].to_bits(),
                            s.ground_truth.data()[c * plane + i].to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ratios_cover_all_four_buckets_over_many_samples() {
        let data = synth_dataset(500, 32, 17, &JitterSpec::identity());
        let mut counts = [0usize; 4];
        for s in &data {
            let r = s.foreground_ratio();
            assert!(r > 0.0 && r < 1.0);
            counts[metrics::bucket_index(r)] += 1;
        }
        assert!(counts.iter().all(|c| *c > 0), "bucket counts {counts:?}");
    }

    #[test]
    fn jitter_moves_the_foreground() {
        let data = synth_dataset(8, 32, 19, &JitterSpec::strong());
        let mut moved = 0;
        for s in &data {
            let plane = 32 * 32;
            let mut diff = 0.0f64;
            for c in 0..3 {
                for i in 0..plane {
                    if s.mask.data()[i] == 1.0 {
                        diff += (s.composite.data()[c * plane + i]
                            - s.ground_truth.data()[c * plane + i])
                            .abs() as f64;
                    }
                }
            }
            if diff > 0.0 {
                moved += 1;
            }
        }
        assert!(moved >= 7, "jitter left {}/8 foregrounds unchanged", 8 - moved);
    }
}

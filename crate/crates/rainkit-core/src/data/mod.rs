//! Composite samples, synthetic dataset generation and image I/O.

mod compose;
mod io;
mod synth;

pub use compose::compose;
pub use io::{
    from_unit_byte, load_image, load_mask, load_triples_dir, save_image, save_sample_dir,
    to_unit_byte,
};
pub use synth::{synth_dataset, JitterSpec};

use crate::tensor::{Element, Shape, Tensor};

/// One training/evaluation unit: composite image, foreground mask and ground
/// truth, all at the same resolution, values in [-1, 1], mask binary.
/// The composite's background equals the ground truth's background exactly.
#[derive(Clone, Debug)]
pub struct CompositeSample {
    pub composite: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub ground_truth: Tensor<f32>,
}

impl CompositeSample {
    pub fn size(&self) -> usize {
        self.composite.shape().h
    }

    /// #{mask==1} / (H*W).
    pub fn foreground_ratio(&self) -> f64 {
        let total = self.mask.shape().plane() as f64;
        let fg = self.mask.data().iter().filter(|v| **v != 0.0).count() as f64;
        fg / total
    }
}

/// Stack samples into batch tensors (composites, masks, ground truths).
pub fn stack_batch(samples: &[&CompositeSample]) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
    assert!(!samples.is_empty());
    let s = samples[0].composite.shape();
    let m = samples[0].mask.shape();
    let n = samples.len();
    let mut comp = Vec::with_capacity(n * s.sample_len());
    let mut mask = Vec::with_capacity(n * m.sample_len());
    let mut gt = Vec::with_capacity(n * s.sample_len());
    for smp in samples {
        comp.extend_from_slice(smp.composite.data());
        mask.extend_from_slice(smp.mask.data());
        gt.extend_from_slice(smp.ground_truth.data());
    }
    (
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), comp).expect("batch"),
        Tensor::from_vec(Shape::new(n, 1, m.h, m.w), mask).expect("batch"),
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), gt).expect("batch"),
    )
}

/// Split one multi-sample tensor back into per-sample (1,C,H,W) tensors.
pub fn unstack<T: Element>(t: &Tensor<T>) -> Vec<Tensor<T>> {
    let s = t.shape();
    let len = s.sample_len();
    (0..s.n)
        .map(|i| {
            Tensor::from_vec(
                Shape::new(1, s.c, s.h, s.w),
                t.data()[i * len..(i + 1) * len].to_vec(),
            )
            .expect("unstack")
        })
        .collect()
}

//! Partial convolution: windows are renormalized by their visible-pixel count
//! and a validity mask propagates forward, so nothing leaks in from masked-out
//! regions.

use crate::error::Result;
use crate::graph::{conv_out_size, Tape, Var};
use crate::tensor::{Element, Shape, Tensor};

/// Apply a mask-aware convolution.
///
/// At each window: out = W^T(X o M) * (window_area / sum M_window) + b when
/// the window sees any valid pixel, else 0. Returns the output var and the
/// updated validity mask (1 where the window saw a valid pixel).
///
/// The mask is constant data: gradients flow through the image path only.
pub fn partial_conv<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    mask: &Tensor<T>,
    weight: Var,
    bias: Var,
    stride: usize,
    pad: usize,
) -> Result<(Var, Tensor<T>)> {
    let ws = tape.shape(weight);
    let k = ws.h;
    let xm = tape.mask_mul(x, mask)?;
    let conv = tape.conv2d(xm, weight, None, stride, pad)?;

    // Window sums of the mask, computed off-graph (mask is constant).
    let ms = mask.shape();
    let oh = conv_out_size(ms.h, k, stride, pad);
    let ow = conv_out_size(ms.w, k, stride, pad);
    let area = T::from_f64((k * k) as f64);
    let mut ratio = vec![T::zero(); ms.n * oh * ow];
    let mut valid = vec![T::zero(); ms.n * oh * ow];
    for n in 0..ms.n {
        let src = &mask.data()[n * ms.plane()..][..ms.plane()];
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = T::zero();
                for ky in 0..k {
                    let sy = (y * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy >= ms.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = (xx * stride + kx) as isize - pad as isize;
                        if sx < 0 || sx >= ms.w as isize {
                            continue;
                        }
                        s = s + src[sy as usize * ms.w + sx as usize];
                    }
                }
                let i = n * oh * ow + y * ow + xx;
                if s > T::zero() {
                    ratio[i] = area / s;
                    valid[i] = T::one();
                }
            }
        }
    }
    let ratio = Tensor::from_vec(Shape::new(ms.n, 1, oh, ow), ratio)?;
    let valid = Tensor::from_vec(Shape::new(ms.n, 1, oh, ow), valid)?;

    let scaled = tape.mask_mul(conv, &ratio)?;
    let biased = tape.ch_add(scaled, bias)?;
    let out = tape.mask_mul(biased, &valid)?;
    Ok((out, valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Tape;

    #[test]
    fn full_mask_equals_plain_conv() {
        let mut rng = crate::rng::rng_from(41, "pc1", 0);
        let mut tape = Tape::<f64>::new(false);
        let xt = Tensor::rand_uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, &mut rng);
        let wt = Tensor::rand_uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut rng);
        let bt = Tensor::rand_uniform(Shape::new(1, 3, 1, 1), -0.5, 0.5, &mut rng);
        let x = tape.leaf(xt.clone());
        let w = tape.leaf(wt.clone());
        let b = tape.leaf(bt.clone());
        let m = Tensor::ones(Shape::new(1, 1, 5, 5));
        let (y, vm) = partial_conv(&mut tape, x, &m, w, b, 1, 0).unwrap();
        let x2 = tape.leaf(xt);
        let w2 = tape.leaf(wt);
        let b2 = tape.leaf(bt);
        let y2 = tape.conv2d(x2, w2, Some(b2), 1, 0).unwrap();
        for (a, c) in tape.value(y).data().iter().zip(tape.value(y2).data()) {
            assert!((a - c).abs() < 1e-12, "{a} vs {c}");
        }
        assert!(vm.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn empty_mask_zeroes_output_and_mask() {
        let mut rng = crate::rng::rng_from(42, "pc2", 0);
        let mut tape = Tape::<f64>::new(false);
        let x = tape.leaf(Tensor::rand_uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, &mut rng));
        let w = tape.leaf(Tensor::rand_uniform(Shape::new(2, 2, 3, 3), -1.0, 1.0, &mut rng));
        let b = tape.leaf(Tensor::rand_uniform(Shape::new(1, 2, 1, 1), -0.5, 0.5, &mut rng));
        let m = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let (y, vm) = partial_conv(&mut tape, x, &m, w, b, 1, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
        assert!(vm.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn half_masked_window_scales_by_two() {
        // k=2 window with two of four pixels visible: output = conv over the
        // visible pixels scaled by 4/2 = 2 (bias 0).
        let mut tape = Tape::<f64>::new(false);
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.leaf(Tensor::ones(Shape::new(1, 1, 2, 2)));
        let b = tape.leaf(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let m = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let (y, _) = partial_conv(&mut tape, x, &m, w, b, 1, 0).unwrap();
        // visible sum = 1+2 = 3, scaled by 2 -> 6
        assert!((tape.value(y).data()[0] - 6.0).abs() < 1e-12);
    }
}

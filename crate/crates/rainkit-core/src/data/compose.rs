//! Cut-and-paste composition: I_c = M o I_f + (1-M) o I_b.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Composite a foreground over a background through a binary mask. Pixels are
/// copied exactly (no arithmetic on binary masks), so each region matches its
/// source bit for bit.
pub fn compose<T: Element>(
    foreground: &Tensor<T>,
    background: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = foreground.shape();
    if background.shape() != s {
        return Err(Error::ShapeMismatch {
            op: "compose",
            dim: "background",
            expected: s.to_string(),
            got: background.shape().to_string(),
        });
    }
    let ms = mask.shape();
    if ms.n != s.n || ms.c != 1 || ms.h != s.h || ms.w != s.w {
        return Err(Error::ShapeMismatch {
            op: "compose",
            dim: "mask",
            expected: format!("{}x1x{}x{}", s.n, s.h, s.w),
            got: ms.to_string(),
        });
    }
    let plane = s.plane();
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        let mrow = &mask.data()[n * plane..][..plane];
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            let f = &foreground.data()[off..off + plane];
            let b = &background.data()[off..off + plane];
            let dst = &mut out[off..off + plane];
            for i in 0..plane {
                let m = mrow[i];
                dst[i] = if m == T::one() {
                    f[i]
                } else if m == T::zero() {
                    b[i]
                } else {
                    m * f[i] + (T::one() - m) * b[i]
                };
            }
        }
    }
    Tensor::from_vec(s, out)
}

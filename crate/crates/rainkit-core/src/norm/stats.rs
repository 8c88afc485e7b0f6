//! Eager (non-graph) masked channel statistics, used for inspection, tests
//! and the alignment checks. The differentiable path inside the layers is
//! composed from graph ops instead, so gradients flow through every statistic.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Per-sample, per-channel statistics of a masked region.
///
/// `mean` and `std` are (N,C,1,1); `pixel_counts[n]` is #{mask==1} for sample
/// n. `std` is sqrt(variance + eps), so it is always >= sqrt(eps) > 0.
#[derive(Clone, Debug)]
pub struct RegionStats<T: Element> {
    pub mean: Tensor<T>,
    pub std: Tensor<T>,
    pub pixel_counts: Vec<usize>,
}

/// Channel-wise mean and standard deviation over mask==1 sites.
///
/// The variance residual sum runs over mask==1 sites only. Errors with
/// [`Error::DegenerateRegion`] when any sample has an empty region; callers
/// that want a fallback decide it themselves.
pub fn masked_channel_stats<T: Element>(
    f: &Tensor<T>,
    mask: &Tensor<T>,
    eps: f64,
) -> Result<RegionStats<T>> {
    masked_channel_stats_with(f, mask, eps, false)
}

/// As [`masked_channel_stats`], with the literal variance summand available:
/// `literal = true` sums (F o M - mu)^2 over all sites, contributing mu^2 at
/// each mask==0 site, exactly as the defining equations are written.
pub fn masked_channel_stats_with<T: Element>(
    f: &Tensor<T>,
    mask: &Tensor<T>,
    eps: f64,
    literal: bool,
) -> Result<RegionStats<T>> {
    let s = f.shape();
    let ms = mask.shape();
    if ms.n != s.n || ms.c != 1 || ms.h != s.h || ms.w != s.w {
        return Err(Error::ShapeMismatch {
            op: "masked_channel_stats",
            dim: "mask",
            expected: format!("{}x1x{}x{}", s.n, s.h, s.w),
            got: ms.to_string(),
        });
    }
    let plane = s.plane();
    let counts: Vec<usize> = (0..s.n)
        .map(|n| {
            mask.data()[n * plane..(n + 1) * plane]
                .iter()
                .filter(|v| **v != T::zero())
                .count()
        })
        .collect();
    if let Some(n) = counts.iter().position(|c| *c == 0) {
        return Err(Error::DegenerateRegion(format!(
            "sample {n}: no mask==1 sites at {}x{}",
            s.h, s.w
        )));
    }

    let mut mean = vec![T::zero(); s.n * s.c];
    let mut std = vec![T::zero(); s.n * s.c];
    let epsv = T::from_f64(eps);
    for n in 0..s.n {
        let mrow = &mask.data()[n * plane..][..plane];
        let cnt = T::from_f64(counts[n] as f64);
        for c in 0..s.c {
            let src = &f.data()[(n * s.c + c) * plane..][..plane];
            let mut acc = T::zero();
            for i in 0..plane {
                acc = acc + src[i] * mrow[i];
            }
            let mu = acc / cnt;
            let mut var = T::zero();
            if literal {
                for i in 0..plane {
                    let d = src[i] * mrow[i] - mu;
                    var = var + d * d;
                }
            } else {
                for i in 0..plane {
                    if mrow[i] != T::zero() {
                        let d = src[i] - mu;
                        var = var + d * d;
                    }
                }
            }
            mean[n * s.c + c] = mu;
            std[n * s.c + c] = (var / cnt + epsv).sqrt();
        }
    }
    Ok(RegionStats {
        mean: Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), mean)?,
        std: Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), std)?,
        pixel_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_region_has_mean_c_and_std_sqrt_eps() {
        let f = Tensor::<f64>::full(Shape::new(1, 2, 4, 4), 3.25);
        let mut mv = vec![0.0; 16];
        mv[0] = 1.0;
        mv[5] = 1.0;
        mv[9] = 1.0;
        let m = Tensor::from_vec(Shape::new(1, 1, 4, 4), mv).unwrap();
        let st = masked_channel_stats(&f, &m, 1e-5).unwrap();
        assert!((st.mean.data()[0] - 3.25).abs() < 1e-12);
        assert!((st.std.data()[0] - 1e-5f64.sqrt()).abs() < 1e-12);
        assert_eq!(st.pixel_counts, vec![3]);
    }

    #[test]
    fn hand_computed_two_site_stats() {
        // F = [[1,2],[3,4]], M = [[1,1],[0,0]] -> mean 1.5, std sqrt(0.25+eps)
        let f = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let eps = 1e-5;
        let st = masked_channel_stats(&f, &m, eps).unwrap();
        assert!((st.mean.data()[0] - 1.5).abs() < 1e-12);
        assert!((st.std.data()[0] - (0.25 + eps).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn full_mask_equals_instance_statistics() {
        let mut rng = crate::rng::rng_from(9, "stats", 0);
        let f = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 5, 5), -2.0, 2.0, &mut rng);
        let m = Tensor::ones(Shape::new(2, 1, 5, 5));
        let st = masked_channel_stats(&f, &m, 0.0).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let vals: Vec<f64> = (0..25)
                    .map(|i| f.data()[(n * 3 + c) * 25 + i])
                    .collect();
                let mu = vals.iter().sum::<f64>() / 25.0;
                let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 25.0;
                assert!((st.mean.at(n, c, 0, 0) - mu).abs() < 1e-12);
                assert!((st.std.at(n, c, 0, 0) - var.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_region_is_a_degenerate_error() {
        let f = Tensor::<f64>::ones(Shape::new(1, 1, 2, 2));
        let m = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(matches!(
            masked_channel_stats(&f, &m, 1e-5),
            Err(Error::DegenerateRegion(_))
        ));
    }

    #[test]
    fn literal_variance_adds_mu_squared_at_masked_out_sites() {
        let f = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![2.0, 2.0, 9.0, 9.0]).unwrap();
        let m = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let restricted = masked_channel_stats_with(&f, &m, 0.0, false).unwrap();
        let literal = masked_channel_stats_with(&f, &m, 0.0, true).unwrap();
        // restricted: residuals vanish on the constant region
        assert!(restricted.std.data()[0].abs() < 1e-12);
        // literal: two masked-out sites each contribute mu^2 = 4 -> var = 8/2
        assert!((literal.std.data()[0] - 2.0).abs() < 1e-12);
    }
}

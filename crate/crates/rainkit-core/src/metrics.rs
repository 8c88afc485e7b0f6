//! Image-quality metrics on the de-normalized 8-bit scale (MAX = 255), with
//! foreground-ratio bucketing of the aggregates.

use crate::data::CompositeSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Foreground-ratio buckets. The three-bucket view used elsewhere merges the
/// last two.
pub const BUCKET_LABELS: [&str; 4] = ["0-5%", "5-15%", "15-30%", "30-100%"];

pub fn bucket_index(ratio: f64) -> usize {
    if ratio < 0.05 {
        0
    } else if ratio < 0.15 {
        1
    } else if ratio < 0.30 {
        2
    } else {
        3
    }
}

/// [-1,1] tensor data on the continuous [0,255] scale.
fn to_8bit(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|v| (f64::from(*v) + 1.0) * 0.5 * 255.0).collect()
}

fn check_pair(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            dim: "shape",
            expected: a.shape().to_string(),
            got: b.shape().to_string(),
        });
    }
    Ok(())
}

/// Mean squared error over all pixels and channels (8-bit scale).
pub fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check_pair("mse", a, b)?;
    let (av, bv) = (to_8bit(a), to_8bit(b));
    let n = av.len() as f64;
    Ok(av.iter().zip(&bv).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// MSE restricted to mask==1 pixels (divided by #fg * channels).
pub fn fmse(a: &Tensor<f32>, b: &Tensor<f32>, mask: &Tensor<f32>) -> Result<f64> {
    check_pair("fmse", a, b)?;
    let s = a.shape();
    let plane = s.plane();
    let fg = mask.data().iter().filter(|v| **v != 0.0).count();
    if fg == 0 {
        return Err(Error::EmptyMask("fmse needs at least one foreground pixel".into()));
    }
    let (av, bv) = (to_8bit(a), to_8bit(b));
    let mut acc = 0.0;
    for n in 0..s.n {
        let mrow = &mask.data()[n * plane..][..plane];
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            for i in 0..plane {
                if mrow[i] != 0.0 {
                    let d = av[off + i] - bv[off + i];
                    acc += d * d;
                }
            }
        }
    }
    Ok(acc / (fg as f64 * s.c as f64))
}

/// Mean absolute error restricted to mask==1 pixels.
pub fn fl1(a: &Tensor<f32>, b: &Tensor<f32>, mask: &Tensor<f32>) -> Result<f64> {
    check_pair("fl1", a, b)?;
    let s = a.shape();
    let plane = s.plane();
    let fg = mask.data().iter().filter(|v| **v != 0.0).count();
    if fg == 0 {
        return Err(Error::EmptyMask("fl1 needs at least one foreground pixel".into()));
    }
    let (av, bv) = (to_8bit(a), to_8bit(b));
    let mut acc = 0.0;
    for n in 0..s.n {
        let mrow = &mask.data()[n * plane..][..plane];
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            for i in 0..plane {
                if mrow[i] != 0.0 {
                    acc += (av[off + i] - bv[off + i]).abs();
                }
            }
        }
    }
    Ok(acc / (fg as f64 * s.c as f64))
}

pub const PSNR_CAP: f64 = 100.0;

/// 10*log10(255^2 / mse), capped at 100 dB (the value reported for mse = 0).
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Luminance plane on the 8-bit scale (Rec. 601 weights).
fn luminance(t: &Tensor<f32>) -> Vec<f64> {
    let s = t.shape();
    let plane = s.plane();
    let v = to_8bit(t);
    let mut out = vec![0.0; plane];
    for i in 0..plane {
        out[i] = 0.299 * v[i] + 0.587 * v[plane + i] + 0.114 * v[2 * plane + i];
    }
    out
}

/// Mean local SSIM over valid 11x11 windows of the luminance plane, Gaussian
/// weighted (sigma 1.5), C1=(0.01*255)^2, C2=(0.03*255)^2.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check_pair("ssim", a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", s.h, s.w),
        ));
    }
    let la = luminance(a);
    let lb = luminance(b);
    let w = gaussian_window();
    let c1 = (0.01 * 255.0f64) * (0.01 * 255.0f64);
    let c2 = (0.03 * 255.0f64) * (0.03 * 255.0f64);
    let (h, wd) = (s.h, s.w);
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(wd - SSIM_WINDOW) {
            let (mut ma, mut mb) = (0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let wi = w[ky * SSIM_WINDOW + kx];
                    ma += wi * la[(y0 + ky) * wd + x0 + kx];
                    mb += wi * lb[(y0 + ky) * wd + x0 + kx];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let wi = w[ky * SSIM_WINDOW + kx];
                    let da = la[(y0 + ky) * wd + x0 + kx] - ma;
                    let db = lb[(y0 + ky) * wd + x0 + kx] - mb;
                    va += wi * da * da;
                    vb += wi * db * db;
                    cov += wi * da * db;
                }
            }
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            acc += num / den;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Metrics of one evaluated image.
#[derive(Clone, Debug)]
pub struct ImageMetrics {
    pub id: usize,
    pub fg_ratio: f64,
    pub mse: f64,
    pub fmse: f64,
    pub psnr: f64,
    pub fl1: f64,
    pub ssim: f64,
}

/// Averages of one bucket (or the overall average).
#[derive(Clone, Debug)]
pub struct BucketRow {
    pub label: String,
    pub count: usize,
    pub mse: f64,
    pub fmse: f64,
    pub psnr: f64,
    pub fl1: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub buckets: Vec<BucketRow>,
    pub average: BucketRow,
}

fn average_rows(label: &str, rows: &[&ImageMetrics]) -> BucketRow {
    let n = rows.len().max(1) as f64;
    let sum = |f: &dyn Fn(&ImageMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    BucketRow {
        label: label.to_string(),
        count: rows.len(),
        mse: sum(&|r| r.mse),
        fmse: sum(&|r| r.fmse),
        psnr: sum(&|r| r.psnr),
        fl1: sum(&|r| r.fl1),
        ssim: sum(&|r| r.ssim),
    }
}

/// Score per-sample outputs against their ground truths and bucket by
/// foreground ratio. `outputs[i]` corresponds to `samples[i]`.
pub fn evaluate_outputs(
    samples: &[CompositeSample],
    outputs: &[Tensor<f32>],
) -> Result<MetricsReport> {
    if samples.len() != outputs.len() {
        return Err(Error::Dataset(format!(
            "{} samples but {} outputs",
            samples.len(),
            outputs.len()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation needs at least one sample".into()));
    }
    let mut per_image = Vec::with_capacity(samples.len());
    for (i, (s, out)) in samples.iter().zip(outputs).enumerate() {
        let m = mse(out, &s.ground_truth)?;
        per_image.push(ImageMetrics {
            id: i,
            fg_ratio: s.foreground_ratio(),
            mse: m,
            fmse: fmse(out, &s.ground_truth, &s.mask)?,
            psnr: psnr_from_mse(m),
            fl1: fl1(out, &s.ground_truth, &s.mask)?,
            ssim: ssim(out, &s.ground_truth)?,
        });
    }
    let buckets = (0..4)
        .map(|b| {
            let members: Vec<&ImageMetrics> = per_image
                .iter()
                .filter(|r| bucket_index(r.fg_ratio) == b)
                .collect();
            average_rows(BUCKET_LABELS[b], &members)
        })
        .collect();
    let average = average_rows("average", &per_image.iter().collect::<Vec<_>>());
    Ok(MetricsReport { per_image, buckets, average })
}

/// Metrics of the raw composites themselves (the "Input composite" row).
pub fn evaluate_composites(samples: &[CompositeSample]) -> Result<MetricsReport> {
    let outputs: Vec<Tensor<f32>> = samples.iter().map(|s| s.composite.clone()).collect();
    evaluate_outputs(samples, &outputs)
}

impl MetricsReport {
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("id,fg_ratio,mse,fmse,psnr,fl1,ssim\n");
        for r in &self.per_image {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.id, r.fg_ratio, r.mse, r.fmse, r.psnr, r.fl1, r.ssim
            ));
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("bucket,count,mse,fmse,psnr,fl1,ssim\n");
        for b in self.buckets.iter().chain(std::iter::once(&self.average)) {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                b.label, b.count, b.mse, b.fmse, b.psnr, b.fl1, b.ssim
            ));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>6} {:>10} {:>10} {:>8} {:>8} {:>8}\n",
            "bucket", "count", "mse", "fmse", "psnr", "fl1", "ssim"
        );
        for b in self.buckets.iter().chain(std::iter::once(&self.average)) {
            out.push_str(&format!(
                "{:<10} {:>6} {:>10.2} {:>10.2} {:>8.2} {:>8.2} {:>8.4}\n",
                b.label, b.count, b.mse, b.fmse, b.psnr, b.fl1, b.ssim
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn t(v: Vec<f32>, c: usize, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, c, h, w), v).unwrap()
    }

    #[test]
    fn identical_images_score_perfectly() {
        let a = t(vec![0.25; 3 * 16], 3, 4, 4);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn constant_offset_of_two_8bit_steps() {
        // b = a + 2 on the 8-bit scale -> mse 4, fmse 4, fl1 2
        let a = t(vec![0.0; 3 * 16], 3, 4, 4);
        let b = a.map(|v| v + 2.0 * 2.0 / 255.0);
        let m = Tensor::ones(Shape::new(1, 1, 4, 4));
        assert!((mse(&a, &b).unwrap() - 4.0).abs() < 1e-3);
        assert!((fmse(&a, &b, &m).unwrap() - 4.0).abs() < 1e-3);
        assert!((fl1(&a, &b, &m).unwrap() - 2.0).abs() < 1e-3);
        // psnr = 10*log10(255^2/4) ~ 42.11 dB
        assert!((psnr(&a, &b).unwrap() - 42.1103).abs() < 1e-2);
    }

    #[test]
    fn background_error_is_invisible_to_fmse() {
        let a = t(vec![0.0; 3 * 16], 3, 4, 4);
        let mut bv = vec![0.0f32; 3 * 16];
        // corrupt only background pixels (mask top half)
        let mut mv = vec![0.0f32; 16];
        mv[..8].fill(1.0);
        for c in 0..3 {
            for i in 8..16 {
                bv[c * 16 + i] = 0.5;
            }
        }
        let b = t(bv, 3, 4, 4);
        let m = Tensor::from_vec(Shape::new(1, 1, 4, 4), mv).unwrap();
        assert_eq!(fmse(&a, &b, &m).unwrap(), 0.0);
        assert!(mse(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn empty_mask_is_an_error_for_foreground_metrics() {
        let a = t(vec![0.0; 3 * 16], 3, 4, 4);
        let m = Tensor::zeros(Shape::new(1, 1, 4, 4));
        assert!(matches!(fmse(&a, &a, &m), Err(Error::EmptyMask(_))));
        assert!(matches!(fl1(&a, &a, &m), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn psnr_is_monotone_in_mse() {
        let mut rng = crate::rng::rng_from(97, "psnr", 0);
        let mut last = f64::INFINITY;
        for scale in [0.01, 0.05, 0.2, 0.5] {
            let a = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 8, 8), -0.5, 0.5, &mut rng);
            let b = a.map(|v| v + scale);
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = crate::rng::rng_from(98, "ssim", 0);
        let a = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 16, 16), -1.0, 1.0, &mut rng);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_against_negative_is_negative() {
        let mut rng = crate::rng::rng_from(99, "ssim2", 0);
        let a = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 16, 16), -1.0, 1.0, &mut rng);
        let b = a.map(|v| -v);
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_images_smaller_than_window() {
        let a = t(vec![0.0; 3 * 100], 3, 10, 10);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn buckets_partition_every_image() {
        let data = crate::data::synth_dataset(40, 16, 31, &crate::data::JitterSpec::strong());
        let report = evaluate_composites(&data).unwrap();
        let total: usize = report.buckets.iter().map(|b| b.count).sum();
        assert_eq!(total, 40);
        // averages recompute from member rows exactly
        for b in 0..4 {
            let members: Vec<&ImageMetrics> = report
                .per_image
                .iter()
                .filter(|r| bucket_index(r.fg_ratio) == b)
                .collect();
            assert_eq!(members.len(), report.buckets[b].count);
            if !members.is_empty() {
                let mean_psnr: f64 =
                    members.iter().map(|m| m.psnr).sum::<f64>() / members.len() as f64;
                assert!((mean_psnr - report.buckets[b].psnr).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn background_preserving_outputs_tie_mse_to_fmse_by_ratio() {
        // zero background error: mse == fmse * ratio
        let data = crate::data::synth_dataset(10, 16, 37, &crate::data::JitterSpec::strong());
        let report = evaluate_composites(&data).unwrap();
        for r in &report.per_image {
            assert!((r.mse - r.fmse * r.fg_ratio).abs() < 1e-6 * r.fmse.max(1.0));
        }
    }
}

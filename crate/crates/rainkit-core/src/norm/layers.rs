//! Differentiable normalization layers, composed from graph ops so gradients
//! flow through every statistic (including the background scale/shift of the
//! region-aware layer).

use super::{NormKind, NormOptions};
use crate::error::Result;
use crate::graph::{Tape, Var};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{mask_counts, Element, Shape, Tensor};

/// Batch-norm running buffers (per channel). Fresh layers normalize with
/// mean 0 / var 1 in eval mode until training has updated them.
#[derive(Clone, Debug)]
pub struct RunningStats<T: Element> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }
}

/// Per-sample, per-channel instance normalization over all spatial sites.
pub fn instance_norm<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    eps: f64,
    affine: Option<(Var, Var)>,
) -> Result<Var> {
    let mu = tape.spatial_mean(x);
    let neg_mu = tape.neg(mu);
    let d = tape.ch_add(x, neg_mu)?;
    let d2 = tape.mul(d, d)?;
    let var = tape.spatial_mean(d2);
    let std = tape.sqrt_add(var, eps);
    let inv = tape.recip(std);
    let xn = tape.ch_mul(d, inv)?;
    apply_affine(tape, xn, affine)
}

fn apply_affine<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    affine: Option<(Var, Var)>,
) -> Result<Var> {
    match affine {
        None => Ok(x),
        Some((scale, shift)) => {
            let s = tape.ch_mul(x, scale)?;
            tape.ch_add(s, shift)
        }
    }
}

/// Batch normalization. Training mode normalizes with current batch
/// statistics (per channel, over batch and space) and updates the running
/// buffers with `momentum`; eval mode normalizes with the running buffers.
pub fn batch_norm<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    eps: f64,
    affine: Option<(Var, Var)>,
    running: &mut RunningStats<T>,
    momentum: f64,
    training: bool,
) -> Result<Var> {
    let xn = if training {
        let mu = tape.batch_mean(x);
        let neg_mu = tape.neg(mu);
        let d = tape.ch_add(x, neg_mu)?;
        let d2 = tape.mul(d, d)?;
        let var = tape.batch_mean(d2);
        let std = tape.sqrt_add(var, eps);
        let inv = tape.recip(std);
        // running <- (1-m)*running + m*batch, detached from the graph
        let m = T::from_f64(momentum);
        let one_m = T::one() - m;
        for (r, b) in running.mean.iter_mut().zip(tape.value(mu).data()) {
            *r = one_m * *r + m * *b;
        }
        for (r, b) in running.var.iter_mut().zip(tape.value(var).data()) {
            *r = one_m * *r + m * *b;
        }
        tape.ch_mul(d, inv)?
    } else {
        let c = running.mean.len();
        let mu = Tensor::from_vec(Shape::new(1, c, 1, 1), running.mean.clone())?;
        let inv: Vec<T> = running
            .var
            .iter()
            .map(|v| T::one() / (*v + T::from_f64(eps)).sqrt())
            .collect();
        let inv = Tensor::from_vec(Shape::new(1, c, 1, 1), inv)?;
        let mu = tape.constant(mu.map(|v| -v));
        let inv = tape.constant(inv);
        let d = tape.ch_add(x, mu)?;
        tape.ch_mul(d, inv)?
    };
    apply_affine(tape, xn, affine)
}

/// Pooled masked mean/std over the whole batch: (1,C,1,1) nodes.
fn pooled_masked_stats<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    mask: &Tensor<T>,
    eps: f64,
) -> Result<(Var, Var)> {
    let mu = tape.masked_mean_pooled(x, mask)?;
    let neg_mu = tape.neg(mu);
    let d = tape.ch_add(x, neg_mu)?;
    let d2 = tape.mul(d, d)?;
    let var = tape.masked_mean_pooled(d2, mask)?;
    let std = tape.sqrt_add(var, eps);
    Ok((mu, std))
}

/// Global batch stats as (1,C,1,1) nodes, the empty-region substitute for RN.
fn global_stats<T: Element>(tape: &mut Tape<T>, x: Var, eps: f64) -> Result<(Var, Var)> {
    let mu = tape.batch_mean(x);
    let neg_mu = tape.neg(mu);
    let d = tape.ch_add(x, neg_mu)?;
    let d2 = tape.mul(d, d)?;
    let var = tape.batch_mean(d2);
    let std = tape.sqrt_add(var, eps);
    Ok((mu, std))
}

/// Region normalization: foreground sites normalized with pooled foreground
/// batch statistics, background sites with pooled background statistics; no
/// cross-region flow. A region that is empty across the whole batch falls
/// back to global batch statistics for that region.
pub fn region_norm_rn<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    mask: &Tensor<T>,
    eps: f64,
    affine: Option<(Var, Var)>,
) -> Result<Var> {
    let inv_mask = mask.map(|v| T::one() - v);
    let fg_total: usize = mask_counts(mask).iter().sum();
    let plane_total = mask.shape().numel();
    let bg_total = plane_total - fg_total;

    let (mu_f, std_f) = if fg_total > 0 {
        pooled_masked_stats(tape, x, mask, eps)?
    } else {
        global_stats(tape, x, eps)?
    };
    let (mu_b, std_b) = if bg_total > 0 {
        pooled_masked_stats(tape, x, &inv_mask, eps)?
    } else {
        global_stats(tape, x, eps)?
    };

    let norm_with = |tape: &mut Tape<T>, mu: Var, std: Var| -> Result<Var> {
        let neg_mu = tape.neg(mu);
        let d = tape.ch_add(x, neg_mu)?;
        let inv = tape.recip(std);
        tape.ch_mul(d, inv)
    };
    let fg_n = norm_with(tape, mu_f, std_f)?;
    let bg_n = norm_with(tape, mu_b, std_b)?;
    let mixed = tape.mask_mix(fg_n, bg_n, mask)?;
    apply_affine(tape, mixed, affine)
}

/// Per-sample masked mean/std (N,C,1,1) nodes, with the optional literal
/// variance summand that counts mu^2 at every mask==0 site.
fn sample_masked_stats<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    mask: &Tensor<T>,
    opts: &NormOptions,
) -> Result<(Var, Var)> {
    let shape = tape.value(x).shape();
    let mu = tape.masked_mean(x, mask)?;
    let neg_mu = tape.neg(mu);
    let d = tape.ch_add(x, neg_mu)?;
    let d2 = tape.mul(d, d)?;
    let mut var = tape.masked_mean(d2, mask)?;
    if opts.literal_variance {
        // literal summand adds #{M=0}/#{M=1} * mu^2 per channel
        let counts = mask_counts(mask);
        let plane = shape.plane();
        let mut r = vec![T::zero(); shape.n * shape.c];
        for n in 0..shape.n {
            let cnt = counts[n].max(1);
            let ratio = T::from_f64((plane - counts[n]) as f64 / cnt as f64);
            for c in 0..shape.c {
                r[n * shape.c + c] = ratio;
            }
        }
        let ratio = tape.constant(Tensor::from_vec(Shape::new(shape.n, shape.c, 1, 1), r)?);
        let mu2 = tape.mul(mu, mu)?;
        let extra = tape.mul(mu2, ratio)?;
        var = tape.add(var, extra)?;
    }
    let std = tape.sqrt_add(var, opts.eps);
    Ok((mu, std))
}

/// Region-aware adaptive instance normalization.
///
/// Foreground sites are normalized with their own masked statistics, then
/// re-scaled and shifted with statistics measured over the background region
/// only; background sites pass through untouched (bit for bit). Samples whose
/// foreground or background holds fewer than `opts.min_pixels` sites at this
/// resolution degrade to plain instance normalization.
pub fn rain<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    mask: &Tensor<T>,
    opts: &NormOptions,
) -> Result<Var> {
    let shape = tape.value(x).shape();
    let plane = shape.plane();
    let fg = mask_counts(mask);
    let ok: Vec<bool> = fg
        .iter()
        .map(|&c| c >= opts.min_pixels && (plane - c) >= opts.min_pixels)
        .collect();

    if ok.iter().all(|v| !v) {
        return instance_norm(tape, x, opts.eps, None);
    }

    let inv_mask = mask.map(|v| T::one() - v);
    let (mu_f, std_f) = sample_masked_stats(tape, x, mask, opts)?;
    let (mu_b, std_b) = sample_masked_stats(tape, x, &inv_mask, opts)?;

    let neg_mu_f = tape.neg(mu_f);
    let d = tape.ch_add(x, neg_mu_f)?;
    let inv_f = tape.recip(std_f);
    let xn = tape.ch_mul(d, inv_f)?;
    // Role mapping: by default scale with the background std and shift by the
    // background mean; the literal reading swaps them.
    let (scale, shift) = if opts.literal_roles { (mu_b, std_b) } else { (std_b, mu_b) };
    let scaled = tape.ch_mul(xn, scale)?;
    let fg_out = tape.ch_add(scaled, shift)?;
    let rain_out = tape.mask_mix(fg_out, x, mask)?;

    if ok.iter().all(|v| *v) {
        return Ok(rain_out);
    }
    // Mixed batch: degenerate samples take the IN path instead.
    let in_out = instance_norm(tape, x, opts.eps, None)?;
    let mut sel = vec![T::zero(); shape.n * plane];
    for (n, good) in ok.iter().enumerate() {
        if *good {
            sel[n * plane..(n + 1) * plane].fill(T::one());
        }
    }
    let sel = Tensor::from_vec(Shape::new(shape.n, 1, shape.h, shape.w), sel)?;
    tape.mask_mix(rain_out, in_out, &sel)
}

/// A stateful normalization slot inside a network: owns the affine parameters
/// (when the kind has them) and the BN running buffers.
pub struct NormLayer<T: Element> {
    pub kind: NormKind,
    channels: usize,
    affine: Option<(ParamId, ParamId)>,
    running: Option<RunningStats<T>>,
    opts: NormOptions,
}

impl<T: Element> NormLayer<T> {
    pub fn build(
        kind: NormKind,
        channels: usize,
        name: &str,
        store: &mut ParamStore<T>,
        opts: NormOptions,
    ) -> Self {
        let affine = kind.has_affine().then(|| {
            let scale = store.register(
                format!("{name}.scale"),
                Tensor::ones(Shape::new(1, channels, 1, 1)),
            );
            let shift = store.register(
                format!("{name}.shift"),
                Tensor::zeros(Shape::new(1, channels, 1, 1)),
            );
            (scale, shift)
        });
        let running = matches!(kind, NormKind::Batch).then(|| RunningStats::new(channels));
        NormLayer { kind, channels, affine, running, opts }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn running(&self) -> Option<&RunningStats<T>> {
        self.running.as_ref()
    }

    pub fn running_mut(&mut self) -> Option<&mut RunningStats<T>> {
        self.running.as_mut()
    }

    pub fn affine_ids(&self) -> Option<(ParamId, ParamId)> {
        self.affine
    }

    /// Apply the slot. `mask` is the foreground mask already resized to x's
    /// resolution; `trainable` leases affine parameters with gradients.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: &Tensor<T>,
        training: bool,
        trainable: bool,
    ) -> Result<Var> {
        let affine = self.affine.map(|(s, b)| {
            if trainable {
                (tape.param(store, s), tape.param(store, b))
            } else {
                (tape.param_frozen(store, s), tape.param_frozen(store, b))
            }
        });
        match self.kind {
            NormKind::None => Ok(x),
            NormKind::Instance => instance_norm(tape, x, self.opts.eps, affine),
            NormKind::Batch => batch_norm(
                tape,
                x,
                self.opts.eps,
                affine,
                self.running.as_mut().expect("BN running stats"),
                self.opts.bn_momentum,
                training,
            ),
            NormKind::Region => region_norm_rn(tape, x, mask, self.opts.eps, affine),
            NormKind::Rain => rain(tape, x, mask, &self.opts),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::masked_channel_stats;

    fn mask_half(n: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut data = vec![0.0; n * h * w];
        for s in 0..n {
            for y in 0..h {
                for x in 0..w / 2 {
                    data[s * h * w + y * w + x] = 1.0;
                }
            }
        }
        Tensor::from_vec(Shape::new(n, 1, h, w), data).unwrap()
    }

    #[test]
    fn instance_norm_zeroes_constant_channels() {
        let mut tape = Tape::<f64>::new(false);
        let x = tape.leaf(Tensor::full(Shape::new(1, 2, 3, 3), 7.0));
        let y = instance_norm(&mut tape, x, 1e-5, None).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn instance_norm_output_has_unit_stats() {
        let mut rng = crate::rng::rng_from(21, "in", 0);
        let mut tape = Tape::<f64>::new(false);
        let x = tape.leaf(Tensor::rand_uniform(Shape::new(2, 3, 6, 6), -3.0, 3.0, &mut rng));
        let y = instance_norm(&mut tape, x, 1e-9, None).unwrap();
        let ones = Tensor::ones(Shape::new(2, 1, 6, 6));
        let st = masked_channel_stats(tape.value(y), &ones, 0.0).unwrap();
        for v in st.mean.data() {
            assert!(v.abs() < 1e-4);
        }
        for v in st.std.data() {
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn rain_constant_regions_land_on_background_level() {
        // fg = a, bg = b -> output is b everywhere (default role mapping).
        let (h, w) = (4, 4);
        let m = mask_half(1, h, w);
        let mut data = vec![0.0; h * w];
        for i in 0..h * w {
            data[i] = if m.data()[i] == 1.0 { 5.0 } else { -2.0 };
        }
        let x = Tensor::from_vec(Shape::new(1, 1, h, w), data).unwrap();
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x);
        let y = rain(&mut tape, xv, &m, &NormOptions::default()).unwrap();
        for v in tape.value(y).data() {
            assert!((v + 2.0).abs() < 1e-6, "got {v}");
        }
    }

    #[test]
    fn rain_background_is_bitwise_untouched() {
        let mut rng = crate::rng::rng_from(22, "rainbg", 0);
        let m = mask_half(2, 6, 6);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 6, 6), -2.0, 2.0, &mut rng);
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x.clone());
        let y = rain(&mut tape, xv, &m, &NormOptions::default()).unwrap();
        let out = tape.value(y);
        let plane = 36;
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..plane {
                    if m.data()[n * plane + i] == 0.0 {
                        let a = x.data()[(n * 3 + c) * plane + i];
                        let b = out.data()[(n * 3 + c) * plane + i];
                        assert_eq!(a.to_bits(), b.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn rain_aligns_foreground_stats_to_background() {
        let mut rng = crate::rng::rng_from(23, "rainalign", 0);
        let m = crate::gradcheck::rand_mask(2, 8, 8, 0.2, 0.45, &mut rng);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 4, 8, 8), -2.0, 3.0, &mut rng);
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x);
        let opts = NormOptions::default();
        let y = rain(&mut tape, xv, &m, &opts).unwrap();
        let out = tape.value(y).clone();
        let inv = m.map(|v| 1.0 - v);
        let fg = masked_channel_stats(&out, &m, opts.eps).unwrap();
        let bg = masked_channel_stats(&out, &inv, opts.eps).unwrap();
        for i in 0..fg.mean.data().len() {
            assert!((fg.mean.data()[i] - bg.mean.data()[i]).abs() < 1e-4);
            assert!((fg.std.data()[i] - bg.std.data()[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn rain_all_zero_mask_degrades_to_instance_norm() {
        let mut rng = crate::rng::rng_from(24, "rainfall", 0);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, &mut rng);
        let m = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let opts = NormOptions::default();
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x.clone());
        let y = rain(&mut tape, xv, &m, &opts).unwrap();
        let mut tape2 = Tape::<f64>::new(false);
        let xv2 = tape2.leaf(x);
        let y2 = instance_norm(&mut tape2, xv2, opts.eps, None).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape2.value(y2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rain_single_pixel_foreground_falls_back_with_min_pixels_2() {
        let mut rng = crate::rng::rng_from(25, "rainfall2", 0);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, &mut rng);
        let mut mv = vec![0.0; 16];
        mv[5] = 1.0;
        let m = Tensor::from_vec(Shape::new(1, 1, 4, 4), mv).unwrap();
        let opts = NormOptions { min_pixels: 2, ..NormOptions::default() };
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x.clone());
        let y = rain(&mut tape, xv, &m, &opts).unwrap();
        let mut tape2 = Tape::<f64>::new(false);
        let xv2 = tape2.leaf(x);
        let y2 = instance_norm(&mut tape2, xv2, opts.eps, None).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape2.value(y2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rain_half_mask_takes_rain_path_not_fallback() {
        let m = mask_half(1, 4, 4);
        let x = Tensor::<f64>::from_vec(
            Shape::new(1, 1, 4, 4),
            (0..16).map(|i| i as f64).collect(),
        )
        .unwrap();
        let opts = NormOptions { min_pixels: 2, ..NormOptions::default() };
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x.clone());
        let y = rain(&mut tape, xv, &m, &opts).unwrap();
        // background untouched -> definitely not the IN path
        let out = tape.value(y);
        assert_eq!(out.at(0, 0, 0, 3).to_bits(), x.at(0, 0, 0, 3).to_bits());
    }

    #[test]
    fn rain_is_idempotent_once_aligned() {
        let mut rng = crate::rng::rng_from(26, "rainidem", 0);
        let m = crate::gradcheck::rand_mask(1, 8, 8, 0.25, 0.45, &mut rng);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 8, 8), -1.0, 1.0, &mut rng);
        let opts = NormOptions::default();
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x);
        let y1 = rain(&mut tape, xv, &m, &opts).unwrap();
        let y2 = rain(&mut tape, y1, &m, &opts).unwrap();
        for (a, b) in tape.value(y1).data().iter().zip(tape.value(y2).data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn batch_norm_identical_samples_zero_out_in_training() {
        let sample: Vec<f64> = (0..18).map(|i| i as f64 * 0.3 - 2.0).collect();
        let mut data = sample.clone();
        data.extend_from_slice(&sample);
        let x = Tensor::from_vec(Shape::new(2, 2, 3, 3), data).unwrap();
        // identical samples: batch stats equal per-sample stats; constant
        // channels aside, output mean must be 0 with unit variance
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x);
        let mut running = RunningStats::new(2);
        let y = batch_norm(&mut tape, xv, 1e-9, None, &mut running, 0.1, true).unwrap();
        let ones = Tensor::ones(Shape::new(2, 1, 3, 3));
        let st = masked_channel_stats(tape.value(y), &ones, 0.0).unwrap();
        for v in st.mean.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_running_update_follows_momentum() {
        let x = Tensor::<f64>::from_vec(
            Shape::new(1, 1, 2, 2),
            vec![1.0, 3.0, 5.0, 7.0],
        )
        .unwrap();
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x);
        let mut running = RunningStats::new(1);
        batch_norm(&mut tape, xv, 0.0, None, &mut running, 0.1, true).unwrap();
        // batch mean 4, biased var 5; init (0,1)
        assert!((running.mean[0] - 0.4).abs() < 1e-12);
        assert!((running.var[0] - (0.9 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_train_eval_parity_after_convergence() {
        let mut rng = crate::rng::rng_from(27, "bnconv", 0);
        let x = Tensor::<f64>::rand_uniform(Shape::new(4, 2, 5, 5), -1.0, 2.0, &mut rng);
        let mut running = RunningStats::new(2);
        let mut train_out = None;
        for _ in 0..200 {
            let mut tape = Tape::<f64>::new(false);
            let xv = tape.leaf(x.clone());
            let y = batch_norm(&mut tape, xv, 1e-5, None, &mut running, 0.1, true).unwrap();
            train_out = Some(tape.value(y).clone());
        }
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x.clone());
        let y = batch_norm(&mut tape, xv, 1e-5, None, &mut running, 0.1, false).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(train_out.unwrap().data()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn region_norm_zeroes_both_constant_regions() {
        // constant fg a / bg b: both regions normalize to 0 (affine off),
        // destroying the contrast.
        let m = mask_half(2, 4, 4);
        let plane = 16;
        let mut data = vec![0.0; 2 * plane];
        for n in 0..2 {
            for i in 0..plane {
                data[n * plane + i] = if m.data()[n * plane + i] == 1.0 { 4.0 } else { -3.0 };
            }
        }
        let x = Tensor::from_vec(Shape::new(2, 1, 4, 4), data).unwrap();
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x);
        let y = region_norm_rn(&mut tape, xv, &m, 1e-5, None).unwrap();
        for v in tape.value(y).data() {
            assert!(v.abs() < 1e-9, "got {v}");
        }
    }

    #[test]
    fn region_norm_full_mask_equals_batch_norm() {
        let mut rng = crate::rng::rng_from(28, "rnbn", 0);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 2, 4, 4), -1.0, 1.0, &mut rng);
        let m = Tensor::ones(Shape::new(2, 1, 4, 4));
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x.clone());
        let y_rn = region_norm_rn(&mut tape, xv, &m, 1e-5, None).unwrap();
        let mut running = RunningStats::new(2);
        let xv2 = tape.leaf(x);
        let y_bn = batch_norm(&mut tape, xv2, 1e-5, None, &mut running, 0.1, true).unwrap();
        for (a, b) in tape.value(y_rn).data().iter().zip(tape.value(y_bn).data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn region_norm_masked_means_are_zero_per_region() {
        let mut rng = crate::rng::rng_from(29, "rnzero", 0);
        let m = crate::gradcheck::rand_mask(2, 6, 6, 0.25, 0.5, &mut rng);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 6, 6), -2.0, 2.0, &mut rng);
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x);
        let y = region_norm_rn(&mut tape, xv, &m, 1e-5, None).unwrap();
        let out = tape.value(y).clone();
        let inv = m.map(|v| 1.0 - v);
        // pooled over batch: recompute pooled means per channel
        let plane = 36;
        for c in 0..3 {
            let mut accs = [0.0f64; 2];
            let mut cnts = [0.0f64; 2];
            for n in 0..2 {
                for i in 0..plane {
                    let region = if m.data()[n * plane + i] == 1.0 { 0 } else { 1 };
                    accs[region] += out.data()[(n * 3 + c) * plane + i];
                    cnts[region] += 1.0;
                }
            }
            let _ = &inv;
            assert!((accs[0] / cnts[0]).abs() < 1e-4);
            assert!((accs[1] / cnts[1]).abs() < 1e-4);
        }
    }

    #[test]
    fn rain_gradients_flow_through_all_statistics() {
        let mut rng = crate::rng::rng_from(30, "raingc", 0);
        let m = crate::gradcheck::rand_mask(1, 6, 6, 0.3, 0.5, &mut rng);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 6, 6), -1.5, 1.5, &mut rng);
        let opts = NormOptions::default();
        let err = crate::gradcheck::check_scalar_fn(&[x], 24, 1e-6, &mut rng, &|tape, vars| {
            let y = rain(tape, vars[0], &m, &opts)?;
            crate::gradcheck::project_to_scalar(tape, y, 77)
        })
        .unwrap();
        assert!(err < 1e-3, "rain grad err = {err}");
    }

    #[test]
    fn literal_role_mapping_lands_on_background_std() {
        // with literal roles, the zero-variance foreground maps to bg std
        let (h, w) = (4, 4);
        let m = mask_half(1, h, w);
        let mut data = vec![0.0; h * w];
        for i in 0..h * w {
            data[i] = if m.data()[i] == 1.0 { 5.0 } else { -2.0 };
        }
        let x = Tensor::from_vec(Shape::new(1, 1, h, w), data).unwrap();
        let opts = NormOptions { literal_roles: true, ..NormOptions::default() };
        let mut tape = Tape::<f64>::new(false);
        let xv = tape.leaf(x);
        let y = rain(&mut tape, xv, &m, &opts).unwrap();
        // constant bg: std = sqrt(eps)
        let expect = opts.eps.sqrt();
        for (i, v) in tape.value(y).data().iter().enumerate() {
            if m.data()[i] == 1.0 {
                assert!((v - expect).abs() < 1e-9, "got {v}");
            }
        }
    }
}

//! The alternating training loop: update the discriminators on detached
//! generator output, then update the generator on the full objective. One
//! shared parameter store holds all three networks.

use crate::checkpoint;
use crate::data::{stack_batch, unstack, CompositeSample};
use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::loss::{hinge_d, hinge_g, rec_loss, LossWeights};
use crate::metrics::psnr_from_mse;
use crate::model::{domain_verify, DomainEncoder, Generator, GeneratorConfig, PatchDiscriminator};
use crate::norm::RunningStats;
use crate::optim::{AdamConfig, ParamId, ParamStore};
use crate::rng::rng_from;
use crate::tensor::{Shape, Tensor};
use std::path::Path;

/// Training hyperparameters. `desk` trains in minutes on a CPU; `paper` holds
/// the published regime (100 epochs, batch 12, 256x256).
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub adversarial: bool,
    pub verification: bool,
    pub disc_base: usize,
    pub domain_base: usize,
    pub domain_levels: usize,
    /// Save a full training checkpoint every N epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            seed,
            epochs: 20,
            batch_size: 8,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            adversarial: true,
            verification: true,
            disc_base: 16,
            domain_base: 16,
            domain_levels: 4,
            checkpoint_every: 0,
        }
    }

    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 12,
            disc_base: 64,
            domain_base: 64,
            ..TrainConfig::desk(seed)
        }
    }

    fn lambda_adv(&self) -> f64 {
        if self.adversarial {
            self.weights.adv
        } else {
            0.0
        }
    }

    fn lambda_ver(&self) -> f64 {
        if self.verification {
            self.weights.ver
        } else {
            0.0
        }
    }

    fn to_header(&self, epoch: usize, step: u64) -> String {
        format!(
            "rainstate-v1 epoch={epoch} step={step} seed={} epochs={} batch={} lr={} beta1={} beta2={} adameps={} l1={} l2={} l3={} adv={} ver={} dbase={} vbase={} vlevels={} ckevery={}",
            self.seed,
            self.epochs,
            self.batch_size,
            self.adam.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.weights.adv,
            self.weights.ver,
            self.weights.rec,
            self.adversarial as u8,
            self.verification as u8,
            self.disc_base,
            self.domain_base,
            self.domain_levels,
            self.checkpoint_every,
        )
    }

    fn from_header(header: &str) -> Result<(Self, usize, u64)> {
        let mut kv = std::collections::HashMap::new();
        let mut parts = header.split_whitespace();
        if parts.next() != Some("rainstate-v1") {
            return Err(Error::Checkpoint(format!("unrecognized state header: {header}")));
        }
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad state header field {p}")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("state header missing {k}")))
        };
        macro_rules! num {
            ($k:expr, $t:ty) => {
                get($k)?.parse::<$t>().map_err(|_| {
                    Error::Checkpoint(format!("bad state header value for {}", $k))
                })?
            };
        }
        let cfg = TrainConfig {
            seed: num!("seed", u64),
            epochs: num!("epochs", usize),
            batch_size: num!("batch", usize),
            adam: AdamConfig {
                lr: num!("lr", f64),
                beta1: num!("beta1", f64),
                beta2: num!("beta2", f64),
                eps: num!("adameps", f64),
            },
            weights: LossWeights {
                adv: num!("l1", f64),
                ver: num!("l2", f64),
                rec: num!("l3", f64),
            },
            adversarial: get("adv")? == "1",
            verification: get("ver")? == "1",
            disc_base: num!("dbase", usize),
            domain_base: num!("vbase", usize),
            domain_levels: num!("vlevels", usize),
            checkpoint_every: num!("ckevery", usize),
        };
        Ok((cfg, num!("epoch", usize), num!("step", u64)))
    }
}

/// Component losses of one optimization step (absent terms read 0).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub rec: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub ver_g: f64,
    pub ver_d: f64,
}

#[derive(Clone, Debug)]
pub struct HistoryRow {
    pub epoch: usize,
    pub rec: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub ver_g: f64,
    pub ver_d: f64,
    pub val_psnr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,rec,adv_g,adv_d,ver_g,ver_d,val_psnr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.rec, r.adv_g, r.adv_d, r.ver_g, r.ver_d, r.val_psnr
            ));
        }
        out
    }

    pub fn final_val_psnr(&self) -> Option<f64> {
        self.rows.last().map(|r| r.val_psnr)
    }
}

/// Everything a training run owns: the three networks, their shared parameter
/// store, and the position in the epoch schedule.
pub struct TrainState {
    pub store: ParamStore<f32>,
    pub gen: Generator<f32>,
    pub disc: PatchDiscriminator<f32>,
    pub domain: DomainEncoder<f32>,
    pub cfg: TrainConfig,
    epoch: usize,
    step: u64,
}

impl TrainState {
    pub fn new(gen_cfg: GeneratorConfig, cfg: TrainConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut g_rng = rng_from(cfg.seed, "init-generator", 0);
        let gen = Generator::build(gen_cfg, &mut store, &mut g_rng)?;
        let mut d_rng = rng_from(cfg.seed, "init-disc", 0);
        let disc = PatchDiscriminator::build(&mut store, "d", 3, cfg.disc_base, &mut d_rng);
        let mut v_rng = rng_from(cfg.seed, "init-domain", 0);
        let domain =
            DomainEncoder::build(&mut store, "v", cfg.domain_base, cfg.domain_levels, &mut v_rng);
        Ok(TrainState { store, gen, disc, domain, cfg, epoch: 0, step: 0 })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn check_finite(&self, term: &str, v: f64) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { term: term.to_string(), step: self.step })
        }
    }

    /// One alternating optimization step on a stacked batch.
    pub fn train_step(
        &mut self,
        comps: &Tensor<f32>,
        masks: &Tensor<f32>,
        gts: &Tensor<f32>,
    ) -> Result<StepReport> {
        self.step += 1;
        let l_adv = self.cfg.lambda_adv();
        let l_ver = self.cfg.lambda_ver();
        let l_rec = self.cfg.weights.rec;
        let mut report = StepReport::default();

        let mut tape = Tape::<f32>::new(true);
        let fake = self.gen.forward(&mut tape, &self.store, comps, masks, true, true)?;
        let real = tape.constant(gts.clone());

        // Phase 1: discriminators on detached output.
        if l_adv > 0.0 || l_ver > 0.0 {
            let fake_det = tape.detach(fake);
            let mut d_terms = Vec::new();
            let mut d_params: Vec<ParamId> = Vec::new();
            if l_adv > 0.0 {
                let s_real = self.disc.forward(&mut tape, &self.store, real, true, true)?;
                let s_fake = self.disc.forward(&mut tape, &self.store, fake_det, true, true)?;
                let adv_d = hinge_d(&mut tape, s_real, s_fake)?;
                report.adv_d = self.check_finite("adv_d", tape.value(adv_d).data()[0].into())?;
                d_terms.push(tape.scale(adv_d, l_adv));
                d_params.extend_from_slice(self.disc.param_ids());
            }
            if l_ver > 0.0 {
                let v_real =
                    domain_verify(&mut tape, &self.store, &mut self.domain, real, masks, true, true)?;
                let v_fake = domain_verify(
                    &mut tape,
                    &self.store,
                    &mut self.domain,
                    fake_det,
                    masks,
                    true,
                    true,
                )?;
                let ver_d = hinge_d(&mut tape, v_real, v_fake)?;
                report.ver_d = self.check_finite("ver_d", tape.value(ver_d).data()[0].into())?;
                d_terms.push(tape.scale(ver_d, l_ver));
                d_params.extend_from_slice(self.domain.param_ids());
            }
            let mut d_loss = d_terms[0];
            for t in &d_terms[1..] {
                d_loss = tape.add(d_loss, *t)?;
            }
            tape.backward(d_loss)?;
            tape.harvest_into(&mut self.store);
            self.store.adam_step(&d_params, self.cfg.adam);
            self.store.zero_grad(&d_params);
        }

        // Phase 2: generator on the full objective, discriminators frozen
        // (re-leased at their updated values).
        let rec = rec_loss(&mut tape, fake, real)?;
        report.rec = self.check_finite("rec", tape.value(rec).data()[0].into())?;
        let mut g_loss = tape.scale(rec, l_rec);
        if l_adv > 0.0 {
            let s_fake = self.disc.forward(&mut tape, &self.store, fake, true, false)?;
            let adv_g = hinge_g(&mut tape, s_fake);
            report.adv_g = self.check_finite("adv_g", tape.value(adv_g).data()[0].into())?;
            let w = tape.scale(adv_g, l_adv);
            g_loss = tape.add(g_loss, w)?;
        }
        if l_ver > 0.0 {
            let v_fake =
                domain_verify(&mut tape, &self.store, &mut self.domain, fake, masks, true, false)?;
            let ver_g = hinge_g(&mut tape, v_fake);
            report.ver_g = self.check_finite("ver_g", tape.value(ver_g).data()[0].into())?;
            let w = tape.scale(ver_g, l_ver);
            g_loss = tape.add(g_loss, w)?;
        }
        tape.backward(g_loss)?;
        tape.harvest_into(&mut self.store);
        let g_params: Vec<ParamId> = self.gen.param_ids().to_vec();
        self.store.adam_step(&g_params, self.cfg.adam);
        self.store.zero_grad(&g_params);
        Ok(report)
    }

    /// Harmonize samples in eval mode (no state updates), batched.
    pub fn harmonize_all(&mut self, samples: &[CompositeSample]) -> Result<Vec<Tensor<f32>>> {
        harmonize_all(&mut self.gen, &self.store, samples, self.cfg.batch_size)
    }

    fn val_psnr(&mut self, val: &[CompositeSample]) -> Result<f64> {
        if val.is_empty() {
            return Ok(0.0);
        }
        let outs = self.harmonize_all(val)?;
        let mut acc = 0.0;
        for (s, o) in val.iter().zip(&outs) {
            acc += psnr_from_mse(crate::metrics::mse(o, &s.ground_truth)?);
        }
        Ok(acc / val.len() as f64)
    }

    /// Epoch loop over shuffled batches, with per-epoch validation PSNR,
    /// history CSV and checkpoints written under `out_dir` when given.
    pub fn train(
        &mut self,
        train_set: &[CompositeSample],
        val_set: &[CompositeSample],
        out_dir: Option<&Path>,
    ) -> Result<TrainHistory> {
        if train_set.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        if train_set.len() < self.cfg.batch_size {
            return Err(Error::Dataset(format!(
                "dataset of {} samples is smaller than batch size {}",
                train_set.len(),
                self.cfg.batch_size
            )));
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let mut history = TrainHistory::default();
        while self.epoch < self.cfg.epochs {
            let epoch = self.epoch;
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            let mut rng = rng_from(self.cfg.seed, "shuffle", epoch as u64);
            for i in (1..order.len()).rev() {
                let j = rand::Rng::gen_range(&mut rng, 0..=i);
                order.swap(i, j);
            }
            let mut sums = StepReport::default();
            let mut steps = 0usize;
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch: Vec<&CompositeSample> = chunk.iter().map(|i| &train_set[*i]).collect();
                let (comps, masks, gts) = stack_batch(&batch);
                let r = self.train_step(&comps, &masks, &gts)?;
                sums.rec += r.rec;
                sums.adv_g += r.adv_g;
                sums.adv_d += r.adv_d;
                sums.ver_g += r.ver_g;
                sums.ver_d += r.ver_d;
                steps += 1;
            }
            let inv = 1.0 / steps as f64;
            let val_psnr = self.val_psnr(val_set)?;
            self.epoch += 1;
            history.rows.push(HistoryRow {
                epoch: self.epoch,
                rec: sums.rec * inv,
                adv_g: sums.adv_g * inv,
                adv_d: sums.adv_d * inv,
                ver_g: sums.ver_g * inv,
                ver_d: sums.ver_d * inv,
                val_psnr,
            });
            if let Some(dir) = out_dir {
                std::fs::write(dir.join("history.csv"), history.to_csv())?;
                let periodic = self.cfg.checkpoint_every > 0
                    && self.epoch % self.cfg.checkpoint_every == 0;
                if periodic {
                    self.save_state(&dir.join(format!("state_ep{}.ckpt", self.epoch)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save_state(&dir.join("state_final.ckpt"))?;
            crate::model::save_generator(&dir.join("model_final.ckpt"), &self.gen, &self.store)?;
        }
        Ok(history)
    }

    /// Full training checkpoint: every parameter with its Adam state, BN
    /// running buffers, spectral-norm power-iteration vectors, and the epoch
    /// position. Resuming reproduces the continuous run bit for bit.
    pub fn save_state(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Tensor<f32>)> = Vec::new();
        for id in self.store.ids() {
            let slot = self.store.slot(id);
            let shape = slot.value().shape();
            entries.push((slot.name().to_string(), slot.value().clone()));
            let (m1, m2, step) = self.store.state(id);
            entries.push((format!("{}#m1", slot.name()), Tensor::from_vec(shape, m1.to_vec())?));
            entries.push((format!("{}#m2", slot.name()), Tensor::from_vec(shape, m2.to_vec())?));
            entries.push((format!("{}#t", slot.name()), Tensor::scalar(step as f32)));
        }
        for (name, rs) in self.gen.running_stats() {
            let c = rs.mean.len();
            entries.push((format!("{name}#rm"), Tensor::from_vec(Shape::new(1, c, 1, 1), rs.mean)?));
            entries.push((format!("{name}#rv"), Tensor::from_vec(Shape::new(1, c, 1, 1), rs.var)?));
        }
        let mut sn_entries = Vec::new();
        {
            let disc_names = self.disc.spectral_layer_names();
            let dom_names = self.domain.spectral_layer_names();
            for (sc, name) in self
                .disc
                .spectral_layers()
                .iter()
                .zip(disc_names)
                .map(|(s, n)| (*s, format!("d.{n}")))
                .chain(
                    self.domain
                        .spectral_layers()
                        .iter()
                        .zip(dom_names)
                        .map(|(s, n)| (*s, format!("v.{n}"))),
                )
            {
                let u = sc.u_state().to_vec();
                let len = u.len();
                sn_entries
                    .push((format!("{name}#u"), Tensor::from_vec(Shape::new(1, 1, 1, len), u)?));
            }
        }
        entries.extend(sn_entries);
        let header = format!(
            "{} | {}",
            self.cfg.to_header(self.epoch, self.step),
            self.gen.config().to_header()
        );
        checkpoint::save_with_header(path, &header, &entries)
    }

    /// Restore a full training checkpoint written by [`TrainState::save_state`].
    pub fn load_state(path: &Path) -> Result<Self> {
        let (header, entries) = checkpoint::load_with_header(path)?;
        let (train_header, gen_header) = header
            .split_once(" | ")
            .ok_or_else(|| Error::Checkpoint("missing header separator".into()))?;
        let (cfg, epoch, step) = TrainConfig::from_header(train_header)?;
        let gen_cfg = GeneratorConfig::from_header(gen_header)?;
        let mut state = TrainState::new(gen_cfg, cfg)?;
        state.epoch = epoch;
        state.step = step;

        let map: std::collections::HashMap<String, Tensor<f32>> = entries.into_iter().collect();
        let mut m_restore: Vec<(ParamId, Vec<f32>, Vec<f32>, u64)> = Vec::new();
        let ids: Vec<ParamId> = state.store.ids().collect();
        for id in ids {
            let name = state.store.slot(id).name().to_string();
            let value = map
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if value.shape() != state.store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: checkpoint {} vs model {}",
                    value.shape(),
                    state.store.value(id).shape()
                )));
            }
            let m1 = map
                .get(&format!("{name}#m1"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}#m1")))?;
            let m2 = map
                .get(&format!("{name}#m2"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}#m2")))?;
            let t = map
                .get(&format!("{name}#t"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}#t")))?;
            m_restore.push((id, m1.data().to_vec(), m2.data().to_vec(), t.data()[0] as u64));
            state.store.set_value(id, value.clone());
        }
        for (id, m1, m2, t) in m_restore {
            state.store.restore_state(id, &m1, &m2, t)?;
        }
        for (name, _) in state.gen.running_stats() {
            let rm = map
                .get(&format!("{name}#rm"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}#rm")))?;
            let rv = map
                .get(&format!("{name}#rv"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}#rv")))?;
            state.gen.restore_running_stats(
                &name,
                RunningStats { mean: rm.data().to_vec(), var: rv.data().to_vec() },
            )?;
        }
        let disc_names = state.disc.spectral_layer_names();
        for (sc, name) in state.disc.spectral_layers_mut().into_iter().zip(disc_names) {
            let u = map
                .get(&format!("d.{name}#u"))
                .ok_or_else(|| Error::Checkpoint(format!("missing d.{name}#u")))?;
            sc.set_u_state(u.data());
        }
        let dom_names = state.domain.spectral_layer_names();
        for (sc, name) in state.domain.spectral_layers_mut().into_iter().zip(dom_names) {
            let u = map
                .get(&format!("v.{name}#u"))
                .ok_or_else(|| Error::Checkpoint(format!("missing v.{name}#u")))?;
            sc.set_u_state(u.data());
        }
        Ok(state)
    }
}

/// Harmonize samples with a generator in eval mode, batched.
pub fn harmonize_all(
    gen: &mut Generator<f32>,
    store: &ParamStore<f32>,
    samples: &[CompositeSample],
    batch_size: usize,
) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&CompositeSample> = chunk.iter().collect();
        let (comps, masks, _) = stack_batch(&refs);
        let mut tape = Tape::new(false);
        let y = gen.forward(&mut tape, store, &comps, &masks, false, false)?;
        out.extend(unstack(tape.value(y)));
    }
    Ok(out)
}

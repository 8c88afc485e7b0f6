//! The harmonization generator: a U-Net whose every down/up stage carries a
//! configurable normalization slot, attention on the outermost skip
//! concatenations, and an output head that predicts the full image before the
//! foreground is composited back over the untouched input background.

use super::attention::AttentionBlock;
use super::plan::NormPlan;
use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::norm::{
    masked_channel_stats, NormKind, NormLayer, NormOptions, RunningStats, StatsRow,
};
use crate::optim::{init_bias, init_conv_weight, ParamId, ParamStore};
use crate::tensor::{resize_mask, Element, Shape, Tensor};
use rand_chacha::ChaCha8Rng;

/// Architecture of the generator. The desk preset trains on a CPU in minutes;
/// the paper preset is the full-size network.
#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    /// Number of stride-2 encoder stages (= decoder stages).
    pub depth: usize,
    /// Channels after the first encoder conv; doubled per stage, capped at
    /// `base_channels * max_mult`.
    pub base_channels: usize,
    pub max_mult: usize,
    /// Square input resolution; must be divisible by 2^depth.
    pub input_size: usize,
    /// Attention blocks applied to the outermost skip concatenations.
    pub attention_blocks: usize,
    pub plan: NormPlan,
    pub norm: NormOptions,
}

impl GeneratorConfig {
    pub fn desk(plan: NormPlan) -> Self {
        GeneratorConfig {
            depth: 5,
            base_channels: 16,
            max_mult: 8,
            input_size: 64,
            attention_blocks: 3,
            plan,
            norm: NormOptions::default(),
        }
    }

    pub fn paper(plan: NormPlan) -> Self {
        GeneratorConfig {
            depth: 7,
            base_channels: 64,
            max_mult: 8,
            input_size: 256,
            attention_blocks: 3,
            plan,
            norm: NormOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size % (1 << self.depth) != 0 {
            return Err(Error::Config(format!(
                "input_size {} not divisible by 2^depth = {}",
                self.input_size,
                1 << self.depth
            )));
        }
        if self.input_size >> self.depth < 1 {
            return Err(Error::Config("depth too large for input size".into()));
        }
        if self.plan.slots().len() != 2 * self.depth {
            return Err(Error::Config(format!(
                "plan '{}' has {} slots, generator needs {}",
                self.plan.name(),
                self.plan.slots().len(),
                2 * self.depth
            )));
        }
        if self.attention_blocks + 1 > self.depth {
            return Err(Error::Config(format!(
                "attention_blocks {} exceeds skip count {}",
                self.attention_blocks,
                self.depth - 1
            )));
        }
        Ok(())
    }

    /// Encoder output channels per stage.
    pub fn enc_channels(&self) -> Vec<usize> {
        let cap = self.base_channels * self.max_mult;
        (0..self.depth)
            .map(|i| (self.base_channels << i).min(cap))
            .collect()
    }

    /// Decoder output channels per stage (mirrors the encoder).
    pub fn dec_channels(&self) -> Vec<usize> {
        let e = self.enc_channels();
        (0..self.depth)
            .map(|j| if j + 1 == self.depth { self.base_channels } else { e[self.depth - 2 - j] })
            .collect()
    }

    /// Single-line checkpoint header.
    pub fn to_header(&self) -> String {
        format!(
            "rainnet-v1 depth={} base={} maxmult={} size={} attn={} plan={} eps={} minpix={} litvar={} litroles={}",
            self.depth,
            self.base_channels,
            self.max_mult,
            self.input_size,
            self.attention_blocks,
            self.plan.name(),
            self.norm.eps,
            self.norm.min_pixels,
            self.norm.literal_variance as u8,
            self.norm.literal_roles as u8,
        )
    }

    pub fn from_header(header: &str) -> Result<Self> {
        let mut parts = header.split_whitespace();
        if parts.next() != Some("rainnet-v1") {
            return Err(Error::Checkpoint(format!("unrecognized model header: {header}")));
        }
        let mut kv = std::collections::HashMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad header field {p}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("header missing {k}")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?

                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad header value for {k}")))
        };
        let depth = parse_usize("depth")?;
        let plan = NormPlan::named(&get("plan")?, depth)?;
        let norm = NormOptions {
            eps: get("eps")?.parse().map_err(|_| Error::Checkpoint("bad eps".into()))?,
            min_pixels: parse_usize("minpix")?,
            literal_variance: get("litvar")? == "1",
            literal_roles: get("litroles")? == "1",
            ..NormOptions::default()
        };
        Ok(GeneratorConfig {
            depth,
            base_channels: parse_usize("base")?,
            max_mult: parse_usize("maxmult")?,
            input_size: parse_usize("size")?,
            attention_blocks: parse_usize("attn")?,
            plan,
            norm,
        })
    }
}

struct EncStage<T: Element> {
    w: ParamId,
    b: ParamId,
    norm: NormLayer<T>,
}

struct DecStage<T: Element> {
    w: ParamId,
    b: ParamId,
    norm: NormLayer<T>,
    attention: Option<AttentionBlock<T>>,
}

pub struct Generator<T: Element> {
    cfg: GeneratorConfig,
    enc: Vec<EncStage<T>>,
    dec: Vec<DecStage<T>>,
    head_w: ParamId,
    head_b: ParamId,
    param_ids: Vec<ParamId>,
}

/// In addition to the RGB composite the network always receives the mask as a
/// fourth input channel, so mask-awareness does not depend on the norm plan.
pub const GEN_IN_CHANNELS: usize = 4;
pub const GEN_OUT_CHANNELS: usize = 3;
const KERNEL: usize = 4;
const HEAD_KERNEL: usize = 3;

impl<T: Element> Generator<T> {
    pub fn build(
        cfg: GeneratorConfig,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let first = store.len();
        let e = cfg.enc_channels();
        let u = cfg.dec_channels();
        let slots = cfg.plan.slots();

        let mut enc = Vec::with_capacity(cfg.depth);
        let mut c_in = GEN_IN_CHANNELS;
        for (i, &c_out) in e.iter().enumerate() {
            let w = init_conv_weight(
                store,
                format!("g.enc{i}.w"),
                Shape::new(c_out, c_in, KERNEL, KERNEL),
                rng,
            );
            let b = init_bias(store, format!("g.enc{i}.b"), c_out);
            let norm = NormLayer::build(slots[i], c_out, &format!("g.enc{i}.norm"), store, cfg.norm);
            enc.push(EncStage { w, b, norm });
            c_in = c_out;
        }

        let mut dec = Vec::with_capacity(cfg.depth);
        let mut c_in = e[cfg.depth - 1];
        for (j, &c_out) in u.iter().enumerate() {
            // transposed conv weight is (C_in, C_out, k, k)
            let w = init_conv_weight(
                store,
                format!("g.dec{j}.w"),
                Shape::new(c_in, c_out, KERNEL, KERNEL),
                rng,
            );
            let b = init_bias(store, format!("g.dec{j}.b"), c_out);
            let norm = NormLayer::build(
                slots[cfg.depth + j],
                c_out,
                &format!("g.dec{j}.norm"),
                store,
                cfg.norm,
            );
            let has_skip = j + 1 < cfg.depth;
            let attention = (has_skip && j + cfg.attention_blocks + 1 >= cfg.depth).then(|| {
                let skip_c = e[cfg.depth - 2 - j];
                AttentionBlock::build(store, &format!("g.dec{j}.attn"), skip_c + c_out, rng)
            });
            let next_in = if has_skip { c_out + e[cfg.depth - 2 - j] } else { c_out };
            dec.push(DecStage { w, b, norm, attention });
            c_in = next_in;
        }

        let head_w = init_conv_weight(
            store,
            "g.head.w",
            Shape::new(
                GEN_OUT_CHANNELS,
                cfg.base_channels + GEN_IN_CHANNELS,
                HEAD_KERNEL,
                HEAD_KERNEL,
            ),
            rng,
        );
        let head_b = init_bias(store, "g.head.b", GEN_OUT_CHANNELS);
        let param_ids = (first..store.len()).map(crate::optim::ParamId).collect();
        Ok(Generator { cfg, enc, dec, head_w, head_b, param_ids })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.param_ids
    }

    /// The normalization kind at every slot, encoder then decoder.
    pub fn norm_slot_kinds(&self) -> Vec<NormKind> {
        self.enc
            .iter()
            .map(|s| s.norm.kind)
            .chain(self.dec.iter().map(|s| s.norm.kind))
            .collect()
    }

    fn check_inputs(&self, composite: &Tensor<T>, mask: &Tensor<T>) -> Result<()> {
        let s = composite.shape();
        let m = mask.shape();
        if s.c != GEN_OUT_CHANNELS || s.h != self.cfg.input_size || s.w != self.cfg.input_size {
            return Err(Error::ShapeMismatch {
                op: "generator_forward",
                dim: "composite",
                expected: format!("Nx3x{0}x{0}", self.cfg.input_size),
                got: s.to_string(),
            });
        }
        if m.n != s.n || m.c != 1 || m.h != s.h || m.w != s.w {
            return Err(Error::ShapeMismatch {
                op: "generator_forward",
                dim: "mask",
                expected: format!("{}x1x{}x{}", s.n, s.h, s.w),
                got: m.to_string(),
            });
        }
        Ok(())
    }

    /// Masks resized to every stage resolution: index r holds size/2^(r+1).
    fn mask_pyramid(&self, mask: &Tensor<T>) -> Vec<Tensor<T>> {
        (1..=self.cfg.depth)
            .map(|lvl| {
                let s = self.cfg.input_size >> lvl;
                resize_mask(mask, s, s)
            })
            .collect()
    }

    /// Harmonize: predict a full image and composite the foreground over the
    /// bitwise-unchanged input background.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        composite: &Tensor<T>,
        mask: &Tensor<T>,
        training: bool,
        trainable: bool,
    ) -> Result<Var> {
        self.check_inputs(composite, mask)?;
        let comp_in = tape.constant(composite.clone());
        self.forward_from_var(tape, store, comp_in, mask, training, trainable)
    }

    /// As [`Generator::forward`] with the composite already on the tape
    /// (gradients can then flow to the composite itself).
    pub fn forward_from_var(
        &mut self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        comp_in: Var,
        mask: &Tensor<T>,
        training: bool,
        trainable: bool,
    ) -> Result<Var> {
        self.check_inputs(tape.value(comp_in), mask)?;
        let pyramid = self.mask_pyramid(mask);
        let mask_in = tape.constant(mask.clone());
        let input0 = tape.concat_channels(comp_in, mask_in)?;
        let mut x = input0;

        // Skip taps are pre-normalization: the decoder's low-level path keeps
        // the per-sample tone that instance-style normalization removes.
        let mut skips: Vec<Var> = Vec::with_capacity(self.cfg.depth);
        for (i, stage) in self.enc.iter_mut().enumerate() {
            let w = if trainable { tape.param(store, stage.w) } else { tape.param_frozen(store, stage.w) };
            let b = if trainable { tape.param(store, stage.b) } else { tape.param_frozen(store, stage.b) };
            let conv = tape.conv2d(x, w, Some(b), 2, 1)?;
            skips.push(conv);
            let normed = stage.norm.forward(tape, store, conv, &pyramid[i], training, trainable)?;
            x = tape.leaky_relu(normed, 0.2);
        }

        for (j, stage) in self.dec.iter_mut().enumerate() {
            let w = if trainable { tape.param(store, stage.w) } else { tape.param_frozen(store, stage.w) };
            let b = if trainable { tape.param(store, stage.b) } else { tape.param_frozen(store, stage.b) };
            let up = tape.conv_transpose2d(x, w, Some(b), 2, 1)?;
            let mask_here = if j + 1 < self.cfg.depth {
                // pyramid level of the upsampled feature
                &pyramid[self.cfg.depth - 2 - j]
            } else {
                mask
            };
            let normed = stage.norm.forward(tape, store, up, mask_here, training, trainable)?;
            let act = tape.relu(normed);
            x = if j + 1 < self.cfg.depth {
                let skip = skips[self.cfg.depth - 2 - j];
                match &stage.attention {
                    Some(attn) => attn.forward(tape, store, skip, act, trainable)?,
                    None => tape.concat_channels(skip, act)?,
                }
            } else {
                act
            };
        }

        // full-resolution skip: the raw input joins the head so every plan
        // has an absolute-tone path to the output
        let head_in = tape.concat_channels(x, input0)?;
        let hw = if trainable { tape.param(store, self.head_w) } else { tape.param_frozen(store, self.head_w) };
        let hb = if trainable { tape.param(store, self.head_b) } else { tape.param_frozen(store, self.head_b) };
        let pre = tape.conv2d(head_in, hw, Some(hb), 1, 1)?;
        let img = tape.tanh(pre);
        tape.mask_mix(img, comp_in, mask)
    }

    /// Eval forward that also records masked fg/bg statistics at every
    /// normalization slot (the per-layer debug dump).
    pub fn forward_with_stats(
        &mut self,
        store: &ParamStore<T>,
        composite: &Tensor<T>,
        mask: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<StatsRow>)> {
        self.check_inputs(composite, mask)?;
        let mut tape = Tape::new(false);
        let pyramid = self.mask_pyramid(mask);
        let mut rows = Vec::new();
        let probe = |tape: &Tape<T>, v: Var, m: &Tensor<T>, layer: usize, rows: &mut Vec<StatsRow>| {
            let inv = m.map(|x| T::one() - x);
            let fg = masked_channel_stats(tape.value(v), m, 0.0);
            let bg = masked_channel_stats(tape.value(v), &inv, 0.0);
            if let (Ok(fg), Ok(bg)) = (fg, bg) {
                let c = tape.value(v).shape().c;
                for ch in 0..c {
                    rows.push(StatsRow {
                        layer,
                        channel: ch,
                        fg_mean: fg.mean.data()[ch].as_f64(),
                        fg_std: fg.std.data()[ch].as_f64(),
                        bg_mean: bg.mean.data()[ch].as_f64(),
                        bg_std: bg.std.data()[ch].as_f64(),
                    });
                }
            }
        };

        let comp_in = tape.constant(composite.clone());
        let mask_in = tape.constant(mask.clone());
        let input0 = tape.concat_channels(comp_in, mask_in)?;
        let mut x = input0;
        let mut skips = Vec::new();
        for (i, stage) in self.enc.iter_mut().enumerate() {
            let w = tape.param_frozen(store, stage.w);
            let b = tape.param_frozen(store, stage.b);
            let conv = tape.conv2d(x, w, Some(b), 2, 1)?;
            skips.push(conv);
            let normed = stage.norm.forward(&mut tape, store, conv, &pyramid[i], false, false)?;
            probe(&tape, normed, &pyramid[i], i + 1, &mut rows);
            x = tape.leaky_relu(normed, 0.2);
        }
        for (j, stage) in self.dec.iter_mut().enumerate() {
            let w = tape.param_frozen(store, stage.w);
            let b = tape.param_frozen(store, stage.b);
            let up = tape.conv_transpose2d(x, w, Some(b), 2, 1)?;
            let mask_here = if j + 1 < self.cfg.depth {
                &pyramid[self.cfg.depth - 2 - j]
            } else {
                mask
            };
            let normed = stage.norm.forward(&mut tape, store, up, mask_here, false, false)?;
            probe(&tape, normed, mask_here, self.cfg.depth + j + 1, &mut rows);
            let act = tape.relu(normed);
            x = if j + 1 < self.cfg.depth {
                let skip = skips[self.cfg.depth - 2 - j];
                match &stage.attention {
                    Some(attn) => attn.forward(&mut tape, store, skip, act, false)?,
                    None => tape.concat_channels(skip, act)?,
                }
            } else {
                act
            };
        }
        let head_in = tape.concat_channels(x, input0)?;
        let hw = tape.param_frozen(store, self.head_w);
        let hb = tape.param_frozen(store, self.head_b);
        let pre = tape.conv2d(head_in, hw, Some(hb), 1, 1)?;
        let img = tape.tanh(pre);
        let out = tape.mask_mix(img, comp_in, mask)?;
        Ok((tape.value(out).clone(), rows))
    }

    /// BN running buffers for checkpointing, keyed by slot name.
    pub fn running_stats(&self) -> Vec<(String, RunningStats<T>)> {
        let mut out = Vec::new();
        for (i, s) in self.enc.iter().enumerate() {
            if let Some(r) = s.norm.running() {
                out.push((format!("g.enc{i}.norm"), r.clone()));
            }
        }
        for (j, s) in self.dec.iter().enumerate() {
            if let Some(r) = s.norm.running() {
                out.push((format!("g.dec{j}.norm"), r.clone()));
            }
        }
        out
    }

    pub fn restore_running_stats(&mut self, name: &str, stats: RunningStats<T>) -> Result<()> {
        for (i, s) in self.enc.iter_mut().enumerate() {
            if format!("g.enc{i}.norm") == name {
                *s.norm.running_mut().ok_or_else(|| {
                    Error::Checkpoint(format!("{name} is not a BN slot"))
                })? = stats;
                return Ok(());
            }
        }
        for (j, s) in self.dec.iter_mut().enumerate() {
            if format!("g.dec{j}.norm") == name {
                *s.norm.running_mut().ok_or_else(|| {
                    Error::Checkpoint(format!("{name} is not a BN slot"))
                })? = stats;
                return Ok(());
            }
        }
        Err(Error::Checkpoint(format!("unknown running-stats slot {name}")))
    }
}

/// Save a generator-only model checkpoint: a config header line, every
/// generator parameter, and the BN running buffers.
pub fn save_generator(
    path: &std::path::Path,
    gen: &Generator<f32>,
    store: &ParamStore<f32>,
) -> Result<()> {
    let mut entries: Vec<(String, Tensor<f32>)> = Vec::new();
    for &id in gen.param_ids() {
        let slot = store.slot(id);
        entries.push((slot.name().to_string(), slot.value().clone()));
    }
    for (name, rs) in gen.running_stats() {
        let c = rs.mean.len();
        entries.push((
            format!("{name}#rm"),
            Tensor::from_vec(Shape::new(1, c, 1, 1), rs.mean)?,
        ));
        entries.push((
            format!("{name}#rv"),
            Tensor::from_vec(Shape::new(1, c, 1, 1), rs.var)?,
        ));
    }
    crate::checkpoint::save_with_header(path, &gen.config().to_header(), &entries)
}

/// Load a generator-only model checkpoint, validating shape agreement.
pub fn load_generator(path: &std::path::Path) -> Result<(Generator<f32>, ParamStore<f32>)> {
    let (header, entries) = crate::checkpoint::load_with_header(path)?;
    let cfg = GeneratorConfig::from_header(&header)?;
    let mut store = ParamStore::new();
    let mut rng = crate::rng::rng_from(0, "load-generator", 0);
    let mut gen = Generator::build(cfg, &mut store, &mut rng)?;
    let map: std::collections::HashMap<String, Tensor<f32>> = entries.into_iter().collect();
    for &id in gen.param_ids() {
        let name = store.slot(id).name().to_string();
        let t = map
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if t.shape() != store.value(id).shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: checkpoint {} vs model {}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        store.set_value(id, t.clone());
    }
    for (name, _) in gen.running_stats() {
        let rm = map
            .get(&format!("{name}#rm"))
            .ok_or_else(|| Error::Checkpoint(format!("missing {name}#rm")))?;
        let rv = map
            .get(&format!("{name}#rv"))
            .ok_or_else(|| Error::Checkpoint(format!("missing {name}#rv")))?;
        gen.restore_running_stats(
            &name,
            RunningStats { mean: rm.data().to_vec(), var: rv.data().to_vec() },
        )?;
    }
    Ok((gen, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_gen(plan: &str) -> (Generator<f32>, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::rng_from(61, "gen", 0);
        let cfg = GeneratorConfig::desk(NormPlan::named(plan, 5).unwrap());
        let g = Generator::build(cfg, &mut store, &mut rng).unwrap();
        (g, store)
    }

    #[test]
    fn desk_channel_progression() {
        let cfg = GeneratorConfig::desk(NormPlan::named("IN", 5).unwrap());
        assert_eq!(cfg.enc_channels(), vec![16, 32, 64, 128, 128]);
        assert_eq!(cfg.dec_channels(), vec![128, 64, 32, 16, 16]);
    }

    #[test]
    fn desk_parameter_shape_table() {
        // Hand-computed: enc convs (out,in,4,4), dec transposed convs
        // (in,out,4,4) where in doubles after each skip concat; head 3x3.
        let (_, store) = desk_gen("RAIN-Decoder");
        let expect: &[(&str, [usize; 4])] = &[
            ("g.enc0.w", [16, 4, 4, 4]),
            ("g.enc1.w", [32, 16, 4, 4]),
            ("g.enc2.w", [64, 32, 4, 4]),
            ("g.enc3.w", [128, 64, 4, 4]),
            ("g.enc4.w", [128, 128, 4, 4]),
            ("g.dec0.w", [128, 128, 4, 4]),
            ("g.dec1.w", [256, 64, 4, 4]),
            ("g.dec2.w", [128, 32, 4, 4]),
            ("g.dec3.w", [64, 16, 4, 4]),
            ("g.dec4.w", [32, 16, 4, 4]),
            ("g.head.w", [3, 20, 3, 3]),
        ];
        for (name, dims) in expect {
            let id = store.find(name).unwrap_or_else(|| panic!("missing {name}"));
            let s = store.value(id).shape();
            assert_eq!([s.n, s.c, s.h, s.w], *dims, "{name}");
        }
        // attention on the three outermost skips: dec1, dec2, dec3
        assert!(store.find("g.dec0.attn.w").is_none());
        assert_eq!(
            store.value(store.find("g.dec1.attn.w").unwrap()).shape(),
            Shape::new(128, 128, 1, 1)
        );
        assert_eq!(
            store.value(store.find("g.dec2.attn.w").unwrap()).shape(),
            Shape::new(64, 64, 1, 1)
        );
        assert_eq!(
            store.value(store.find("g.dec3.attn.w").unwrap()).shape(),
            Shape::new(32, 32, 1, 1)
        );
    }

    #[test]
    fn plan_slots_land_on_stages() {
        let (g, _) = desk_gen("RAIN-Decoder");
        let kinds = g.norm_slot_kinds();
        assert_eq!(kinds.len(), 10);
        assert!(kinds[..5].iter().all(|k| *k == NormKind::Instance));
        assert!(kinds[5..].iter().all(|k| *k == NormKind::Rain));
    }

    #[test]
    fn background_is_preserved_bitwise_for_random_weights() {
        let (mut g, store) = desk_gen("RAIN-Decoder");
        let mut rng = crate::rng::rng_from(62, "genbg", 0);
        let comp = Tensor::<f32>::rand_uniform(Shape::new(2, 3, 64, 64), -1.0, 1.0, &mut rng);
        let mask = crate::gradcheck::rand_mask(2, 64, 64, 0.1, 0.4, &mut rng).cast::<f32>();
        let mut tape = Tape::new(false);
        let out = g.forward(&mut tape, &store, &comp, &mask, false, false).unwrap();
        let out = tape.value(out);
        let plane = 64 * 64;
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..plane {
                    if mask.data()[n * plane + i] == 0.0 {
                        assert_eq!(
                            out.data()[(n * 3 + c) * plane + i].to_bits(),
                            comp.data()[(n * 3 + c) * plane + i].to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zero_mask_returns_input_exactly() {
        let (mut g, store) = desk_gen("IN");
        let mut rng = crate::rng::rng_from(63, "genzero", 0);
        let comp = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 64, 64), -1.0, 1.0, &mut rng);
        let mask = Tensor::zeros(Shape::new(1, 1, 64, 64));
        let mut tape = Tape::new(false);
        let out = g.forward(&mut tape, &store, &comp, &mask, false, false).unwrap();
        assert_eq!(tape.value(out).data(), comp.data());
    }

    #[test]
    fn foreground_stays_in_tanh_range() {
        let (mut g, store) = desk_gen("RAIN-Decoder");
        let mut rng = crate::rng::rng_from(64, "genrange", 0);
        let comp = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 64, 64), -1.0, 1.0, &mut rng);
        let mask = crate::gradcheck::rand_mask(1, 64, 64, 0.2, 0.5, &mut rng).cast::<f32>();
        let mut tape = Tape::new(false);
        let out = g.forward(&mut tape, &store, &comp, &mask, false, false).unwrap();
        for v in tape.value(out).data() {
            assert!(*v >= -1.0 && *v <= 1.0);
        }
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let (mut g, store) = desk_gen("IN");
        let comp = Tensor::<f32>::zeros(Shape::new(1, 3, 32, 32));
        let mask = Tensor::zeros(Shape::new(1, 1, 32, 32));
        let mut tape = Tape::new(false);
        assert!(g.forward(&mut tape, &store, &comp, &mask, false, false).is_err());
    }

    #[test]
    fn config_header_round_trips() {
        let cfg = GeneratorConfig::desk(NormPlan::named("RAIN-3", 5).unwrap());
        let header = cfg.to_header();
        let back = GeneratorConfig::from_header(&header).unwrap();
        assert_eq!(back.depth, 5);
        assert_eq!(back.plan.name(), "RAIN-3");
        assert_eq!(back.input_size, 64);
        assert_eq!(back.to_header(), header);
    }

    #[test]
    fn plan_length_mismatch_is_an_error() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = crate::rng::rng_from(65, "genbad", 0);
        let mut cfg = GeneratorConfig::desk(NormPlan::named("IN", 5).unwrap());
        cfg.plan = NormPlan::named("IN", 4).unwrap(); // 8 slots for depth 5
        assert!(Generator::build(cfg, &mut store, &mut rng).is_err());
    }
}

//! Run configuration: plain-text `key = value` fields grouped in named
//! sections ([model], [train], [data]), parsed as TOML. Every field is
//! optional; omitted fields fall back to the scale preset (desk or paper),
//! and command-line flags override file values.

use crate::data::JitterSpec;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{GeneratorConfig, NormPlan};
use crate::norm::NormOptions;
use crate::optim::AdamConfig;
use crate::train::TrainConfig;
use serde::Deserialize;
use std::path::Path;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!("unknown scale '{other}' (desk|paper)"))),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileModel {
    depth: Option<usize>,
    base_channels: Option<usize>,
    max_mult: Option<usize>,
    input_size: Option<usize>,
    attention_blocks: Option<usize>,
    plan: Option<String>,
    eps: Option<f64>,
    min_pixels: Option<usize>,
    literal_variance: Option<bool>,
    literal_roles: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTrain {
    scale: Option<String>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    adam_eps: Option<f64>,
    lambda_adv: Option<f64>,
    lambda_ver: Option<f64>,
    lambda_rec: Option<f64>,
    adversarial: Option<bool>,
    verification: Option<bool>,
    disc_base: Option<usize>,
    domain_base: Option<usize>,
    domain_levels: Option<usize>,
    checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileData {
    train_samples: Option<usize>,
    test_samples: Option<usize>,
    brightness: Option<[f64; 2]>,
    color: Option<[f64; 2]>,
    contrast: Option<[f64; 2]>,
    gamma: Option<[f64; 2]>,
    identity_jitter: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    model: FileModel,
    #[serde(default)]
    train: FileTrain,
    #[serde(default)]
    data: FileData,
}

/// Fully resolved settings for a run.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub scale: Scale,
    pub plan_name: String,
    pub train: TrainConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub jitter: JitterSpec,
    model: FileModel,
}

impl RunSettings {
    /// Preset defaults for a scale, before any file/flag overrides.
    pub fn preset(scale: Scale, seed: u64) -> Self {
        let train = match scale {
            Scale::Desk => TrainConfig::desk(seed),
            Scale::Paper => TrainConfig::paper(seed),
        };
        let (train_samples, test_samples) = match scale {
            Scale::Desk => (500, 100),
            Scale::Paper => (5000, 500),
        };
        RunSettings {
            scale,
            plan_name: "RAIN-Decoder".to_string(),
            train,
            train_samples,
            test_samples,
            jitter: JitterSpec::strong(),
            model: FileModel::default(),
        }
    }

    /// Load a config file over the presets. The file's `[train] scale` (if
    /// present) picks the preset base.
    pub fn from_file(path: &Path, seed_flag: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_with(&text, seed_flag)
    }

    pub fn from_str_with(text: &str, seed_flag: Option<u64>) -> Result<Self> {
        let file: FileConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        let scale: Scale = file
            .train
            .scale
            .as_deref()
            .unwrap_or("desk")
            .parse()?;
        let seed = seed_flag.or(file.train.seed).unwrap_or(7);
        let mut s = Self::preset(scale, seed);

        let t = &file.train;
        if let Some(v) = t.epochs {
            s.train.epochs = v;
        }
        if let Some(v) = t.batch_size {
            s.train.batch_size = v;
        }
        let adam = AdamConfig {
            lr: t.learning_rate.unwrap_or(s.train.adam.lr),
            beta1: t.beta1.unwrap_or(s.train.adam.beta1),
            beta2: t.beta2.unwrap_or(s.train.adam.beta2),
            eps: t.adam_eps.unwrap_or(s.train.adam.eps),
        };
        s.train.adam = adam;
        s.train.weights = LossWeights {
            adv: t.lambda_adv.unwrap_or(s.train.weights.adv),
            ver: t.lambda_ver.unwrap_or(s.train.weights.ver),
            rec: t.lambda_rec.unwrap_or(s.train.weights.rec),
        };
        if let Some(v) = t.adversarial {
            s.train.adversarial = v;
        }
        if let Some(v) = t.verification {
            s.train.verification = v;
        }
        if let Some(v) = t.disc_base {
            s.train.disc_base = v;
        }
        if let Some(v) = t.domain_base {
            s.train.domain_base = v;
        }
        if let Some(v) = t.domain_levels {
            s.train.domain_levels = v;
        }
        if let Some(v) = t.checkpoint_every {
            s.train.checkpoint_every = v;
        }

        let d = &file.data;
        if let Some(v) = d.train_samples {
            s.train_samples = v;
        }
        if let Some(v) = d.test_samples {
            s.test_samples = v;
        }
        if d.identity_jitter == Some(true) {
            s.jitter = JitterSpec::identity();
        }
        if let Some(r) = d.brightness {
            s.jitter.brightness = (r[0], r[1]);
        }
        if let Some(r) = d.color {
            s.jitter.color = (r[0], r[1]);
        }
        if let Some(r) = d.contrast {
            s.jitter.contrast = (r[0], r[1]);
        }
        if let Some(r) = d.gamma {
            s.jitter.gamma = (r[0], r[1]);
        }

        if let Some(p) = &file.model.plan {
            s.plan_name = p.clone();
        }
        s.model = file.model;
        Ok(s)
    }

    pub fn set_plan(&mut self, plan: &str) {
        self.plan_name = plan.to_string();
    }

    /// Resolve the generator architecture (plan name checked against depth).
    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let mut g = match self.scale {
            Scale::Desk => GeneratorConfig::desk(NormPlan::named("IN", 5)?),
            Scale::Paper => GeneratorConfig::paper(NormPlan::named("IN", 7)?),
        };
        let m = &self.model;
        if let Some(v) = m.depth {
            g.depth = v;
        }
        if let Some(v) = m.base_channels {
            g.base_channels = v;
        }
        if let Some(v) = m.max_mult {
            g.max_mult = v;
        }
        if let Some(v) = m.input_size {
            g.input_size = v;
        }
        if let Some(v) = m.attention_blocks {
            g.attention_blocks = v;
        }
        g.norm = NormOptions {
            eps: m.eps.unwrap_or(g.norm.eps),
            min_pixels: m.min_pixels.unwrap_or(g.norm.min_pixels),
            literal_variance: m.literal_variance.unwrap_or(g.norm.literal_variance),
            literal_roles: m.literal_roles.unwrap_or(g.norm.literal_roles),
            ..g.norm
        };
        g.plan = NormPlan::named(&self.plan_name, g.depth)?;
        g.validate()?;
        Ok(g)
    }

    pub fn input_size(&self) -> usize {
        self.model.input_size.unwrap_or(match self.scale {
            Scale::Desk => 64,
            Scale::Paper => 256,
        })
    }
}

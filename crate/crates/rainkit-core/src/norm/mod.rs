//! Masked region statistics and the family of normalization layers the
//! generator can carry: None, IN, BN, RN and region-aware adaptive IN.

mod layers;
mod stats;

pub use layers::{
    batch_norm, instance_norm, rain, region_norm_rn, NormLayer, RunningStats,
};
pub use stats::{masked_channel_stats, masked_channel_stats_with, RegionStats};

use serde::Deserialize;

/// Which normalization a slot applies.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum NormKind {
    /// No normalization at this slot.
    None,
    /// Instance normalization with learnable per-channel affine.
    Instance,
    /// Batch normalization with running statistics and learnable affine.
    Batch,
    /// Region normalization: foreground and background normalized separately
    /// with pooled batch statistics, no cross-region flow; learnable affine.
    Region,
    /// Region-aware adaptive instance normalization. No learnable affine: the
    /// scale and shift are the background region's statistics.
    Rain,
}

impl NormKind {
    pub fn token(self) -> &'static str {
        match self {
            NormKind::None => "-",
            NormKind::Instance => "IN",
            NormKind::Batch => "BN",
            NormKind::Region => "RN",
            NormKind::Rain => "R",
        }
    }

    pub fn has_affine(self) -> bool {
        matches!(self, NormKind::Instance | NormKind::Batch | NormKind::Region)
    }

    /// Whether this slot consumes the resized foreground mask.
    pub fn needs_mask(self) -> bool {
        matches!(self, NormKind::Region | NormKind::Rain)
    }
}

/// Numerics and policy knobs shared by all normalization layers.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(default)]
pub struct NormOptions {
    /// Epsilon added under the square root of every standard deviation.
    pub eps: f64,
    /// Regions with fewer sites than this (per sample, at the current
    /// resolution) route region-aware normalization through the IN fallback.
    pub min_pixels: usize,
    /// Literal variance summand: sum (F o M - mu)^2 over *all* sites, which
    /// contributes mu^2 at every masked-out site. Off by default; the default
    /// restricts the residual sum to mask==1 sites.
    pub literal_variance: bool,
    /// Literal role mapping: multiply by the background *mean* and add the
    /// background *std*. Off by default; the default is the AdaIN-style
    /// mapping (scale = background std, shift = background mean).
    pub literal_roles: bool,
    /// Running-statistics momentum for batch normalization.
    pub bn_momentum: f64,
}

impl Default for NormOptions {
    fn default() -> Self {
        NormOptions {
            eps: 1e-5,
            min_pixels: 2,
            literal_variance: false,
            literal_roles: false,
            bn_momentum: 0.1,
        }
    }
}

/// One row of the per-layer statistics dump (see the generator's debug dump).
#[derive(Clone, Debug)]
pub struct StatsRow {
    pub layer: usize,
    pub channel: usize,
    pub fg_mean: f64,
    pub fg_std: f64,
    pub bg_mean: f64,
    pub bg_std: f64,
}

pub fn stats_rows_to_csv(rows: &[StatsRow]) -> String {
    let mut out = String::from("layer,channel,fg_mean,fg_std,bg_mean,bg_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.layer, r.channel, r.fg_mean, r.fg_std, r.bg_mean, r.bg_std
        ));
    }
    out
}

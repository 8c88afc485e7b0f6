//! Normalization plans: which kind sits at each of the generator's 2*depth
//! normalization slots (depth encoder slots then depth decoder slots, in
//! forward order, 1-indexed in names and docs).
//!
//! Named plans are defined relative to the depth. At depth 7 they reproduce
//! the published 14-slot table exactly; shallower networks truncate by the
//! same rules (encoder-side plans drop innermost slots, decoder-side plans
//! symmetrically):
//!   - `IN` / `BN` / `RN` / `None`: that kind at every slot.
//!   - `RAIN-Encoder`: RAIN at slots 1..=d, IN elsewhere.
//!   - `RAIN-Decoder`: RAIN at slots d+1..=2d, IN elsewhere.
//!   - `RAIN-Decoder-k` (1 <= k <= d): RAIN at the last k slots, IN elsewhere.
//!   - `RAIN-k` (1 <= k < d): RAIN at the outermost k slots of encoder and
//!     decoder (1..=k and 2d-k+1..=2d), IN elsewhere.
//!   - `RAIN-Inner-k` (1 <= k <= d): RAIN at the innermost k slots of each
//!     side (d-k+1..=d+k), IN elsewhere.

use crate::error::{Error, Result};
use crate::norm::NormKind;

/// Per-slot normalization assignment for a generator of a given depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormPlan {
    name: String,
    slots: Vec<NormKind>,
}

impl NormPlan {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// One kind per normalization slot; length is 2*depth.
    pub fn slots(&self) -> &[NormKind] {
        &self.slots
    }

    pub fn depth(&self) -> usize {
        self.slots.len() / 2
    }

    pub fn from_slots(name: impl Into<String>, slots: Vec<NormKind>) -> Self {
        NormPlan { name: name.into(), slots }
    }

    /// Build a named plan for a generator of `depth` down/up stages.
    pub fn named(name: &str, depth: usize) -> Result<Self> {
        let n = 2 * depth;
        let uniform = |kind: NormKind| vec![kind; n];
        let rain_at = |pred: &dyn Fn(usize) -> bool| -> Vec<NormKind> {
            // slot index 1-based
            (1..=n)
                .map(|i| if pred(i) { NormKind::Rain } else { NormKind::Instance })
                .collect()
        };
        let bad_k = |k: usize, max: usize| {
            Error::Config(format!(
                "plan '{name}': k={k} out of range 1..={max} at depth {depth}"
            ))
        };

        let slots = match name {
            "None" => uniform(NormKind::None),
            "IN" => uniform(NormKind::Instance),
            "BN" => uniform(NormKind::Batch),
            "RN" => uniform(NormKind::Region),
            "RAIN-Encoder" => rain_at(&|i| i <= depth),
            "RAIN-Decoder" => rain_at(&|i| i > depth),
            _ => {
                if let Some(k) = name.strip_prefix("RAIN-Decoder-").and_then(|s| s.parse::<usize>().ok()) {
                    if k < 1 || k > depth {
                        return Err(bad_k(k, depth));
                    }
                    rain_at(&|i| i > n - k)
                } else if let Some(k) = name.strip_prefix("RAIN-Inner-").and_then(|s| s.parse::<usize>().ok()) {
                    if k < 1 || k > depth {
                        return Err(bad_k(k, depth));
                    }
                    rain_at(&|i| i > depth - k && i <= depth + k)
                } else if let Some(k) = name.strip_prefix("RAIN-").and_then(|s| s.parse::<usize>().ok()) {
                    if k < 1 || k >= depth {
                        return Err(bad_k(k, depth.saturating_sub(1)));
                    }
                    rain_at(&|i| i <= k || i > n - k)
                } else {
                    return Err(Error::UnknownPlan {
                        name: name.to_string(),
                        valid: VALID_PLAN_FORMS.join(", "),
                    });
                }
            }
        };
        Ok(NormPlan { name: name.to_string(), slots })
    }

    /// Compact token row, e.g. "IN IN R R".
    pub fn tokens(&self) -> String {
        self.slots
            .iter()
            .map(|k| k.token())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub const VALID_PLAN_FORMS: &[&str] = &[
    "None",
    "IN",
    "BN",
    "RN",
    "RAIN-Encoder",
    "RAIN-Decoder",
    "RAIN-Decoder-<k>",
    "RAIN-<k>",
    "RAIN-Inner-<k>",
];

#[cfg(test)]
mod tests {
    use super::*;
    use NormKind::{Instance as I, Rain as R};

    fn kinds(plan: &str, depth: usize) -> Vec<NormKind> {
        NormPlan::named(plan, depth).unwrap().slots().to_vec()
    }

    #[test]
    fn rain_decoder_depth7_matches_published_row() {
        let got = kinds("RAIN-Decoder", 7);
        let want = [I, I, I, I, I, I, I, R, R, R, R, R, R, R];
        assert_eq!(got, want);
    }

    #[test]
    fn rain_1_places_outermost_pair() {
        let got = kinds("RAIN-1", 7);
        assert_eq!(got[0], R);
        assert_eq!(got[13], R);
        assert!(got[1..13].iter().all(|k| *k == I));
    }

    #[test]
    fn rain_inner_3_covers_middle_six() {
        let got = kinds("RAIN-Inner-3", 7);
        let want = [I, I, I, I, R, R, R, R, R, R, I, I, I, I];
        assert_eq!(got, want);
    }

    #[test]
    fn depth5_truncation() {
        assert_eq!(kinds("RAIN-Decoder", 5), [I, I, I, I, I, R, R, R, R, R]);
        let r1 = kinds("RAIN-1", 5);
        assert_eq!(r1[0], R);
        assert_eq!(r1[9], R);
        assert_eq!(kinds("RAIN-Inner-2", 5), [I, I, I, R, R, R, R, I, I, I]);
    }

    #[test]
    fn unknown_plan_lists_valid_names() {
        let err = NormPlan::named("SPADE", 5).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("RAIN-Decoder"), "{msg}");
    }

    #[test]
    fn out_of_range_k_is_rejected() {
        assert!(NormPlan::named("RAIN-7", 7).is_err());
        assert!(NormPlan::named("RAIN-Inner-8", 7).is_err());
        assert!(NormPlan::named("RAIN-Decoder-0", 7).is_err());
    }
}

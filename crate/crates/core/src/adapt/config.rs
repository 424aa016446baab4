use std::fmt;
use std::str::FromStr;

use crate::fusion::{FusionConfig, FusionMode};
use crate::segmodel::{ModelConfig, GROUPS};
use crate::setloss::LossWeights;
use crate::{Error, Result};

/// Which segmentation groups are fine-tuned and which move at test time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    Small,
    Tiny,
    /// Tiny's frozen set, no adaptation: the single-frame reference model.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Small, Variant::Tiny, Variant::Baseline];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Small => "small",
            Variant::Tiny => "tiny",
            Variant::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown variant {s:?} (full, small, tiny, baseline)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupFlags {
    pub trainable: bool,
    pub adaptive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariantMask {
    pub variant: Variant,
    pub flags: Vec<(&'static str, GroupFlags)>,
}

impl VariantMask {
    pub fn new(variant: Variant) -> Self {
        let head_side = ["transformer_block", "multistage_decoder", "class_head", "mask_head"];
        let flags = GROUPS
            .iter()
            .map(|&g| {
                let tail = head_side.contains(&g);
                let f = match variant {
                    Variant::Full => GroupFlags { trainable: true, adaptive: true },
                    Variant::Small => GroupFlags { trainable: true, adaptive: tail || g == "pixel_decoder" },
                    Variant::Tiny => GroupFlags { trainable: tail, adaptive: tail },
                    Variant::Baseline => GroupFlags { trainable: tail, adaptive: false },
                };
                (g, f)
            })
            .collect();
        VariantMask { variant, flags }
    }

    fn get(&self, group: &str) -> GroupFlags {
        self.flags
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, f)| *f)
            .unwrap_or(GroupFlags { trainable: false, adaptive: false })
    }

    pub fn trainable(&self, group: &str) -> bool {
        self.get(group).trainable
    }

    pub fn adaptive(&self, group: &str) -> bool {
        self.get(group).adaptive
    }

    pub fn frozen_groups(&self) -> Vec<&'static str> {
        self.flags.iter().filter(|(_, f)| !f.trainable).map(|(g, _)| *g).collect()
    }

    pub fn adaptive_groups(&self) -> Vec<&'static str> {
        self.flags.iter().filter(|(_, f)| f.adaptive).map(|(g, _)| *g).collect()
    }
}

/// How the additional frames are picked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// No additional frames and no adaptation.
    SingleFrame,
    Random,
    /// Greedy on the fusion action head, trained towards the sibling action
    /// with the lowest observed ground-truth loss.
    BestLoss,
}

impl Policy {
    pub fn tag(self) -> &'static str {
        match self {
            Policy::SingleFrame => "single",
            Policy::Random => "random",
            Policy::BestLoss => "bestloss",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "singleframe" => Ok(Policy::SingleFrame),
            "random" => Ok(Policy::Random),
            "bestloss" | "best" => Ok(Policy::BestLoss),
            _ => Err(format!("unknown policy {s:?} (single, random, bestloss)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    /// Inner step size.
    pub alpha: f64,
    /// Gradient steps per adaptation.
    pub inner_steps: usize,
    /// Additional frames gathered before adapting.
    pub steps: usize,
    /// 2 differentiates through the inner gradient; 1 treats it as a constant.
    pub meta_order: u8,
    pub variant: Variant,
    pub policy: Policy,
    pub adapt_on_inference: bool,
    pub epochs: usize,
    pub batch: usize,
    pub lr_model: f64,
    pub lr_fusion: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    /// Exploration rate at the first and last epoch (linear in between).
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Weight of the auxiliary set loss on the refined frame-0 predictions; 0 disables it.
    pub aux_weight: f64,
    pub loss: LossWeights,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            alpha: 1e-3,
            inner_steps: 1,
            steps: 1,
            meta_order: 2,
            variant: Variant::Tiny,
            policy: Policy::Random,
            adapt_on_inference: true,
            epochs: 10,
            batch: 16,
            lr_model: 1e-3,
            lr_fusion: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            aux_weight: 0.0,
            loss: LossWeights::default(),
        }
    }
}

impl AdaptConfig {
    pub fn mask(&self) -> VariantMask {
        VariantMask::new(self.variant)
    }

    /// Whether inference runs the inner step at all.
    pub fn adapts(&self) -> bool {
        self.adapt_on_inference && self.policy != Policy::SingleFrame && self.variant != Variant::Baseline
    }

    /// Whether training uses the fusion module.
    pub fn uses_fusion(&self) -> bool {
        self.policy != Policy::SingleFrame && self.variant != Variant::Baseline
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be positive".into());
        }
        if !(1..=2).contains(&self.meta_order) {
            return bad(format!("meta_order must be 1 or 2, got {}", self.meta_order));
        }
        if self.policy != Policy::SingleFrame && self.steps == 0 {
            return bad("multi-frame policies need steps >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        for (name, v) in [("lr_model", self.lr_model), ("lr_fusion", self.lr_fusion), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.aux_weight < 0.0 {
            return bad("aux_weight must be >= 0".into());
        }
        Ok(())
    }

    /// Exploration rate for `epoch` of `epochs`.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.epsilon_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }

    pub fn meta(&self) -> Vec<(String, String)> {
        vec![
            ("adapt.alpha".into(), format!("{:e}", self.alpha)),
            ("adapt.inner_steps".into(), self.inner_steps.to_string()),
            ("adapt.steps".into(), self.steps.to_string()),
            ("adapt.meta_order".into(), self.meta_order.to_string()),
            ("adapt.variant".into(), self.variant.tag().into()),
            ("adapt.policy".into(), self.policy.tag().into()),
            ("adapt.adapt_on_inference".into(), self.adapt_on_inference.to_string()),
        ]
    }
}

/// Everything that shapes a run: the two networks and the adaptation loop.
#[derive(Clone, Debug, PartialEq)]
pub struct Setup {
    pub model: ModelConfig,
    pub fusion: FusionConfig,
    pub adapt: AdaptConfig,
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.fusion.validate()?;
        self.adapt.validate()?;
        if self.adapt.uses_fusion() {
            let frames = self.adapt.steps + 1;
            match self.fusion.mode {
                FusionMode::FixedLengthDecoder if self.fusion.frames != frames => {
                    return Err(Error::Config(format!(
                        "decoder fusion expects {} frames but {} steps give {frames}",
                        self.fusion.frames, self.adapt.steps
                    )))
                }
                FusionMode::Causal if frames > self.fusion.max_frames => {
                    return Err(Error::Config(format!(
                        "{frames} frames exceed fusion max_frames {}",
                        self.fusion.max_frames
                    )))
                }
                _ => {}
            }
            if self.adapt.policy == Policy::BestLoss && self.fusion.mode != FusionMode::Causal {
                return Err(Error::Config(
                    "the bestloss policy reads partial sequences and needs causal fusion".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> Vec<(String, String)> {
        let mut m = crate::segmodel::model_meta(&self.model);
        m.extend(crate::fusion::fusion_meta(&self.fusion));
        m.extend(self.adapt.meta());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_rows() {
        let tiny = VariantMask::new(Variant::Tiny);
        assert_eq!(tiny.frozen_groups(), ["backbone", "pixel_decoder", "task_mlp"]);
        assert_eq!(tiny.adaptive_groups(), ["transformer_block", "multistage_decoder", "class_head", "mask_head"]);
        let small = VariantMask::new(Variant::Small);
        assert!(small.frozen_groups().is_empty());
        assert_eq!(small.adaptive_groups().len(), 5);
        assert!(!small.adaptive("backbone") && !small.adaptive("task_mlp"));
        let full = VariantMask::new(Variant::Full);
        assert_eq!(full.adaptive_groups().len(), GROUPS.len());
        let base = VariantMask::new(Variant::Baseline);
        assert_eq!(base.frozen_groups(), tiny.frozen_groups());
        assert!(base.adaptive_groups().is_empty());
    }

    #[test]
    fn parse_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
        }
        for p in [Policy::SingleFrame, Policy::Random, Policy::BestLoss] {
            assert_eq!(p.tag().parse::<Policy>().unwrap(), p);
        }
        assert!("huge".parse::<Variant>().is_err());
    }

    #[test]
    fn epsilon_anneals_linearly() {
        let c = AdaptConfig { epochs: 11, ..Default::default() };
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(5) - 0.55).abs() < 1e-12);
        assert!((c.epsilon(10) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn setup_checks_frame_counts() {
        let mut s =
            Setup { model: ModelConfig::miniature(), fusion: FusionConfig::miniature(), adapt: AdaptConfig::default() };
        assert!(s.validate().is_ok());
        s.adapt.steps = 4;
        assert!(s.validate().is_err());
        s.fusion.frames = 5;
        assert!(s.validate().is_ok());
        s.adapt.policy = Policy::BestLoss;
        assert!(s.validate().is_err());
        s.fusion.mode = FusionMode::Causal;
        assert!(s.validate().is_ok());
        s.adapt.alpha = -1.0;
        assert!(s.validate().is_err());
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::losses::LossWeights;
use crate::numeric::AdamWConfig;

/// Where the target-domain structure target comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetStructure {
    /// `rel(z, A)` of the supervisor's caption output.
    #[default]
    Caption,
    /// `rel(A[ȳ], A)` of the pseudo-label's reference anchor.
    PseudoAnchor,
}

impl FromStr for TargetStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caption" => Ok(Self::Caption),
            "pseudo-anchor" => Ok(Self::PseudoAnchor),
            other => Err(Error::InvalidConfig(format!(
                "unknown target structure `{other}` (expected caption or pseudo-anchor)"
            ))),
        }
    }
}

/// Component toggles for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    /// Master switch for every anchor-based term; off gives the pseudo-label-only baseline.
    pub use_reference_anchors: bool,
    /// `1 − cos(g, A[y])` against the fixed reference anchors.
    pub absolute_alignment_mode: bool,
    /// Learnable anchors plus the structure-preserving loss on `rel(g, anchors)`.
    pub use_structure_loss: bool,
    /// One anchor parameter serving both domains.
    pub anchors_shared_across_domains: bool,
    pub use_cd_attention: bool,
    pub use_reg: bool,
}

impl Switches {
    /// Whether the model carries learnable anchors at all.
    pub fn learnable_anchors(&self) -> bool {
        self.use_reference_anchors && (self.use_structure_loss || self.use_cd_attention || self.use_reg)
    }

    pub fn absolute(&self) -> bool {
        self.use_reference_anchors && self.absolute_alignment_mode
    }

    pub fn structure(&self) -> bool {
        self.use_reference_anchors && self.use_structure_loss
    }

    pub fn attention(&self) -> bool {
        self.learnable_anchors() && self.use_cd_attention
    }

    pub fn reg(&self) -> bool {
        self.learnable_anchors() && self.use_reg
    }
}

impl Default for Switches {
    fn default() -> Self {
        AblationPreset::Full.switches()
    }
}

/// The ablation ladder, from the pseudo-label-only baseline to the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationPreset {
    S1,
    S2,
    S3,
    S4,
    S5,
    Full,
}

impl AblationPreset {
    pub const ALL: [AblationPreset; 6] = [Self::S1, Self::S2, Self::S3, Self::S4, Self::S5, Self::Full];

    pub fn name(self) -> &'static str {
        match self {
            Self::S1 => "s1",
            Self::S2 => "s2",
            Self::S3 => "s3",
            Self::S4 => "s4",
            Self::S5 => "s5",
            Self::Full => "full",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::S1 => "pseudo-labels only",
            Self::S2 => "+ absolute anchor alignment",
            Self::S3 => "+ shared learnable anchors, structure loss",
            Self::S4 => "+ per-domain anchors",
            Self::S5 => "+ cross-domain attention",
            Self::Full => "+ volume regularizer",
        }
    }

    pub fn switches(self) -> Switches {
        let off = Switches {
            use_reference_anchors: false,
            absolute_alignment_mode: false,
            use_structure_loss: false,
            anchors_shared_across_domains: false,
            use_cd_attention: false,
            use_reg: false,
        };
        let s3 = Switches {
            use_reference_anchors: true,
            use_structure_loss: true,
            anchors_shared_across_domains: true,
            ..off
        };
        match self {
            Self::S1 => off,
            Self::S2 => Switches {
                use_reference_anchors: true,
                absolute_alignment_mode: true,
                ..off
            },
            Self::S3 => s3,
            Self::S4 => Switches {
                anchors_shared_across_domains: false,
                ..s3
            },
            Self::S5 => Switches {
                anchors_shared_across_domains: false,
                use_cd_attention: true,
                ..s3
            },
            Self::Full => Switches {
                anchors_shared_across_domains: false,
                use_cd_attention: true,
                use_reg: true,
                ..s3
            },
        }
    }
}

impl fmt::Display for AblationPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{s}` (expected s1..s5 or full)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub target_structure: TargetStructure,
    pub switches: Switches,
    /// Fraction of target samples used for training, in (0, 1].
    pub target_ratio: f64,
    /// Latent width `D_v`; `None` uses the reference anchor dimension.
    pub latent_dim: Option<usize>,
    /// Encoder hidden width; `None` means `max(2·D_v, 2·N_c)`.
    pub encoder_hidden: Option<usize>,
    /// Head hidden width; `None` means `max(D_v, 2·N_c)`.
    pub head_hidden: Option<usize>,
    /// Attention heads; outputs are averaged.
    pub attention_heads: usize,
    /// Keep anchors at their initial values.
    pub freeze_anchors: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            epochs: 10,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: AdamWConfig::default().weight_decay,
            seed: 0,
            target_structure: TargetStructure::Caption,
            switches: Switches::default(),
            target_ratio: 1.0,
            latent_dim: None,
            encoder_hidden: None,
            head_hidden: None,
            attention_heads: 1,
            freeze_anchors: false,
        }
    }
}

impl TrainConfig {
    pub fn with_preset(mut self, preset: AblationPreset) -> Self {
        self.switches = preset.switches();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("lr and weight decay must be >= 0".into()));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(Error::RatioOutOfRange(self.target_ratio));
        }
        if self.attention_heads == 0 {
            return Err(Error::InvalidConfig("attention_heads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_form_a_ladder() {
        let s1 = AblationPreset::S1.switches();
        assert!(!s1.learnable_anchors() && !s1.absolute() && !s1.structure());
        assert!(AblationPreset::S2.switches().absolute());
        assert!(!AblationPreset::S2.switches().learnable_anchors());
        let s3 = AblationPreset::S3.switches();
        assert!(s3.structure() && s3.anchors_shared_across_domains && !s3.absolute());
        assert!(!AblationPreset::S4.switches().anchors_shared_across_domains);
        assert!(AblationPreset::S5.switches().attention() && !AblationPreset::S5.switches().reg());
        assert!(AblationPreset::Full.switches().reg());
        assert_eq!(TrainConfig::default().switches, AblationPreset::Full.switches());
        for p in AblationPreset::ALL {
            assert_eq!(p.name().parse::<AblationPreset>().unwrap(), p);
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr), (10, 32, 1e-4));
        assert_eq!(c.target_structure, TargetStructure::Caption);
        assert_eq!("pseudo-anchor".parse::<TargetStructure>().unwrap(), TargetStructure::PseudoAnchor);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), c);
    }
}

//! Ablation axes. Each variant switches off exactly one mechanism of the
//! full method; [`Mechanisms::diff`] is the audit.

use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::layout::MaskVariant;
use crate::pipeline::EditConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    /// Full-resolution condition tokens instead of the sparse pair.
    #[serde(rename = "STST")]
    Stst,
    /// Drop the first-frame tokens.
    #[serde(rename = "Z_I")]
    FirstFrame,
    /// Skip stage 1; train the effect adapter on the random base.
    #[serde(rename = "PRETRAIN")]
    Pretrain,
    /// Skip stage 2; evaluate the merged editor.
    #[serde(rename = "EFFECT_LORA")]
    EffectLora,
    /// Keep condition tokens at their own grid positions.
    #[serde(rename = "PEC")]
    PositionCorrection,
    /// Remove the attention mask.
    #[serde(rename = "CATTN")]
    CausalAttention,
}

pub const AXES: [Axis; 6] =
    [Axis::Stst, Axis::FirstFrame, Axis::Pretrain, Axis::EffectLora, Axis::PositionCorrection, Axis::CausalAttention];

impl Axis {
    pub fn id(self) -> &'static str {
        match self {
            Axis::Stst => "STST",
            Axis::FirstFrame => "Z_I",
            Axis::Pretrain => "PRETRAIN",
            Axis::EffectLora => "EFFECT_LORA",
            Axis::PositionCorrection => "PEC",
            Axis::CausalAttention => "CATTN",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Axis::Stst => "w/o STST",
            Axis::FirstFrame => "w/o Z_I",
            Axis::Pretrain => "w/o Pretrain",
            Axis::EffectLora => "w/o Effect-LoRA",
            Axis::PositionCorrection => "w/o PEC",
            Axis::CausalAttention => "w/o C-Attn",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        AXES.iter()
            .copied()
            .find(|a| a.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(alloc::format!("unknown ablation axis '{s}'")))
    }
}

/// The switchable mechanisms of the method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mechanisms {
    pub sparse_tokens: bool,
    pub first_frame: bool,
    pub pretrain: bool,
    pub effect_lora: bool,
    pub position_correction: bool,
    pub causal_mask: bool,
}

impl Mechanisms {
    pub const FULL: Mechanisms = Mechanisms {
        sparse_tokens: true,
        first_frame: true,
        pretrain: true,
        effect_lora: true,
        position_correction: true,
        causal_mask: true,
    };

    pub fn without(axis: Option<Axis>) -> Self {
        let mut m = Self::FULL;
        match axis {
            None => {}
            Some(Axis::Stst) => m.sparse_tokens = false,
            Some(Axis::FirstFrame) => m.first_frame = false,
            Some(Axis::Pretrain) => m.pretrain = false,
            Some(Axis::EffectLora) => m.effect_lora = false,
            Some(Axis::PositionCorrection) => m.position_correction = false,
            Some(Axis::CausalAttention) => m.causal_mask = false,
        }
        m
    }

    /// Names of the mechanisms that differ.
    pub fn diff(&self, other: &Self) -> Vec<&'static str> {
        let pairs = [
            ("sparse_tokens", self.sparse_tokens, other.sparse_tokens),
            ("first_frame", self.first_frame, other.first_frame),
            ("pretrain", self.pretrain, other.pretrain),
            ("effect_lora", self.effect_lora, other.effect_lora),
            ("position_correction", self.position_correction, other.position_correction),
            ("causal_mask", self.causal_mask, other.causal_mask),
        ];
        pairs.iter().filter(|(_, a, b)| a != b).map(|(n, _, _)| *n).collect()
    }

    /// Condition layout and mask for these mechanisms. Without sparse
    /// tokens the condition is the full-resolution source alone.
    pub fn edit_config(&self, base: &EditConfig) -> EditConfig {
        let mut e = *base;
        if self.sparse_tokens {
            e.condition.include_first_frame = self.first_frame;
        } else {
            e.condition.spatial_downsample = 1;
            e.condition.include_first_frame = false;
        }
        e.condition.position_correction = self.position_correction;
        e.mask = if self.causal_mask { MaskVariant::Stst } else { MaskVariant::Bidirectional };
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{count_attention_flops, ModelConfig};

    #[test]
    fn each_axis_changes_one_mechanism() {
        for axis in AXES {
            let m = Mechanisms::without(Some(axis));
            assert_eq!(m.diff(&Mechanisms::FULL).len(), 1, "{:?}", axis);
            assert_eq!(axis.id().parse::<Axis>().unwrap(), axis);
        }
        assert!("XYZ".parse::<Axis>().is_err());
    }

    #[test]
    fn no_stst_costs_more() {
        let base = EditConfig::default();
        let model = ModelConfig::default();
        let clip = crate::codec::VideoClip::zeros(16, 32, 32, 3);
        let full = Mechanisms::FULL.edit_config(&base).context::<f32>(&model, &clip).unwrap();
        let dense = Mechanisms::without(Some(Axis::Stst)).edit_config(&base).context::<f32>(&model, &clip).unwrap();
        assert_eq!(full.lengths.total(), 704);
        assert_eq!(dense.lengths.total(), 1024);
        let f = |c: &crate::model::SequenceContext<f32>| {
            count_attention_flops(&[c.lengths.target, c.lengths.sparse, c.lengths.frame], &model).total
        };
        assert!(f(&dense) > f(&full));
    }
}

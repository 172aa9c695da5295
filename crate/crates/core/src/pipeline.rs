//! Clip <-> model token plumbing shared by training, sampling and
//! evaluation.
//!
//! Pixel values in `[0, 1]` are mapped to `[-1, 1]` before entering the
//! model so that clean latents and unit-Gaussian noise have comparable
//! scale.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, VideoClip};
use crate::error::{bail, Result};
use crate::layout::{self, MaskVariant, Segment, SparseCondConfig, TokenSequence};
use crate::model::{ModelConfig, SequenceContext};
use crate::{Real, Tensor};

#[inline]
pub fn to_model_space(v: f32) -> f32 {
    2.0 * v - 1.0
}

#[inline]
pub fn from_model_space(v: f32) -> f32 {
    0.5 * (v + 1.0)
}

/// How a source clip becomes condition tokens, and which mask joins them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    pub codec: CodecConfig,
    pub condition: SparseCondConfig,
    pub mask: MaskVariant,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig { codec: CodecConfig::default(), condition: SparseCondConfig::default(), mask: MaskVariant::Stst }
    }
}

impl EditConfig {
    pub fn token_dim(&self) -> usize {
        self.condition.patch.volume() * self.codec.channels_lat()
    }

    pub fn check_model(&self, model: &ModelConfig) -> Result<()> {
        if model.patch != self.condition.patch {
            bail!(Config, "model patch {:?} differs from condition patch {:?}", model.patch, self.condition.patch);
        }
        if model.token_dim != self.token_dim() {
            bail!(Config, "model token_dim {} but codec and patch give {}", model.token_dim, self.token_dim());
        }
        Ok(())
    }

    pub fn target_grid(&self, frames: usize, height: usize, width: usize) -> Result<[usize; 3]> {
        layout::target_token_grid(&self.codec, self.condition.patch, frames, height, width)
    }

    /// Condition tokens, mask and rotary angles for editing `source`.
    pub fn context<T: Real>(&self, model: &ModelConfig, source: &VideoClip) -> Result<SequenceContext<T>> {
        self.check_model(model)?;
        let grid = self.target_grid(source.frames, source.height, source.width)?;
        let target_positions = layout::grid_positions(grid);
        let cond = layout::build_sparse_condition(source, &self.condition, &self.codec)?;
        let segments: Vec<TokenSequence> = cond
            .segments()
            .map(|s| {
                let mut s = s.clone();
                s.tokens.iter_mut().for_each(|v| *v = to_model_space(*v));
                s
            })
            .collect();
        let refs: Vec<&TokenSequence> = segments.iter().collect();
        SequenceContext::new(model, &target_positions, &refs, self.mask)
    }

    /// Clean target tokens `[target_len, token_dim]` in model space.
    pub fn encode_target<T: Real>(&self, clip: &VideoClip) -> Result<Tensor<T>> {
        let seq = layout::patchify(&self.codec.encode(clip)?, self.condition.patch, Segment::Target)?;
        let data = seq.tokens.iter().map(|&v| T::from_f32(to_model_space(v))).collect();
        Tensor::new(alloc::vec![seq.len(), seq.dim], data)
    }

    /// Inverse of [`encode_target`](Self::encode_target), clamped to `[0, 1]`.
    pub fn decode_target<T: Real>(&self, tokens: &Tensor<T>, frames: usize, height: usize, width: usize) -> Result<VideoClip> {
        let grid = self.target_grid(frames, height, width)?;
        let (rows, dim) = tokens.as_matrix();
        if rows != grid.iter().product::<usize>() || dim != self.token_dim() {
            bail!(Shape, "{}x{} tokens do not fill a {:?} grid of width {}", rows, dim, grid, self.token_dim());
        }
        let seq = TokenSequence {
            segment: Segment::Target,
            grid,
            dim,
            tokens: tokens.data().iter().map(|&v| from_model_space(v.as_f32()).clamp(0.0, 1.0)).collect(),
            positions: layout::grid_positions(grid),
        };
        let latent = layout::unpatchify(&seq, self.condition.patch, self.codec.channels_lat())?;
        self.codec.decode(&latent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn default_lengths_and_roundtrip() {
        let cfg = EditConfig::default();
        let model = ModelConfig::default();
        let mut r = rng::seeded(2);
        let data = (0..16 * 32 * 32 * 3).map(|_| (rng::below(&mut r, 256) as f32) / 255.0).collect();
        let clip = VideoClip::new(16, 32, 32, 3, data).unwrap();
        let ctx = cfg.context::<f32>(&model, &clip).unwrap();
        assert_eq!(ctx.lengths.total(), 704);
        assert_eq!(ctx.cond_tokens.shape(), &[192, 96]);
        let x0 = cfg.encode_target::<f32>(&clip).unwrap();
        assert_eq!(x0.shape(), &[512, 96]);
        let back = cfg.decode_target(&x0, 16, 32, 32).unwrap();
        let err = back.data.iter().zip(&clip.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let cfg = EditConfig::default();
        let model = ModelConfig { token_dim: 48, ..ModelConfig::default() };
        assert!(cfg.context::<f32>(&model, &VideoClip::zeros(16, 32, 32, 3)).is_err());
    }
}

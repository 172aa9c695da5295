//! Euler integration of the learned velocity field from noise (`t = 1`)
//! to data (`t = 0`) with text-only classifier-free guidance: the
//! unconditional branch swaps the instruction for NULL but keeps the video
//! condition.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::codec::VideoClip;
use crate::error::{bail, Result};
use crate::layout::MaskVariant;
use crate::model::{Model, SequenceContext, NULL_TOKEN};
use crate::pipeline::EditConfig;
use crate::rng;
use crate::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
    pub mask_variant: MaskVariant,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { steps: 20, guidance_scale: 5.0, seed: 0, mask_variant: MaskVariant::Stst }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            bail!(Config, "sampling needs at least one step");
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            bail!(Config, "guidance scale must be finite and >= 0, got {}", self.guidance_scale);
        }
        Ok(())
    }

    /// Uniform grid `1 = t_0 > t_1 > ... > t_steps = 0`.
    pub fn timesteps(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| 1.0 - k as f64 / self.steps as f64).collect()
    }
}

/// `v_u + w (v_c - v_u)`; `w = 1` and `w = 0` return the branches exactly.
pub fn guided_velocity<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    ctx: &SequenceContext<T>,
    t: f64,
    text: &[usize],
    w: f64,
) -> Result<Tensor<T>> {
    let null = [NULL_TOKEN];
    if w == 1.0 {
        return model.predict(x, ctx, t, text);
    }
    let vu = model.predict(x, ctx, t, &null)?;
    if w == 0.0 {
        return Ok(vu);
    }
    let vc = model.predict(x, ctx, t, text)?;
    let w = T::from_f64(w);
    let data = vu.data().iter().zip(vc.data()).map(|(&u, &c)| u + w * (c - u)).collect();
    Tensor::new(vu.shape().to_vec(), data)
}

/// Integrates target tokens from seeded noise. `observe` sees the state
/// after every step.
pub fn sample_tokens<T: Real>(
    model: &Model<T>,
    ctx: &SequenceContext<T>,
    text: &[usize],
    cfg: &SampleConfig,
    observe: &mut dyn FnMut(usize, f64, &Tensor<T>),
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let shape = [ctx.lengths.target, model.config.token_dim];
    let mut x = Tensor::randn(&shape, 1.0, &mut rng::seeded(cfg.seed));
    let ts = cfg.timesteps();
    for k in 0..cfg.steps {
        let (t, next) = (ts[k], ts[k + 1]);
        let v = guided_velocity(model, &x, ctx, t, text, cfg.guidance_scale)?;
        let dt = T::from_f64(next - t);
        x.data_mut().iter_mut().zip(v.data()).for_each(|(x, &v)| *x += dt * v);
        if !x.is_finite() {
            bail!(Numerical, "non-finite state after denoising step {} (t = {})", k, next);
        }
        observe(k, next, &x);
    }
    Ok(x)
}

/// Edits `source` according to `instruction`; the result has the source's
/// shape.
pub fn sample<T: Real>(
    model: &Model<T>,
    edit: &EditConfig,
    source: &VideoClip,
    instruction: &str,
    cfg: &SampleConfig,
) -> Result<VideoClip> {
    let edit = EditConfig { mask: cfg.mask_variant, ..*edit };
    let ctx = edit.context::<T>(&model.config, source)?;
    let text = model.tokenizer().encode(instruction);
    let x = sample_tokens(model, &ctx, &text, cfg, &mut |_, _, _| {})?;
    let mut out = edit.decode_target(&x, source.frames, source.height, source.width)?;
    out.fps = source.fps;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_validation() {
        let c = SampleConfig { steps: 4, ..SampleConfig::default() };
        assert_eq!(c.timesteps(), alloc::vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        assert!(SampleConfig { steps: 0, ..c }.validate().is_err());
        assert!(SampleConfig { guidance_scale: -1.0, ..c }.validate().is_err());
    }
}

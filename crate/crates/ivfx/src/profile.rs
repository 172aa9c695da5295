//! Attention-cost profiler: analytic FLOPs per sequence layout plus the
//! median wall-clock of repeated inference forwards.
//!
//! The check compares the measured full-condition / sparse forward-time
//! ratio with the analytic quadratic-term ratio. Only the attention term
//! grows quadratically, so on small models the measured ratio sits below
//! the analytic one; the tolerance absorbs that.

use std::time::Instant;

use ivfx_core::layout::{grid_positions, MaskVariant, Segment, TokenSequence};
use ivfx_core::model::{count_attention_flops, AttentionFlops, Model, ModelConfig, SequenceContext};
use ivfx_core::{rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileShape {
    pub name: String,
    pub target: usize,
    pub sparse: usize,
    pub frame: usize,
}

impl ProfileShape {
    pub fn new(name: &str, target: usize, sparse: usize, frame: usize) -> Self {
        ProfileShape { name: name.into(), target, sparse, frame }
    }

    pub fn lengths(&self) -> [usize; 3] {
        [self.target, self.sparse, self.frame]
    }
}

pub const SPARSE_ROW: &str = "stst";
pub const FULL_ROW: &str = "full-condition";

/// Default desk shapes: sparse conditioning, full-resolution conditioning,
/// and the target alone as a reference.
pub fn default_shapes() -> Vec<ProfileShape> {
    vec![ProfileShape::new(SPARSE_ROW, 512, 128, 64), ProfileShape::new(FULL_ROW, 512, 512, 0), ProfileShape::new("target-only", 512, 0, 0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub model: ModelConfig,
    pub warmup: usize,
    pub runs: usize,
    /// Allowed relative deviation of the measured ratio from the analytic.
    pub ratio_tolerance: f64,
    /// Interquartile range over median above which timings are flagged.
    pub max_spread: f64,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { model: ModelConfig::default(), warmup: 3, runs: 20, ratio_tolerance: 0.3, max_spread: 0.25, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub shape: ProfileShape,
    pub flops: AttentionFlops,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// Interquartile range over median.
    pub spread: f64,
    /// Largest transient attention buffers of an inference forward: one
    /// score plane plus the additive mask.
    pub peak_transient_bytes: u64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    pub analytic_quadratic: f64,
    pub measured: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub config: ProfileConfig,
    pub rows: Vec<ProfileRow>,
    /// Present when both the sparse and full-condition rows were profiled.
    pub ratio: Option<RatioCheck>,
    pub flagged: bool,
}

impl ProfileReport {
    pub fn ok(&self) -> bool {
        !self.flagged && self.ratio.as_ref().is_none_or(|r| r.pass)
    }
}

/// Random condition tokens laid out on a line; positions do not change
/// the cost.
pub fn synthetic_context(cfg: &ModelConfig, shape: &ProfileShape, seed: u64) -> Result<SequenceContext<f32>> {
    let mut r = rng::seeded(seed);
    let seg = |segment: Segment, len: usize, r: &mut rng::SeededRng| TokenSequence {
        segment,
        grid: [1, 1, len],
        dim: cfg.token_dim,
        tokens: Tensor::<f32>::randn(&[len, cfg.token_dim], 1.0, r).data().to_vec(),
        positions: grid_positions([1, 1, len]),
    };
    let sparse = seg(Segment::CondSparse, shape.sparse, &mut r);
    let frame = seg(Segment::CondFrame, shape.frame, &mut r);
    let conds: Vec<&TokenSequence> = match (shape.sparse, shape.frame) {
        (0, 0) => vec![],
        (_, 0) => vec![&sparse],
        _ => vec![&sparse, &frame],
    };
    Ok(SequenceContext::new(cfg, &grid_positions([1, 1, shape.target]), &conds, MaskVariant::Stst)?)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn profile_shape(model: &Model<f32>, shape: &ProfileShape, cfg: &ProfileConfig) -> Result<ProfileRow> {
    let ctx = synthetic_context(&model.config, shape, cfg.seed)?;
    let x = Tensor::<f32>::randn(&[shape.target, model.config.token_dim], 1.0, &mut rng::seeded(cfg.seed ^ 1));
    let text = [1usize, 2, 3];
    for _ in 0..cfg.warmup {
        model.predict(&x, &ctx, 0.5, &text)?;
    }
    let mut times = Vec::with_capacity(cfg.runs.max(1));
    for _ in 0..cfg.runs.max(1) {
        let t0 = Instant::now();
        std::hint::black_box(model.predict(&x, &ctx, 0.5, &text)?);
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = percentile(&times, 0.5);
    let spread = (percentile(&times, 0.75) - percentile(&times, 0.25)) / median;
    let l = (shape.target + shape.sparse + shape.frame) as u64;
    Ok(ProfileRow {
        shape: shape.clone(),
        flops: count_attention_flops(&shape.lengths(), &model.config),
        median_s: median,
        min_s: times[0],
        max_s: times[times.len() - 1],
        spread,
        peak_transient_bytes: l * l * (std::mem::size_of::<f32>() as u64 + 4),
        flagged: spread > cfg.max_spread,
    })
}

/// Profiles every shape on the calling thread.
pub fn profile(shapes: &[ProfileShape], cfg: &ProfileConfig) -> Result<ProfileReport> {
    let model = Model::<f32>::init(cfg.model, cfg.seed)?;
    let rows = shapes.iter().map(|s| profile_shape(&model, s, cfg)).collect::<Result<Vec<_>>>()?;
    let find = |n: &str| rows.iter().find(|r| r.shape.name == n);
    let ratio = match (find(SPARSE_ROW), find(FULL_ROW)) {
        (Some(s), Some(f)) => {
            let analytic = f.flops.quadratic as f64 / s.flops.quadratic as f64;
            let measured = f.median_s / s.median_s;
            let (lower, upper) = (analytic * (1.0 - cfg.ratio_tolerance), analytic * (1.0 + cfg.ratio_tolerance));
            Some(RatioCheck { analytic_quadratic: analytic, measured, lower, upper, pass: (lower..=upper).contains(&measured) })
        }
        _ => None,
    };
    let flagged = rows.iter().any(|r| r.flagged);
    Ok(ProfileReport { config: *cfg, rows, ratio, flagged })
}

impl ProfileReport {
    pub fn markdown(&self) -> String {
        let mut s = String::from("| shape | L | attention FLOPs | quadratic FLOPs | median forward (s) | spread | transient bytes |\n|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {:.4} | {:.3}{} | {} |\n",
                r.shape.name,
                r.flops.sequence_len,
                r.flops.total,
                r.flops.quadratic,
                r.median_s,
                r.spread,
                if r.flagged { " (flagged)" } else { "" },
                r.peak_transient_bytes
            ));
        }
        if let Some(c) = &self.ratio {
            s.push_str(&format!(
                "\nfull/sparse forward ratio {:.3}, analytic quadratic ratio {:.4}, band [{:.3}, {:.3}]: {}\n",
                c.measured,
                c.analytic_quadratic,
                c.lower,
                c.upper,
                if c.pass { "pass" } else { "FAIL" }
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_counts_match_core_counter() {
        let cfg = ProfileConfig {
            model: ModelConfig { depth: 1, model_dim: 32, heads: 1, ..ModelConfig::default() },
            warmup: 0,
            runs: 2,
            max_spread: f64::INFINITY,
            ..ProfileConfig::default()
        };
        let shapes = vec![ProfileShape::new(SPARSE_ROW, 16, 4, 2), ProfileShape::new(FULL_ROW, 16, 16, 0)];
        let r = profile(&shapes, &cfg).unwrap();
        assert_eq!(r.rows[0].flops, count_attention_flops(&[16, 4, 2], &cfg.model));
        assert_eq!(r.rows[0].flops.sequence_len, 22);
        let c = r.ratio.unwrap();
        assert_eq!(c.analytic_quadratic, (32.0f64 * 32.0) / (22.0 * 22.0));
    }
}

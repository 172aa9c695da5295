//! Diffusion transformer over `[target; sparse; frame]` token sequences.
//!
//! Each block applies adaptive-norm modulated self-attention over the joint
//! sequence (shared 3D rotary positions, segment mask), cross-attention to
//! the instruction tokens and a modulated MLP. Only the rows of the target
//! segment are returned; condition rows are computed and discarded.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, RotaryAngles, Var};
use crate::error::{bail, Result};
use crate::layout::{self, AttentionMask, MaskVariant, Patch, RopeConfig, SegmentLengths, SegmentPolicy, TokenSequence};
use crate::params::ParamStore;
use crate::rng;
use crate::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_ratio: usize,
    /// Hash buckets of the instruction vocabulary, including the NULL slot.
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub patch: Patch,
    /// Values per input token (`patch volume x latent channels`).
    pub token_dim: usize,
    /// Width of the sinusoidal timestep features.
    pub time_freq_dim: usize,
    pub rope: RopeConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 6,
            model_dim: 192,
            heads: 6,
            head_dim: 32,
            mlp_ratio: 4,
            vocab_size: 576,
            max_text_len: 16,
            patch: Patch::default(),
            token_dim: 96,
            time_freq_dim: 64,
            rope: RopeConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("depth", self.depth),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mlp_ratio", self.mlp_ratio),
            ("max_text_len", self.max_text_len),
            ("token_dim", self.token_dim),
            ("time_freq_dim", self.time_freq_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                bail!(Config, "{} must be positive", name);
            }
        }
        if self.vocab_size < 2 {
            bail!(Config, "vocab_size must leave room for the NULL token");
        }
        if self.model_dim != self.heads * self.head_dim {
            bail!(Config, "model_dim {} != heads {} x head_dim {}", self.model_dim, self.heads, self.head_dim);
        }
        if !self.time_freq_dim.is_multiple_of(2) {
            bail!(Config, "time_freq_dim must be even");
        }
        layout::rope_bands(self.head_dim)?;
        Ok(())
    }

    pub fn mlp_dim(&self) -> usize {
        self.model_dim * self.mlp_ratio
    }
}

/// Id of the empty-instruction embedding used for guidance dropout.
pub const NULL_TOKEN: usize = 0;

/// Whitespace tokenizer hashing lowercase words into `vocab_size - 1`
/// buckets (bucket 0 is reserved for NULL).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstructionTokenizer {
    pub vocab_size: usize,
    pub max_len: usize,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl InstructionTokenizer {
    pub fn for_model(cfg: &ModelConfig) -> Self {
        InstructionTokenizer { vocab_size: cfg.vocab_size, max_len: cfg.max_text_len }
    }

    pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(|w| w.to_lowercase())
    }

    pub fn token_id(&self, word: &str) -> usize {
        1 + (fnv1a(word.as_bytes()) % (self.vocab_size as u64 - 1)) as usize
    }

    /// Token ids of an instruction; an empty instruction is `[NULL]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = Self::words(text).take(self.max_len).map(|w| self.token_id(&w)).collect();
        if ids.is_empty() {
            vec![NULL_TOKEN]
        } else {
            ids
        }
    }
}

/// Provenance of a set of base weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelStage {
    /// Random initialization.
    Base,
    /// Stage-1 editor adapter merged into the base.
    Editor,
}

/// An attached low-rank adapter: `target += (alpha / rank) * a @ b`, with
/// `a` and `b` stored in the parameter store under the given names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSlot {
    pub target: String,
    pub a: String,
    pub b: String,
    pub rank: usize,
    pub alpha: f64,
}

impl AdapterSlot {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub adapters: Vec<AdapterSlot>,
    pub stage: ModelStage,
}

const INIT_STD: f64 = 0.02;

/// Self-attention, cross-attention and MLP projections of one block; the
/// default adapter targets.
pub fn block_linear_names(block: usize) -> [String; 10] {
    let p = |s: &str| format!("blocks.{block}.{s}");
    [p("attn.q"), p("attn.k"), p("attn.v"), p("attn.o"), p("cross.q"), p("cross.k"), p("cross.v"), p("cross.o"), p("mlp.fc1"), p("mlp.fc2")]
}

impl<T: Real> Model<T> {
    /// Fresh weights: truncated normal (sigma 0.02) projections and
    /// embeddings, zero biases, unit gains, zero output head.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let mut ps = ParamStore::new();
        let (d, hd, f) = (config.model_dim, config.head_dim, config.mlp_dim());
        let linear = |ps: &mut ParamStore<T>, r: &mut rng::SeededRng, name: &str, i: usize, o: usize| -> Result<()> {
            ps.insert(&format!("{name}.weight"), Tensor::trunc_normal(&[i, o], INIT_STD, r), true)?;
            ps.insert(&format!("{name}.bias"), Tensor::zeros(&[o]), true)?;
            Ok(())
        };
        linear(&mut ps, &mut r, "patch_embed", config.token_dim, d)?;
        linear(&mut ps, &mut r, "time_embed.fc1", config.time_freq_dim, d)?;
        linear(&mut ps, &mut r, "time_embed.fc2", d, d)?;
        ps.insert("text_embed.weight", Tensor::trunc_normal(&[config.vocab_size, d], INIT_STD, &mut r), true)?;
        for b in 0..config.depth {
            let p = |s: &str| format!("blocks.{b}.{s}");
            ps.insert(&p("norm1.gain"), Tensor::ones(&[d]), true)?;
            linear(&mut ps, &mut r, &p("modulation"), d, 6 * d)?;
            for n in ["q", "k", "v", "o"] {
                linear(&mut ps, &mut r, &p(&format!("attn.{n}")), d, d)?;
            }
            ps.insert(&p("attn.q_norm.gain"), Tensor::ones(&[hd]), true)?;
            ps.insert(&p("attn.k_norm.gain"), Tensor::ones(&[hd]), true)?;
            ps.insert(&p("norm_cross.gain"), Tensor::ones(&[d]), true)?;
            for n in ["q", "k", "v", "o"] {
                linear(&mut ps, &mut r, &p(&format!("cross.{n}")), d, d)?;
            }
            ps.insert(&p("norm2.gain"), Tensor::ones(&[d]), true)?;
            linear(&mut ps, &mut r, &p("mlp.fc1"), d, f)?;
            linear(&mut ps, &mut r, &p("mlp.fc2"), f, d)?;
        }
        ps.insert("final.norm.gain", Tensor::ones(&[d]), true)?;
        linear(&mut ps, &mut r, "final.modulation", d, 2 * d)?;
        ps.insert("final.proj.weight", Tensor::zeros(&[d, config.token_dim]), true)?;
        ps.insert("final.proj.bias", Tensor::zeros(&[config.token_dim]), true)?;
        Ok(Model { config, params: ps, adapters: Vec::new(), stage: ModelStage::Base })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config, params: self.params.cast(), adapters: self.adapters.clone(), stage: self.stage }
    }

    pub fn tokenizer(&self) -> InstructionTokenizer {
        InstructionTokenizer::for_model(&self.config)
    }

    /// `x @ W + b` for the projection `name`, plus every adapter attached
    /// to `name.weight`.
    pub fn linear(&self, g: &mut Graph<'_, T>, x: Var, name: &str) -> Result<Var> {
        let wname = format!("{name}.weight");
        let w = g.param_named(&wname)?;
        let b = g.param_named(&format!("{name}.bias"))?;
        let mut y = g.linear(x, w, Some(b))?;
        for slot in self.adapters.iter().filter(|s| s.target == wname) {
            let a = g.param_named(&slot.a)?;
            let bb = g.param_named(&slot.b)?;
            let xa = g.matmul(x, a)?;
            let xab = g.matmul(xa, bb)?;
            let upd = g.scale(xab, T::from_f64(slot.scale()));
            y = g.add(y, upd)?;
        }
        Ok(y)
    }

    fn timestep_features(&self, t: f64) -> Tensor<T> {
        let half = self.config.time_freq_dim / 2;
        let mut data = Vec::with_capacity(2 * half);
        let arg = |k: usize| 1000.0 * t * libm::exp(-libm::log(10_000.0) * k as f64 / half as f64);
        data.extend((0..half).map(|k| T::from_f64(libm::cos(arg(k)))));
        data.extend((0..half).map(|k| T::from_f64(libm::sin(arg(k)))));
        Tensor::new(vec![1, 2 * half], data).expect("timestep features")
    }

    /// Conditioning vector `silu(time_mlp(t) + mean(text embeddings))` and
    /// the per-token text embeddings for cross-attention.
    fn conditioning(&self, g: &mut Graph<'_, T>, t: f64, text: &[usize]) -> Result<(Var, Var)> {
        let feats = g.input(self.timestep_features(t));
        let h = self.linear(g, feats, "time_embed.fc1")?;
        let h = g.silu(h);
        let temb = self.linear(g, h, "time_embed.fc2")?;
        let table = g.param_named("text_embed.weight")?;
        let ids: Vec<usize> = if text.is_empty() { vec![NULL_TOKEN] } else { text.to_vec() };
        let words = g.gather_rows(table, &ids)?;
        let pooled = g.mean_rows(words);
        let c = g.add(temb, pooled)?;
        Ok((g.silu(c), words))
    }

    fn modulate(&self, g: &mut Graph<'_, T>, x: Var, gain: &str, shift: Var, scale: Var) -> Result<Var> {
        let gv = g.param_named(gain)?;
        let h = g.rmsnorm(x, gv, self.config.model_dim)?;
        let s1 = g.add_scalar(scale, T::one());
        let h = g.mul_row(h, s1)?;
        g.add_row(h, shift)
    }

    fn block(&self, g: &mut Graph<'_, T>, b: usize, x: Var, cond: Var, words: Var, seq: &SequenceContext<T>) -> Result<Var> {
        let (d, heads, hd) = (self.config.model_dim, self.config.heads, self.config.head_dim);
        let p = |s: &str| format!("blocks.{b}.{s}");
        let m = self.linear(g, cond, &p("modulation"))?;
        let mut chunk = |i: usize| g.slice_cols(m, i * d, d);
        let (shift1, scale1, gate1) = (chunk(0)?, chunk(1)?, chunk(2)?);
        let (shift2, scale2, gate2) = (chunk(3)?, chunk(4)?, chunk(5)?);

        // joint self-attention
        let h = self.modulate(g, x, &p("norm1.gain"), shift1, scale1)?;
        let q = self.linear(g, h, &p("attn.q"))?;
        let k = self.linear(g, h, &p("attn.k"))?;
        let v = self.linear(g, h, &p("attn.v"))?;
        let qg = g.param_named(&p("attn.q_norm.gain"))?;
        let kg = g.param_named(&p("attn.k_norm.gain"))?;
        let q = g.rmsnorm(q, qg, hd)?;
        let k = g.rmsnorm(k, kg, hd)?;
        let q = g.rotary(q, seq.angles.clone(), heads)?;
        let k = g.rotary(k, seq.angles.clone(), heads)?;
        let mask = match seq.mask.variant {
            MaskVariant::Bidirectional => None,
            _ => Some(seq.mask.data()),
        };
        let a = g.attention(q, k, v, heads, mask)?;
        let o = self.linear(g, a, &p("attn.o"))?;
        let o = g.mul_row(o, gate1)?;
        let x = g.add(x, o)?;

        // instruction cross-attention
        let ng = g.param_named(&p("norm_cross.gain"))?;
        let h = g.rmsnorm(x, ng, d)?;
        let q = self.linear(g, h, &p("cross.q"))?;
        let k = self.linear(g, words, &p("cross.k"))?;
        let v = self.linear(g, words, &p("cross.v"))?;
        let a = g.attention(q, k, v, heads, None)?;
        let o = self.linear(g, a, &p("cross.o"))?;
        let x = g.add(x, o)?;

        // MLP
        let h = self.modulate(g, x, &p("norm2.gain"), shift2, scale2)?;
        let h = self.linear(g, h, &p("mlp.fc1"))?;
        let h = g.silu(h);
        let h = self.linear(g, h, &p("mlp.fc2"))?;
        let h = g.mul_row(h, gate2)?;
        g.add(x, h)
    }

    /// Velocity prediction for the noisy target tokens `noisy`
    /// (`[target_len, token_dim]`) at flow time `t` with instruction `text`.
    pub fn forward(&self, g: &mut Graph<'_, T>, noisy: Var, seq: &SequenceContext<T>, t: f64, text: &[usize]) -> Result<ForwardOutput> {
        let (rows, cols) = g.value(noisy).as_matrix();
        if rows != seq.lengths.target || cols != self.config.token_dim {
            bail!(Layout, "noisy tokens are {}x{}, context expects {}x{}", rows, cols, seq.lengths.target, self.config.token_dim);
        }
        let x_in = if seq.cond_tokens.numel() > 0 {
            let c = g.input(seq.cond_tokens.clone());
            g.concat_rows(&[noisy, c])?
        } else {
            noisy
        };
        let mut x = self.linear(g, x_in, "patch_embed")?;
        let (cond, words) = self.conditioning(g, t, text)?;
        let mut blocks = Vec::with_capacity(self.config.depth);
        for b in 0..self.config.depth {
            x = self.block(g, b, x, cond, words, seq)?;
            blocks.push(x);
        }
        let m = self.linear(g, cond, "final.modulation")?;
        let d = self.config.model_dim;
        let shift = g.slice_cols(m, 0, d)?;
        let scale = g.slice_cols(m, d, d)?;
        let h = self.modulate(g, x, "final.norm.gain", shift, scale)?;
        let out = self.linear(g, h, "final.proj")?;
        let velocity = g.slice_rows(out, 0, seq.lengths.target)?;
        Ok(ForwardOutput { velocity, blocks })
    }

    /// Forward without recording, returning the target velocity.
    pub fn predict(&self, noisy: &Tensor<T>, seq: &SequenceContext<T>, t: f64, text: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::inference(&self.params);
        let x = g.input(noisy.clone());
        let out = self.forward(&mut g, x, seq, t, text)?;
        Ok(g.value(out.velocity).clone())
    }
}

pub struct ForwardOutput {
    /// `[target_len, token_dim]`.
    pub velocity: Var,
    /// Residual stream after each block, `[total_len, model_dim]`.
    pub blocks: Vec<Var>,
}

/// Everything about a joint sequence that does not change across denoising
/// steps: condition tokens, segment lengths, mask and rotary angles.
#[derive(Debug, Clone)]
pub struct SequenceContext<T> {
    pub lengths: SegmentLengths,
    /// `[sparse + frame, token_dim]`.
    pub cond_tokens: Tensor<T>,
    pub positions: Vec<[usize; 3]>,
    pub mask: AttentionMask,
    pub angles: Arc<RotaryAngles<T>>,
}

impl<T: Real> SequenceContext<T> {
    /// `conditions` are appended after the target in order (sparse, then
    /// frame). Positions must already be corrected.
    pub fn new(config: &ModelConfig, target_positions: &[[usize; 3]], conditions: &[&TokenSequence], variant: MaskVariant) -> Result<Self> {
        if conditions.len() > 2 {
            bail!(Layout, "at most two condition segments, got {}", conditions.len());
        }
        let mut positions = target_positions.to_vec();
        let mut cond = Vec::new();
        let mut lens = [0usize; 2];
        for (slot, c) in conditions.iter().enumerate() {
            if c.dim != config.token_dim {
                bail!(Layout, "condition tokens are {} wide, model takes {}", c.dim, config.token_dim);
            }
            lens[slot] = c.len();
            positions.extend_from_slice(&c.positions);
            cond.extend(c.tokens.iter().map(|&v| T::from_f32(v)));
        }
        let lengths = SegmentLengths::new(target_positions.len(), lens[0], lens[1]);
        let mask = AttentionMask::materialize(&SegmentPolicy { lengths, variant });
        let angles = Arc::new(layout::rope_angles::<T>(&positions, config.head_dim, config.rope)?);
        let rows = lens[0] + lens[1];
        Ok(SequenceContext { lengths, cond_tokens: Tensor::new(vec![rows, config.token_dim], cond)?, positions, mask, angles })
    }
}

impl<T> SequenceContext<T> {
    /// Reuses `other`'s mask and rotary tables when they describe the same
    /// layout, so a dataset holds one copy of each.
    pub fn share_static(&mut self, other: &Self) {
        if self.lengths == other.lengths && self.mask.variant == other.mask.variant && self.positions == other.positions {
            self.mask = other.mask.clone();
            self.angles = other.angles.clone();
        }
    }
}

/// Analytic self-attention cost of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionFlops {
    pub sequence_len: u64,
    /// `Q K^T` plus `P V`: `depth * 2 * (2 * L^2 * model_dim)`.
    pub quadratic: u64,
    /// Q, K, V, O projections: `depth * 4 * (2 * L * model_dim^2)`.
    pub projection: u64,
    pub total: u64,
}

/// Dense cost: the mask does not remove any multiply-adds.
pub fn count_attention_flops(lengths: &[usize], config: &ModelConfig) -> AttentionFlops {
    let l: u64 = lengths.iter().map(|&x| x as u64).sum();
    let (d, depth) = (config.model_dim as u64, config.depth as u64);
    let quadratic = depth * 2 * (2 * l * l * d);
    let projection = depth * 4 * (2 * l * d * d);
    AttentionFlops { sequence_len: l, quadratic, projection, total: quadratic + projection }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        let bad = ModelConfig { heads: 5, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_instruction_is_null() {
        let tok = InstructionTokenizer { vocab_size: 64, max_len: 4 };
        assert_eq!(tok.encode(""), vec![NULL_TOKEN]);
        assert_eq!(tok.encode("  ,. "), vec![NULL_TOKEN]);
        let ids = tok.encode("Add a RED square, now please");
        assert_eq!(ids.len(), 4);
        assert!(ids.iter().all(|&i| (1..64).contains(&i)));
        assert_eq!(tok.encode("red"), tok.encode("RED"));
    }

    #[test]
    fn flop_counter_examples() {
        let cfg = ModelConfig::default();
        let full = count_attention_flops(&[512, 512, 0], &cfg);
        let stst = count_attention_flops(&[512, 128, 64], &cfg);
        assert_eq!(full.sequence_len, 1024);
        assert_eq!(stst.sequence_len, 704);
        let ratio = full.quadratic as f64 / stst.quadratic as f64;
        assert_eq!(ratio, (1024.0f64 / 704.0).powi(2));
        let base = count_attention_flops(&[512, 0, 0], &cfg);
        assert_eq!(base, count_attention_flops(&[512], &cfg));
        let doubled = count_attention_flops(&[1024, 256, 128], &cfg);
        assert_eq!(doubled.quadratic, 4 * stst.quadratic);
    }
}

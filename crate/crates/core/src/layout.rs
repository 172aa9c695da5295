//! Token layout: patchify latent grids, build the sparse source condition,
//! place condition tokens on the target grid, rotary positions and the
//! segment attention masks.
//!
//! The joint sequence is always ordered `[target; sparse; frame]`.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::RotaryAngles;
use crate::codec::{CodecConfig, LatentGrid, VideoClip};
use crate::error::{bail, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Segment {
    /// Noisy latent tokens being generated.
    Target,
    /// Spatially downsampled, full-length source video.
    CondSparse,
    /// Full-resolution first frame of the source.
    CondFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Default for Patch {
    fn default() -> Self {
        Patch { t: 1, h: 2, w: 2 }
    }
}

impl Patch {
    pub fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn token_grid(&self, grid: [usize; 3]) -> Result<[usize; 3]> {
        let p = [self.t, self.h, self.w];
        for (axis, (&g, &q)) in ["t", "h", "w"].iter().zip(grid.iter().zip(&p)) {
            if q == 0 || g % q != 0 {
                bail!(Shape, "latent {} extent {} is not divisible by patch {}", axis, g, q);
            }
        }
        Ok([grid[0] / p[0], grid[1] / p[1], grid[2] / p[2]])
    }
}

/// Flattened patch tokens with a `(t, h, w)` position each.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub segment: Segment,
    /// Token grid extents in the sequence's own coordinates.
    pub grid: [usize; 3],
    /// Values per token.
    pub dim: usize,
    /// `len() x dim`, row-major, tokens ordered t, then h, then w.
    pub tokens: Vec<f32>,
    pub positions: Vec<[usize; 3]>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn grid_positions(grid: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(grid.iter().product());
    for t in 0..grid[0] {
        for h in 0..grid[1] {
            for w in 0..grid[2] {
                out.push([t, h, w]);
            }
        }
    }
    out
}

/// Cuts a latent grid into patch tokens. Token `(i, j, k)` gets position
/// `(i, j, k)` in its own token grid; values within a token are ordered
/// `(dt, dy, dx, channel)`.
pub fn patchify(grid: &LatentGrid, patch: Patch, segment: Segment) -> Result<TokenSequence> {
    let tg = patch.token_grid([grid.t, grid.h, grid.w])?;
    let c = grid.channels;
    let dim = patch.volume() * c;
    let positions = grid_positions(tg);
    let mut tokens = Vec::with_capacity(positions.len() * dim);
    for &[ti, hi, wi] in &positions {
        for dt in 0..patch.t {
            for dy in 0..patch.h {
                for dx in 0..patch.w {
                    let cell = ((ti * patch.t + dt) * grid.h + hi * patch.h + dy) * grid.w + wi * patch.w + dx;
                    tokens.extend_from_slice(&grid.data[cell * c..(cell + 1) * c]);
                }
            }
        }
    }
    Ok(TokenSequence { segment, grid: tg, dim, tokens, positions })
}

/// Inverse of [`patchify`]; positions are ignored, tokens are taken in
/// row-major grid order.
pub fn unpatchify(seq: &TokenSequence, patch: Patch, channels: usize) -> Result<LatentGrid> {
    if seq.dim != patch.volume() * channels {
        bail!(Shape, "token width {} does not match patch {:?} with {} channels", seq.dim, patch, channels);
    }
    let [tt, th, tw] = seq.grid;
    if seq.tokens.len() != tt * th * tw * seq.dim {
        bail!(Shape, "{} token values for a {:?} grid", seq.tokens.len(), seq.grid);
    }
    let (gt, gh, gw) = (tt * patch.t, th * patch.h, tw * patch.w);
    let mut data = vec![0.0f32; gt * gh * gw * channels];
    for (idx, tok) in seq.tokens.chunks(seq.dim).enumerate() {
        let (ti, rest) = (idx / (th * tw), idx % (th * tw));
        let (hi, wi) = (rest / tw, rest % tw);
        let mut o = 0;
        for dt in 0..patch.t {
            for dy in 0..patch.h {
                for dx in 0..patch.w {
                    let cell = ((ti * patch.t + dt) * gh + hi * patch.h + dy) * gw + wi * patch.w + dx;
                    data[cell * channels..(cell + 1) * channels].copy_from_slice(&tok[o..o + channels]);
                    o += channels;
                }
            }
        }
    }
    LatentGrid::new(gt, gh, gw, channels, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseCondConfig {
    /// Pixel-space downsample factor `n` of the source video.
    pub spatial_downsample: usize,
    pub include_first_frame: bool,
    pub patch: Patch,
    /// Map condition tokens onto target-grid positions. Off only for the
    /// positional-correction ablation.
    pub position_correction: bool,
}

impl Default for SparseCondConfig {
    fn default() -> Self {
        SparseCondConfig { spatial_downsample: 2, include_first_frame: true, patch: Patch::default(), position_correction: true }
    }
}

/// Condition token segments built from one source clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCondition {
    pub sparse: TokenSequence,
    pub frame: Option<TokenSequence>,
}

impl SparseCondition {
    pub fn segments(&self) -> impl Iterator<Item = &TokenSequence> {
        core::iter::once(&self.sparse).chain(self.frame.as_ref())
    }

    pub fn lengths(&self) -> [usize; 2] {
        [self.sparse.len(), self.frame.as_ref().map_or(0, |f| f.len())]
    }
}

/// Target token grid for a clip of the given pixel extents.
pub fn target_token_grid(codec: &CodecConfig, patch: Patch, frames: usize, height: usize, width: usize) -> Result<[usize; 3]> {
    patch.token_grid(codec.latent_dims(frames, height, width)?)
}

/// Builds the downsampled full-length condition and the first-frame
/// condition from a clean source clip.
pub fn build_sparse_condition(source: &VideoClip, cfg: &SparseCondConfig, codec: &CodecConfig) -> Result<SparseCondition> {
    let n = cfg.spatial_downsample;
    if n == 0 {
        bail!(Config, "spatial downsample factor must be >= 1");
    }
    let unit = n * codec.spatial_factor;
    if !source.height.is_multiple_of(unit) || !source.width.is_multiple_of(unit) {
        bail!(Shape, "source {}x{} is not divisible by n * f_s = {}", source.height, source.width, unit);
    }
    let target_grid = target_token_grid(codec, cfg.patch, source.frames, source.height, source.width)?;
    let small = if n == 1 { source.clone() } else { source.area_downsample(n)? };
    let mut sparse = patchify(&codec.encode(&small)?, cfg.patch, Segment::CondSparse)?;
    if cfg.position_correction {
        sparse = apply_position_correction(sparse, n, target_grid)?;
    }
    let frame = if cfg.include_first_frame {
        let first = source.leading_frames(codec.temporal_factor)?;
        let seq = patchify(&codec.encode(&first)?, cfg.patch, Segment::CondFrame)?;
        Some(if cfg.position_correction { apply_position_correction(seq, n, target_grid)? } else { seq })
    } else {
        None
    };
    Ok(SparseCondition { sparse, frame })
}

/// Assigns target-grid positions to condition tokens: a sparse token at
/// local `(t, i, j)` lands on `(t, n*i, n*j)`; a first-frame token at
/// `(0, i, j)` keeps the target's frame-0 position `(0, i, j)`. Target
/// sequences pass through unchanged.
pub fn apply_position_correction(mut seq: TokenSequence, n: usize, target_grid: [usize; 3]) -> Result<TokenSequence> {
    let local: Vec<[usize; 3]> = grid_positions(seq.grid);
    let map = |p: [usize; 3]| -> [usize; 3] {
        match seq.segment {
            Segment::Target => p,
            Segment::CondSparse => [p[0], n * p[1], n * p[2]],
            Segment::CondFrame => [0, p[1], p[2]],
        }
    };
    if seq.segment == Segment::Target {
        return Ok(seq);
    }
    if seq.segment == Segment::CondFrame && seq.grid[0] != 1 {
        bail!(Layout, "first-frame condition spans {} token frames, expected 1", seq.grid[0]);
    }
    let mut positions = Vec::with_capacity(local.len());
    for p in local {
        let q = map(p);
        if q.iter().zip(&target_grid).any(|(a, b)| a >= b) {
            bail!(Layout, "{:?} token at {:?} maps to {:?}, outside target grid {:?}", seq.segment, p, q, target_grid);
        }
        positions.push(q);
    }
    seq.positions = positions;
    Ok(seq)
}

/// Head-dim sub-bands for the `(t, h, w)` axes: a quarter to time, three
/// eighths to each spatial axis, each rounded to an even size.
pub fn rope_bands(head_dim: usize) -> Result<[usize; 3]> {
    if head_dim == 0 || !head_dim.is_multiple_of(2) {
        bail!(Config, "head_dim {} must be even for rotary embeddings", head_dim);
    }
    let round_even = |x: f64| 2 * ((x / 2.0) + 0.5) as usize;
    let t = round_even(head_dim as f64 / 4.0);
    let h = round_even(head_dim as f64 * 3.0 / 8.0);
    if t == 0 || h == 0 || t + h >= head_dim {
        bail!(Config, "head_dim {} is too small to split across three axes", head_dim);
    }
    Ok([t, h, head_dim - t - h])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    /// Frequency base; band `b` uses `theta^(-2k/b)` for pair `k`.
    pub theta: f64,
}

impl Default for RopeConfig {
    fn default() -> Self {
        RopeConfig { theta: 100.0 }
    }
}

/// Rotation angles for every token: the `t` band rotates by the token's
/// time index, the `h` and `w` bands by its row and column.
pub fn rope_angles<T: Real>(positions: &[[usize; 3]], head_dim: usize, rope: RopeConfig) -> Result<RotaryAngles<T>> {
    let bands = rope_bands(head_dim)?;
    let half = head_dim / 2;
    let mut freqs: Vec<(usize, f64)> = Vec::with_capacity(half);
    for (axis, &b) in bands.iter().enumerate() {
        for k in 0..b / 2 {
            freqs.push((axis, libm::pow(rope.theta, -(2.0 * k as f64) / b as f64)));
        }
    }
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for p in positions {
        for &(axis, f) in &freqs {
            let a = p[axis] as f64 * f;
            cos.push(T::from_f64(libm::cos(a)));
            sin.push(T::from_f64(libm::sin(a)));
        }
    }
    Ok(RotaryAngles { half, cos, sin })
}

/// Applies 3D rotary embeddings to `[positions.len(), heads * head_dim]`
/// queries or keys.
pub fn rope_3d<T: Real>(x: &[T], positions: &[[usize; 3]], heads: usize, head_dim: usize, rope: RopeConfig) -> Result<Vec<T>> {
    if x.len() != positions.len() * heads * head_dim {
        bail!(Shape, "rope input of {} values for {} tokens x {} heads x {}", x.len(), positions.len(), heads, head_dim);
    }
    let angles = rope_angles::<T>(positions, head_dim, rope)?;
    Ok(crate::kernels::rotate_pairs(x, &angles.cos, &angles.sin, heads, head_dim, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskVariant {
    /// `[target; condition]`: condition rows may not see target columns.
    Basic,
    /// `[target; sparse; frame]`: target rows see everything, each
    /// condition segment sees only itself.
    Stst,
    /// No masking at all (causal-attention ablation).
    Bidirectional,
}

/// Segment lengths of a joint sequence, ordered `[target, sparse, frame]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLengths {
    pub target: usize,
    pub sparse: usize,
    pub frame: usize,
}

impl SegmentLengths {
    pub fn new(target: usize, sparse: usize, frame: usize) -> Self {
        SegmentLengths { target, sparse, frame }
    }

    /// From signed lengths as they may appear in configuration files.
    pub fn from_signed(lengths: &[i64]) -> Result<Self> {
        if lengths.is_empty() || lengths.len() > 3 {
            bail!(Config, "expected 1 to 3 segment lengths, got {}", lengths.len());
        }
        let mut out = [0usize; 3];
        for (o, &l) in out.iter_mut().zip(lengths) {
            if l < 0 {
                bail!(Config, "negative segment length {}", l);
            }
            *o = l as usize;
        }
        Ok(SegmentLengths::new(out[0], out[1], out[2]))
    }

    pub fn total(&self) -> usize {
        self.target + self.sparse + self.frame
    }

    pub fn offsets(&self) -> [usize; 4] {
        let a = self.target;
        let b = a + self.sparse;
        [0, a, b, b + self.frame]
    }

    pub fn segment_of(&self, i: usize) -> Option<Segment> {
        let [_, a, b, c] = self.offsets();
        if i < a {
            Some(Segment::Target)
        } else if i < b {
            Some(Segment::CondSparse)
        } else if i < c {
            Some(Segment::CondFrame)
        } else {
            None
        }
    }
}

/// Anything that can answer "may row `i` attend column `j`". Lets callers
/// evaluate a mask lazily instead of materializing it.
pub trait AttentionPolicy {
    fn size(&self) -> usize;
    fn allows(&self, row: usize, col: usize) -> bool;

    /// Additive bias for one row: `0` where allowed, `-inf` elsewhere.
    fn fill_row(&self, row: usize, out: &mut [f32]) {
        for (col, o) in out.iter_mut().enumerate() {
            *o = if self.allows(row, col) { 0.0 } else { f32::NEG_INFINITY };
        }
    }
}

/// Lazy mask defined by segment lengths and a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentPolicy {
    pub lengths: SegmentLengths,
    pub variant: MaskVariant,
}

impl AttentionPolicy for SegmentPolicy {
    fn size(&self) -> usize {
        self.lengths.total()
    }

    fn allows(&self, row: usize, col: usize) -> bool {
        let (r, c) = (self.lengths.segment_of(row), self.lengths.segment_of(col));
        match self.variant {
            MaskVariant::Bidirectional => true,
            MaskVariant::Basic => r == Some(Segment::Target) || c != Some(Segment::Target),
            MaskVariant::Stst => r == Some(Segment::Target) || r == c,
        }
    }
}

/// Dense additive mask over a joint sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub lengths: SegmentLengths,
    pub variant: MaskVariant,
    /// `size x size`, row-major, entries `0.0` or `-inf`.
    data: Arc<[f32]>,
}

impl AttentionMask {
    pub fn materialize(policy: &SegmentPolicy) -> Self {
        let n = policy.size();
        let mut data = vec![0.0f32; n * n];
        for (row, chunk) in data.chunks_mut(n.max(1)).enumerate().take(n) {
            policy.fill_row(row, chunk);
        }
        AttentionMask { lengths: policy.lengths, variant: policy.variant, data: data.into() }
    }

    pub fn size(&self) -> usize {
        self.lengths.total()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.size() + col]
    }

    /// `'0'` for attendable cells, `'X'` for masked ones, one row per line.
    pub fn dump(&self) -> String {
        let n = self.size();
        let mut s = String::with_capacity(n * (n + 1));
        for row in 0..n {
            for col in 0..n {
                s.push(if self.get(row, col) == 0.0 { '0' } else { 'X' });
            }
            s.push('\n');
        }
        s
    }
}

/// Builds the additive attention mask for `lengths = [target, sparse, frame]`.
/// `Basic` takes `[target, condition]` and rejects a non-empty third segment.
pub fn build_mask(lengths: &[usize], variant: MaskVariant) -> Result<AttentionMask> {
    let l = match (variant, lengths) {
        (MaskVariant::Basic, [t, s]) | (MaskVariant::Basic, [t, s, 0]) => SegmentLengths::new(*t, *s, 0),
        (MaskVariant::Basic, _) => bail!(Config, "basic mask takes [target, condition] lengths, got {:?}", lengths),
        (_, [t, s, i]) => SegmentLengths::new(*t, *s, *i),
        (_, [t, s]) => SegmentLengths::new(*t, *s, 0),
        _ => bail!(Config, "expected [target, sparse, frame] lengths, got {:?}", lengths),
    };
    Ok(AttentionMask::materialize(&SegmentPolicy { lengths: l, variant }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    const X: f32 = f32::NEG_INFINITY;

    fn rows(m: &AttentionMask) -> Vec<Vec<f32>> {
        m.data().chunks(m.size()).map(|r| r.to_vec()).collect()
    }

    #[test]
    fn stst_mask_example() {
        let m = build_mask(&[2, 2, 1], MaskVariant::Stst).unwrap();
        assert_eq!(
            rows(&m),
            vec![vec![0., 0., 0., 0., 0.], vec![0., 0., 0., 0., 0.], vec![X, X, 0., 0., X], vec![X, X, 0., 0., X], vec![X, X, X, X, 0.],]
        );
        assert_eq!(m.dump(), "00000\n00000\nXX00X\nXX00X\nXXXX0\n");
    }

    #[test]
    fn basic_mask_example() {
        let m = build_mask(&[1, 1], MaskVariant::Basic).unwrap();
        assert_eq!(rows(&m), vec![vec![0., 0.], vec![X, 0.]]);
        assert!(build_mask(&[1, 1, 1], MaskVariant::Basic).is_err());
    }

    #[test]
    fn negative_lengths_are_config_errors() {
        assert!(matches!(SegmentLengths::from_signed(&[4, -1, 2]), Err(crate::Error::Config(_))));
        assert_eq!(SegmentLengths::from_signed(&[4, 1]).unwrap(), SegmentLengths::new(4, 1, 0));
    }

    #[test]
    fn patchify_counts_and_positions() {
        let g = LatentGrid::new(8, 16, 16, 24, vec![0.0; 8 * 16 * 16 * 24]).unwrap();
        let s = patchify(&g, Patch::default(), Segment::Target).unwrap();
        assert_eq!(s.len(), 512);
        assert_eq!(s.dim, 96);
        let g = LatentGrid::new(2, 3, 4, 1, (0..24).map(|x| x as f32).collect()).unwrap();
        let s = patchify(&g, Patch { t: 1, h: 1, w: 1 }, Segment::Target).unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.positions[5], [0, 1, 1]);
        assert_eq!(s.tokens, g.data);
        assert!(patchify(&g, Patch { t: 1, h: 2, w: 2 }, Segment::Target).is_err());
    }

    #[test]
    fn unpatchify_inverts_patchify() {
        let mut r = rng::seeded(1);
        let data = (0..4 * 6 * 8 * 3).map(|_| rng::uniform(&mut r, -1.0, 1.0) as f32).collect();
        let g = LatentGrid::new(4, 6, 8, 3, data).unwrap();
        let p = Patch { t: 2, h: 3, w: 2 };
        let s = patchify(&g, p, Segment::CondSparse).unwrap();
        assert_eq!(unpatchify(&s, p, 3).unwrap(), g);
    }

    #[test]
    fn sparse_condition_default_counts() {
        let src = VideoClip::zeros(16, 32, 32, 3);
        let c = build_sparse_condition(&src, &SparseCondConfig::default(), &CodecConfig::default()).unwrap();
        assert_eq!(c.sparse.len(), 128);
        assert_eq!(c.frame.as_ref().unwrap().len(), 64);
        assert!(c.sparse.tokens.iter().all(|&v| v == 0.0));
        assert_eq!(c.sparse.segment, Segment::CondSparse);
        assert_eq!(c.frame.as_ref().unwrap().segment, Segment::CondFrame);
    }

    #[test]
    fn sparse_condition_rejects_indivisible_source() {
        let src = VideoClip::zeros(16, 30, 32, 3);
        assert!(build_sparse_condition(&src, &SparseCondConfig::default(), &CodecConfig::default()).is_err());
    }

    #[test]
    fn n1_single_block_matches_first_frame_layout() {
        let mut r = rng::seeded(4);
        let data = (0..2 * 8 * 8 * 3).map(|_| rng::uniform(&mut r, 0.0, 1.0) as f32).collect();
        let src = VideoClip::new(2, 8, 8, 3, data).unwrap();
        let cfg = SparseCondConfig { spatial_downsample: 1, ..SparseCondConfig::default() };
        let c = build_sparse_condition(&src, &cfg, &CodecConfig::default()).unwrap();
        let f = c.frame.unwrap();
        assert_eq!(c.sparse.tokens, f.tokens);
        assert_eq!(c.sparse.positions, f.positions);
    }

    #[test]
    fn position_correction_examples() {
        let seq = |segment, grid: [usize; 3]| TokenSequence { segment, grid, dim: 0, tokens: Vec::new(), positions: grid_positions(grid) };
        let s = apply_position_correction(seq(Segment::CondSparse, [8, 4, 4]), 2, [8, 8, 8]).unwrap();
        let local = 3 * 16 + 4 + 2;
        assert_eq!(s.positions[local], [3, 2, 4]);
        let s = apply_position_correction(seq(Segment::CondSparse, [8, 4, 4]), 1, [8, 8, 8]).unwrap();
        assert_eq!(s.positions, grid_positions([8, 4, 4]));
        let f = apply_position_correction(seq(Segment::CondFrame, [1, 8, 8]), 2, [8, 8, 8]).unwrap();
        assert_eq!(f.positions[5 * 8 + 7], [0, 5, 7]);
        let t = apply_position_correction(seq(Segment::Target, [2, 2, 2]), 4, [1, 1, 1]).unwrap();
        assert_eq!(t.positions, grid_positions([2, 2, 2]));
        assert!(apply_position_correction(seq(Segment::CondSparse, [8, 4, 4]), 4, [8, 8, 8]).is_err());
    }

    #[test]
    fn rope_band_split() {
        assert_eq!(rope_bands(64).unwrap(), [16, 24, 24]);
        assert_eq!(rope_bands(32).unwrap(), [8, 12, 12]);
        assert_eq!(rope_bands(8).unwrap(), [2, 4, 2]);
        assert!(rope_bands(7).is_err());
        assert!(rope_bands(2).is_err());
    }

    #[test]
    fn rope_equal_positions_preserve_dot_product() {
        let mut r = rng::seeded(9);
        let q: Vec<f64> = (0..32).map(|_| rng::normal(&mut r)).collect();
        let k: Vec<f64> = (0..32).map(|_| rng::normal(&mut r)).collect();
        let p = [[3, 5, 2]];
        let qr = rope_3d(&q, &p, 1, 32, RopeConfig::default()).unwrap();
        let kr = rope_3d(&k, &p, 1, 32, RopeConfig::default()).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&q, &k) - dot(&qr, &kr)).abs() < 1e-12);
    }
}

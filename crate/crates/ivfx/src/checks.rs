//! Invariant suites shared by `selftest` and the acceptance run. Each
//! check compares the implementation against an independent oracle and
//! reports the worst deviation it saw.

use std::time::Instant;

use ivfx_core::autodiff::Graph;
use ivfx_core::codec::{CodecConfig, VideoClip};
use ivfx_core::layout::{
    build_mask, build_sparse_condition, grid_positions, rope_3d, target_token_grid, MaskVariant, Patch, RopeConfig, Segment,
    SparseCondConfig, TokenSequence,
};
use ivfx_core::lora::{attach, merge, LoraSpec};
use ivfx_core::model::{count_attention_flops, Model, ModelConfig, SequenceContext};
use ivfx_core::pipeline::EditConfig;
use ivfx_core::rng::{self, SeededRng};
use ivfx_core::sampler::{sample, SampleConfig};
use ivfx_core::synth::{self, Effect, SynthConfig};
use ivfx_core::train::{self, FlowSample, TrainConfig};
use ivfx_core::{Real, Tensor};

use crate::checkpoint::save_checkpoint;
use crate::error::Result;
use crate::experiment::examples;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!("{} {}: {} ({:.2}s)", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail, self.seconds)
    }
}

/// Times `f`; an error counts as a failure with its message as detail.
pub fn run(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let t0 = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { name: name.into(), pass, detail, seconds: t0.elapsed().as_secs_f64() }
}

fn randn<T: Real>(shape: &[usize], r: &mut SeededRng) -> Tensor<T> {
    Tensor::randn(shape, 1.0, r)
}

/// Scales every parameter to `N(0, std)` so no path is switched off by a
/// zero initialization.
pub fn randomize<T: Real>(model: &mut Model<T>, std: f64, seed: u64) {
    let mut r = rng::seeded(seed);
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    for id in ids {
        let v = model.params.value_mut(id);
        let fresh = Tensor::<T>::randn(v.shape(), std, &mut r);
        *v = fresh;
    }
}

/// A context over `lengths` with random condition tokens and
/// distinct positions.
pub fn random_context<T: Real>(
    cfg: &ModelConfig,
    lengths: [usize; 3],
    variant: MaskVariant,
    r: &mut SeededRng,
) -> Result<SequenceContext<T>> {
    let seg = |segment: Segment, len: usize, base: usize, r: &mut SeededRng| TokenSequence {
        segment,
        grid: [1, 1, len],
        dim: cfg.token_dim,
        tokens: randn::<f32>(&[len, cfg.token_dim], r).into_data(),
        positions: (0..len).map(|i| [1, base + i / 3, i % 3]).collect(),
    };
    let sparse = seg(Segment::CondSparse, lengths[1], 0, r);
    let frame = seg(Segment::CondFrame, lengths[2], 5, r);
    let conds: Vec<&TokenSequence> = match (lengths[1], lengths[2]) {
        (0, 0) => vec![],
        (_, 0) => vec![&sparse],
        _ => vec![&sparse, &frame],
    };
    let target: Vec<[usize; 3]> = (0..lengths[0]).map(|i| [i % 2, i / 6, (i / 2) % 3]).collect();
    Ok(SequenceContext::new(cfg, &target, &conds, variant)?)
}

/// Oracle for the attention rule: may a row in segment `r` attend a column
/// in segment `c`? Segments are 0 target, 1 sparse, 2 frame.
fn oracle_allows(variant: MaskVariant, r: usize, c: usize) -> bool {
    match variant {
        MaskVariant::Bidirectional => true,
        // condition rows are blind to the noisy target
        MaskVariant::Basic => r == 0 || c != 0,
        // target rows see all; each condition segment sees itself
        MaskVariant::Stst => r == 0 || r == c,
    }
}

fn oracle_segment(lengths: [usize; 3], i: usize) -> usize {
    let mut acc = 0;
    for (s, &l) in lengths.iter().enumerate() {
        acc += l;
        if i < acc {
            return s;
        }
    }
    unreachable!("index {i} beyond {lengths:?}")
}

/// Every segment-length triple with entries up to `max_len`, every
/// variant, cell by cell.
pub fn mask_exhaustive(max_len: usize) -> Result<(bool, String)> {
    let mut cells = 0usize;
    let mut bad = Vec::new();
    for t in 0..=max_len {
        for s in 0..=max_len {
            for i in 0..=max_len {
                for variant in [MaskVariant::Stst, MaskVariant::Basic, MaskVariant::Bidirectional] {
                    let lengths = [t, s, i];
                    if variant == MaskVariant::Basic && i != 0 {
                        if build_mask(&lengths, variant).is_ok() {
                            bad.push(format!("basic mask accepted three segments {lengths:?}"));
                        }
                        continue;
                    }
                    let m = build_mask(&lengths, variant)?;
                    let n = t + s + i;
                    if m.size() != n {
                        bad.push(format!("{variant:?} {lengths:?}: size {}", m.size()));
                        continue;
                    }
                    for row in 0..n {
                        for col in 0..n {
                            cells += 1;
                            let want = if oracle_allows(variant, oracle_segment(lengths, row), oracle_segment(lengths, col)) {
                                0.0
                            } else {
                                f32::NEG_INFINITY
                            };
                            if m.get(row, col) != want {
                                bad.push(format!("{variant:?} {lengths:?} cell ({row},{col})"));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((bad.is_empty(), format!("{cells} cells checked, {} mismatches {:?}", bad.len(), bad.iter().take(3).collect::<Vec<_>>())))
}

fn isolation_trial(seed: u64, variant: MaskVariant) -> Result<bool> {
    let mut r = rng::seeded(seed);
    let heads = 1 + rng::below(&mut r, 2);
    let head_dim = [8, 16][rng::below(&mut r, 2)];
    let cfg = ModelConfig {
        depth: 1 + rng::below(&mut r, 3),
        model_dim: heads * head_dim,
        heads,
        head_dim,
        mlp_ratio: 2,
        vocab_size: 32,
        token_dim: 12,
        time_freq_dim: 8,
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::init(cfg, seed)?;
    randomize(&mut model, 0.3, seed ^ 0x5eed);
    let lengths = [2 + rng::below(&mut r, 7), 1 + rng::below(&mut r, 6), rng::below(&mut r, 4)];
    let ctx = random_context::<f32>(&cfg, lengths, variant, &mut r)?;
    let t = rng::uniform(&mut r, 0.0, 1.0);
    let text = [1 + rng::below(&mut r, 31), 1 + rng::below(&mut r, 31)];
    let z1 = randn::<f32>(&[lengths[0], cfg.token_dim], &mut r);
    let z2 = randn::<f32>(&[lengths[0], cfg.token_dim], &mut r);
    let blocks = |z: &Tensor<f32>| -> Result<Vec<Tensor<f32>>> {
        let mut g = Graph::inference(&model.params);
        let x = g.input(z.clone());
        let out = model.forward(&mut g, x, &ctx, t, &text)?;
        Ok(out.blocks.iter().map(|&b| g.value(b).clone()).collect())
    };
    let (a, b) = (blocks(&z1)?, blocks(&z2)?);
    let width = cfg.model_dim;
    let cond = lengths[0] * width..;
    Ok(a.iter().zip(&b).all(|(x, y)| x.data()[cond.clone()].iter().zip(&y.data()[cond.clone()]).all(|(p, q)| p.to_bits() == q.to_bits())))
}

/// Perturbing the noisy target leaves condition activations bit-identical
/// at every layer under the sparse-condition mask, and does not without a
/// mask.
pub fn causal_isolation(trials: usize) -> Result<(bool, String)> {
    let mut isolated = 0;
    let mut leaked = 0;
    for k in 0..trials {
        isolated += isolation_trial(1000 + k as u64, MaskVariant::Stst)? as usize;
        leaked += !isolation_trial(1000 + k as u64, MaskVariant::Bidirectional)? as usize;
    }
    let pass = isolated == trials && leaked == trials;
    Ok((pass, format!("{isolated}/{trials} isolated with mask; negative control leaked in {leaked}/{trials}")))
}

/// Sparse tokens sit at the target position `(t, n i, n j)`, first-frame
/// tokens at the target's frame-0 position `(0, i, j)`.
pub fn position_correction(trials: usize) -> Result<(bool, String)> {
    let codec = CodecConfig::default();
    let patch = Patch::default();
    let mut r = rng::seeded(77);
    let mut checked = 0;
    let mut bad = 0;
    for _ in 0..trials {
        let n = [1, 2, 4][rng::below(&mut r, 3)];
        let unit = n * codec.spatial_factor * patch.h;
        let (frames, h, w) = (2 * (1 + rng::below(&mut r, 4)), unit * (1 + rng::below(&mut r, 3)), unit * (1 + rng::below(&mut r, 3)));
        let clip = VideoClip::zeros(frames, h, w, 3);
        let cfg = SparseCondConfig { spatial_downsample: n, ..SparseCondConfig::default() };
        let cond = build_sparse_condition(&clip, &cfg, &codec)?;
        let tg = target_token_grid(&codec, patch, frames, h, w)?;
        let target = grid_positions(tg);
        let at = |t: usize, i: usize, j: usize| target[(t * tg[1] + i) * tg[2] + j];
        for (local, got) in grid_positions(cond.sparse.grid).into_iter().zip(&cond.sparse.positions) {
            checked += 1;
            bad += (*got != at(local[0], n * local[1], n * local[2])) as usize;
        }
        let frame = cond.frame.as_ref().expect("first frame included");
        for (local, got) in grid_positions(frame.grid).into_iter().zip(&frame.positions) {
            checked += 1;
            bad += (*got != at(0, local[1], local[2])) as usize;
        }
    }
    Ok((bad == 0 && checked > 0, format!("{checked} condition positions checked, {bad} wrong")))
}

/// Scaled `Q K^T` logits are unchanged by a global shift of all positions
/// along each axis.
pub fn rope_relative(trials: usize) -> Result<(bool, String)> {
    let mut r = rng::seeded(4242);
    let rope = RopeConfig::default();
    let mut worst = 0.0f32;
    for _ in 0..trials {
        let heads = 1 + rng::below(&mut r, 3);
        let head_dim = [16, 32][rng::below(&mut r, 2)];
        let tokens = 2 + rng::below(&mut r, 7);
        let pos: Vec<[usize; 3]> = (0..tokens).map(|_| [rng::below(&mut r, 8), rng::below(&mut r, 16), rng::below(&mut r, 16)]).collect();
        let shift = [rng::below(&mut r, 9), rng::below(&mut r, 17), rng::below(&mut r, 17)];
        let moved: Vec<[usize; 3]> = pos.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        let q = randn::<f32>(&[tokens, heads * head_dim], &mut r);
        let k = randn::<f32>(&[tokens, heads * head_dim], &mut r);
        let logits = |p: &[[usize; 3]]| -> Result<Vec<f32>> {
            let qr = rope_3d(q.data(), p, heads, head_dim, rope)?;
            let kr = rope_3d(k.data(), p, heads, head_dim, rope)?;
            let scale = 1.0 / (head_dim as f32).sqrt();
            let w = heads * head_dim;
            let mut out = Vec::new();
            for h in 0..heads {
                for i in 0..tokens {
                    for j in 0..tokens {
                        let dot: f32 = (0..head_dim).map(|d| qr[i * w + h * head_dim + d] * kr[j * w + h * head_dim + d]).sum();
                        out.push(dot * scale);
                    }
                }
            }
            Ok(out)
        };
        let (a, b) = (logits(&pos)?, logits(&moved)?);
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f32::max);
    }
    Ok((worst < 1e-5, format!("max |logit change| {worst:.2e} over {trials} trials (tolerance 1e-5)")))
}

fn lora_model(seed: u64) -> Result<Model<f32>> {
    let cfg = ModelConfig {
        depth: 2,
        model_dim: 32,
        heads: 2,
        head_dim: 16,
        mlp_ratio: 2,
        vocab_size: 32,
        token_dim: 12,
        time_freq_dim: 8,
        ..ModelConfig::default()
    };
    let mut m = Model::<f32>::init(cfg, seed)?;
    randomize(&mut m, 0.2, seed);
    Ok(m)
}

fn rel_l2(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
    let den: f64 = b.data().iter().map(|y| (*y as f64).powi(2)).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// A fresh adapter changes nothing bit for bit; a trained one merged into
/// the base gives the same outputs.
pub fn lora_equivalence(trials: usize) -> Result<(bool, String)> {
    let base = lora_model(9)?;
    let mut adapted = base.clone();
    let spec = LoraSpec::new("lora.check", 4);
    attach(&mut adapted, &spec, 3)?;
    let mut r = rng::seeded(10);
    let mut noop = true;
    let inputs: Vec<_> = (0..trials)
        .map(|_| -> Result<_> {
            let ctx = random_context::<f32>(&base.config, [6, 4, 2], MaskVariant::Stst, &mut r)?;
            let x = randn::<f32>(&[6, base.config.token_dim], &mut r);
            Ok((ctx, x, rng::uniform(&mut r, 0.0, 1.0)))
        })
        .collect::<Result<_>>()?;
    for (ctx, x, t) in &inputs {
        let a = base.predict(x, ctx, *t, &[3, 4])?;
        let b = adapted.predict(x, ctx, *t, &[3, 4])?;
        noop &= a.bit_eq(&b);
    }
    // stand-in for training: random B
    let slots = adapted.adapters.clone();
    for s in &slots {
        let shape = adapted.params.tensor(&s.b)?.shape().to_vec();
        *adapted.params.tensor_mut(&s.b)? = Tensor::randn(&shape, 0.1, &mut r);
    }
    let mut merged = adapted.clone();
    merge(&mut merged, "lora.check")?;
    let mut worst = 0.0f64;
    let mut moved = 0.0f64;
    for (ctx, x, t) in &inputs {
        let a = adapted.predict(x, ctx, *t, &[3, 4])?;
        let m = merged.predict(x, ctx, *t, &[3, 4])?;
        worst = worst.max(rel_l2(&m, &a));
        moved = moved.max(rel_l2(&a, &base.predict(x, ctx, *t, &[3, 4])?));
    }
    let pass = noop && worst < 1e-5 && moved > 1e-3;
    Ok((pass, format!("fresh adapter bit-exact: {noop}; merge rel err {worst:.2e} (tolerance 1e-5); adapter effect {moved:.2e}")))
}

/// Tiny model configuration for the full-loss gradient check.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        depth: 2,
        model_dim: 8,
        heads: 1,
        head_dim: 8,
        mlp_ratio: 2,
        vocab_size: 6,
        max_text_len: 4,
        token_dim: 4,
        time_freq_dim: 4,
        ..ModelConfig::default()
    }
}

/// Autodiff against central differences for every parameter of the
/// flow-matching loss.
pub fn gradient_check() -> Result<(bool, String)> {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let cfg = gradcheck_config();
    let mut model = Model::<f64>::init(cfg, 5)?;
    randomize(&mut model, 0.3, 6);
    attach(&mut model, &LoraSpec::new("lora.grad", 2), 7)?;
    let slots = model.adapters.clone();
    let mut r = rng::seeded(8);
    for s in &slots {
        let shape = model.params.tensor(&s.b)?.shape().to_vec();
        *model.params.tensor_mut(&s.b)? = Tensor::randn(&shape, 0.3, &mut r);
    }
    // attaching froze the base; check every parameter
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    for &id in &ids {
        model.params.set_trainable(id, true);
    }
    let params = model.params.num_scalars();
    let ctx = random_context::<f64>(&cfg, [4, 3, 2], MaskVariant::Stst, &mut r)?;
    let x0 = randn::<f64>(&[4, cfg.token_dim], &mut r);
    let eps = randn::<f64>(&[4, cfg.token_dim], &mut r);
    let text = [2usize, 5];
    let sample = |eps: &Tensor<f64>| FlowSample { x0: &x0, eps: eps.clone(), t: 0.37, context: &ctx, text: &text, drop_text: false };
    let (_, grads) = train::flow_loss_and_grad(&model, &[sample(&eps)])?;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for id in ids {
        let n = model.params.value(id).numel();
        for j in 0..n {
            let orig = model.params.value(id).data()[j];
            model.params.value_mut(id).data_mut()[j] = orig + H;
            let lp = train::flow_loss(&model, &sample(&eps))?;
            model.params.value_mut(id).data_mut()[j] = orig - H;
            let lm = train::flow_loss(&model, &sample(&eps))?;
            model.params.value_mut(id).data_mut()[j] = orig;
            let fd = (lp - lm) / (2.0 * H);
            let an = grads.get(&id).map_or(0.0, |g| g.data()[j]);
            let e = (an - fd).abs() / an.abs().max(fd.abs()).max(FLOOR);
            if e > worst {
                worst = e;
                worst_at = format!("{}[{j}]", model.params.entry(id).name);
            }
        }
    }
    Ok((worst < 1e-4 && params <= 5000, format!("{params} parameters, max rel err {worst:.2e} at {worst_at} (tolerance 1e-4)")))
}

/// Decoding inverts encoding bit for bit; encoding is linear.
pub fn codec_roundtrip(trials: usize) -> Result<(bool, String)> {
    let codec = CodecConfig::default();
    let mut r = rng::seeded(31);
    let mut exact = 0;
    let mut worst_lin = 0.0f32;
    for _ in 0..trials {
        let (f, h, w) = (2 * (1 + rng::below(&mut r, 8)), 2 * (1 + rng::below(&mut r, 16)), 2 * (1 + rng::below(&mut r, 16)));
        let clip = |r: &mut SeededRng| {
            let data = (0..f * h * w * 3).map(|_| rng::uniform(r, 0.0, 1.0) as f32).collect();
            VideoClip::new(f, h, w, 3, data)
        };
        let (x, y) = (clip(&mut r)?, clip(&mut r)?);
        let back = codec.decode(&codec.encode(&x)?)?;
        exact += (back.data.iter().zip(&x.data).all(|(a, b)| a.to_bits() == b.to_bits()) && back.dims() == x.dims()) as usize;
        let (a, b) = (rng::uniform(&mut r, -2.0, 2.0) as f32, rng::uniform(&mut r, -2.0, 2.0) as f32);
        let combo = VideoClip::new(f, h, w, 3, x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect())?;
        let (ex, ey, ec) = (codec.encode(&x)?, codec.encode(&y)?, codec.encode(&combo)?);
        for ((c, p), q) in ec.data.iter().zip(&ex.data).zip(&ey.data) {
            let lin = a * p + b * q;
            let tol = f32::EPSILON * (a * p).abs().max((b * q).abs()).max(1.0);
            worst_lin = worst_lin.max((c - lin).abs() / tol);
        }
    }
    Ok((
        exact == trials && worst_lin <= 1.0,
        format!("{exact}/{trials} bit-exact roundtrips; worst linearity error {worst_lin:.2} ulp-scaled (tolerance 1)"),
    ))
}

/// Analytic quadratic attention FLOP ratio of full-condition over sparse
/// conditioning at default shapes.
pub fn flop_ratio() -> Result<(f64, f64, [usize; 2])> {
    let model = ModelConfig::default();
    let clip = VideoClip::zeros(16, 32, 32, 3);
    let sparse = EditConfig::default().context::<f32>(&model, &clip)?;
    let full_edit = ivfx_core::ablation::Mechanisms::without(Some(ivfx_core::ablation::Axis::Stst)).edit_config(&EditConfig::default());
    let full = full_edit.context::<f32>(&model, &clip)?;
    let ls = |c: &SequenceContext<f32>| [c.lengths.target, c.lengths.sparse, c.lengths.frame];
    let q = |c: &SequenceContext<f32>| count_attention_flops(&ls(c), &model).quadratic as f64;
    let lens = [sparse.lengths.total(), full.lengths.total()];
    Ok((q(&full) / q(&sparse), (lens[1] as f64 / lens[0] as f64).powi(2), lens))
}

/// Two identically seeded tiny runs (both stages, checkpoint save and
/// sampling) produce identical bytes; a different seed does not.
pub fn determinism() -> Result<(bool, String)> {
    let run = |seed: u64| -> Result<(Vec<u8>, Vec<u8>, Vec<u32>)> {
        let cfg = ModelConfig { depth: 1, model_dim: 32, heads: 1, ..ModelConfig::default() };
        let edit = EditConfig::default();
        let syn = SynthConfig::default();
        let mut model = Model::<f32>::init(cfg, seed)?;
        let general = synth::generate_general(seed, 3, &syn)?;
        let ex = examples(&model, &edit, &general)?;
        let c1 = TrainConfig { steps: 3, probe_examples: 1, probe_timesteps: 1, seed, ..TrainConfig::editor() };
        train::train_stage(&mut model, &ex, &c1, &mut |_| {})?;
        train::finish_editor(&mut model)?;
        let vfx = synth::generate_vfx(seed, Effect::GlowOutline, 2, &syn)?;
        let ex = examples(&model, &edit, &vfx)?;
        let c2 = TrainConfig { steps: 3, probe_examples: 1, probe_timesteps: 1, seed, ..TrainConfig::effect() };
        train::train_stage(&mut model, &ex, &c2, &mut |_| {})?;
        let dir = tempdir()?;
        save_checkpoint(&dir, &model, &edit)?;
        let weights = std::fs::read(dir.join("weights.ivfx")).map_err(|source| crate::error::Error::Io { path: dir.clone(), source })?;
        let manifest = std::fs::read(dir.join("manifest.json")).map_err(|source| crate::error::Error::Io { path: dir.clone(), source })?;
        let _ = std::fs::remove_dir_all(&dir);
        let sc = SampleConfig { steps: 3, seed, ..SampleConfig::default() };
        let out = sample(&model, &edit, &vfx[0].source, &vfx[0].instruction, &sc)?;
        Ok((weights, manifest, out.data.iter().map(|v| v.to_bits()).collect()))
    };
    let (a, b, c) = (run(21)?, run(21)?, run(22)?);
    let same = a == b;
    let differs = a.0 != c.0 && a.2 != c.2;
    Ok((same && differs, format!("same seed identical: {same}; different seed differs: {differs}")))
}

fn tempdir() -> Result<std::path::PathBuf> {
    static COUNTER: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let p = std::env::temp_dir().join(format!("ivfx-check-{}-{n}", std::process::id()));
    std::fs::create_dir_all(&p).map_err(|source| crate::error::Error::Io { path: p.clone(), source })?;
    Ok(p)
}

/// The invariant suites `selftest` runs.
pub fn invariant_suite() -> Vec<CheckResult> {
    vec![
        run("attention masks (exhaustive, lengths <= 8)", || mask_exhaustive(8)),
        run("condition isolation (20 models + negative control)", || causal_isolation(20)),
        run("position correction", || position_correction(100)),
        run("rotary relative positions", || rope_relative(100)),
        run("adapter no-op and merge", || lora_equivalence(100)),
        run("gradients of the flow loss", gradient_check),
        run("codec roundtrip and linearity", || codec_roundtrip(100)),
        run("analytic FLOP ratio", || {
            let (ratio, want, lens) = flop_ratio()?;
            let pass = ((ratio - want) / want).abs() <= 4.0 * f64::EPSILON;
            Ok((pass, format!("L {} vs {}: quadratic ratio {ratio:.12} vs {want:.12}", lens[1], lens[0])))
        }),
        run("seeded determinism", determinism),
    ]
}

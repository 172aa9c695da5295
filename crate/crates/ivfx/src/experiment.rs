//! Two-stage training recipe and the ablation runner.
//!
//! Every variant shares the recipe's seeds and data; it differs from the
//! full method in exactly one mechanism. Stage-1 editors are cached by
//! condition layout, so variants that only change stage 2 reuse the full
//! method's editor.

use std::collections::HashMap;
use std::time::Instant;

use ivfx_core::ablation::{Axis, Mechanisms};
use ivfx_core::metrics::{MetricConfig, Summary, TripletMetrics};
use ivfx_core::model::{count_attention_flops, AttentionFlops, Model, ModelConfig, ModelStage};
use ivfx_core::pipeline::EditConfig;
use ivfx_core::sampler::SampleConfig;
use ivfx_core::synth::{self, EditTriplet, Effect, SynthConfig};
use ivfx_core::train::{self, StepRecord, TrainConfig, TrainExample, TrainReport};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{evaluate, EvalReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub model: ModelConfig,
    pub edit: EditConfig,
    pub synth: SynthConfig,
    pub general_count: usize,
    pub effect: Effect,
    pub effect_count: usize,
    pub eval_count: usize,
    pub editor: TrainConfig,
    pub effect_training: TrainConfig,
    pub sample: SampleConfig,
    pub metric: MetricConfig,
    /// Root seed; model init, data and training seeds derive from it.
    pub seed: u64,
}

/// Backbone used by the default recipe: half the width and two thirds the
/// depth of `ModelConfig::default()`, which keeps the ablation (four
/// stage-1 runs, one at full-condition length) near an hour on one core.
pub fn recipe_model() -> ModelConfig {
    ModelConfig { depth: 4, model_dim: 96, heads: 3, ..ModelConfig::default() }
}

impl Default for Recipe {
    fn default() -> Self {
        Recipe {
            model: recipe_model(),
            edit: EditConfig::default(),
            synth: SynthConfig::default(),
            general_count: 200,
            effect: Effect::GlowOutline,
            effect_count: 8,
            eval_count: 8,
            editor: TrainConfig::editor(),
            effect_training: TrainConfig::effect(),
            sample: SampleConfig::default(),
            metric: MetricConfig::default(),
            seed: 0,
        }
    }
}

const STREAM_INIT: u64 = 11;
const STREAM_GENERAL: u64 = 12;
const STREAM_EFFECT: u64 = 13;
const STREAM_EVAL: u64 = 14;
const STREAM_EDITOR: u64 = 15;
const STREAM_EFFECT_TRAIN: u64 = 16;
const STREAM_SAMPLE: u64 = 17;

fn derive(seed: u64, stream: u64) -> u64 {
    ivfx_core::rng::derive_seed(seed, stream)
}

/// Training and evaluation sets of a recipe.
#[derive(Debug, Clone)]
pub struct RecipeData {
    pub general: Vec<EditTriplet>,
    pub effect: Vec<EditTriplet>,
    pub held_out: Vec<EditTriplet>,
}

impl Recipe {
    pub fn data(&self) -> Result<RecipeData> {
        Ok(RecipeData {
            general: synth::generate_general(derive(self.seed, STREAM_GENERAL), self.general_count, &self.synth)?,
            effect: synth::generate_vfx(derive(self.seed, STREAM_EFFECT), self.effect, self.effect_count, &self.synth)?,
            held_out: synth::generate_vfx(derive(self.seed, STREAM_EVAL), self.effect, self.eval_count, &self.synth)?,
        })
    }

    pub fn editor_config(&self) -> TrainConfig {
        TrainConfig { seed: derive(self.seed, STREAM_EDITOR), ..self.editor.clone() }
    }

    pub fn effect_config(&self) -> TrainConfig {
        TrainConfig { seed: derive(self.seed, STREAM_EFFECT_TRAIN), ..self.effect_training.clone() }
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig { seed: derive(self.seed, STREAM_SAMPLE), ..self.sample }
    }

    pub fn init_model(&self) -> Result<Model<f32>> {
        Ok(Model::init(self.model, derive(self.seed, STREAM_INIT))?)
    }
}

/// Training examples under `edit`'s condition layout; rotary tables and
/// masks are shared across examples.
pub fn examples(model: &Model<f32>, edit: &EditConfig, triplets: &[EditTriplet]) -> Result<Vec<TrainExample<f32>>> {
    edit.check_model(&model.config)?;
    let tok = model.tokenizer();
    let mut out: Vec<TrainExample<f32>> = Vec::with_capacity(triplets.len());
    for t in triplets {
        let mut context = edit.context::<f32>(&model.config, &t.source)?;
        if let Some(first) = out.first() {
            context.share_static(&first.context);
        }
        out.push(TrainExample { x0: edit.encode_target(&t.target)?, context, text: tok.encode(&t.instruction) });
    }
    Ok(out)
}

/// Stage 1 on the general set; returns the merged editor.
pub fn train_editor(
    recipe: &Recipe,
    edit: &EditConfig,
    data: &RecipeData,
    progress: &mut dyn FnMut(&StepRecord),
) -> Result<(Model<f32>, TrainReport)> {
    let mut model = recipe.init_model()?;
    let ex = examples(&model, edit, &data.general)?;
    let report = train::train_stage(&mut model, &ex, &recipe.editor_config(), progress)?;
    train::finish_editor(&mut model)?;
    Ok((model, report))
}

/// Stage 2 on the effect pairs; the effect adapter stays attached.
pub fn train_effect(
    recipe: &Recipe,
    editor: &Model<f32>,
    edit: &EditConfig,
    data: &RecipeData,
    progress: &mut dyn FnMut(&StepRecord),
) -> Result<(Model<f32>, TrainReport)> {
    let mut model = editor.clone();
    let ex = examples(&model, edit, &data.effect)?;
    let report = train::train_stage(&mut model, &ex, &recipe.effect_config(), progress)?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub axis: Option<Axis>,
    pub label: String,
    pub mechanisms: Mechanisms,
    pub sequence: [usize; 3],
    pub flops: AttentionFlops,
    pub editor: Option<TrainReport>,
    pub effect: Option<TrainReport>,
    pub eval: EvalReport,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl VariantResult {
    pub fn metrics(&self) -> Vec<TripletMetrics> {
        self.eval.metrics()
    }

    /// Final over initial stage-2 probe loss.
    pub fn effect_loss_ratio(&self) -> Option<f64> {
        self.effect.as_ref().map(|r| r.probe_final / r.probe_initial)
    }
}

/// Stage-1 editors keyed by condition layout, with their reports and
/// training time.
pub type EditorCache = HashMap<String, (Model<f32>, TrainReport, f64)>;

fn cache_key(edit: &EditConfig) -> String {
    serde_json::to_string(edit).expect("edit config serializes")
}

/// Which part of a run is reporting progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Editor,
    Effect,
}

pub fn run_variant(
    recipe: &Recipe,
    data: &RecipeData,
    axis: Option<Axis>,
    cache: &mut EditorCache,
    progress: &mut dyn FnMut(Phase, &StepRecord),
) -> Result<VariantResult> {
    let mech = Mechanisms::without(axis);
    let edit = mech.edit_config(&recipe.edit);
    let probe_ctx = edit.context::<f32>(&recipe.model, &data.held_out[0].source)?;
    let l = probe_ctx.lengths;
    let sequence = [l.target, l.sparse, l.frame];
    let flops = count_attention_flops(&sequence, &recipe.model);

    let mut train_seconds = 0.0;
    let (editor, editor_report) = if mech.pretrain {
        let key = cache_key(&edit);
        if !cache.contains_key(&key) {
            let t0 = Instant::now();
            let (m, r) = train_editor(recipe, &edit, data, &mut |s| progress(Phase::Editor, s))?;
            cache.insert(key.clone(), (m, r, t0.elapsed().as_secs_f64()));
        }
        let (m, r, secs) = &cache[&key];
        train_seconds += secs;
        (m.clone(), Some(r.clone()))
    } else {
        // the random base stands in for the editor
        let mut m = recipe.init_model()?;
        m.stage = ModelStage::Editor;
        (m, None)
    };
    let (model, effect_report) = if mech.effect_lora {
        let t0 = Instant::now();
        let (m, r) = train_effect(recipe, &editor, &edit, data, &mut |s| progress(Phase::Effect, s))?;
        train_seconds += t0.elapsed().as_secs_f64();
        (m, Some(r))
    } else {
        (editor, None)
    };
    let t0 = Instant::now();
    let eval = evaluate(&model, &edit, &data.held_out, &recipe.sample_config(), &recipe.metric);
    Ok(VariantResult {
        axis,
        label: axis.map_or("Full".to_string(), |a| a.label().to_string()),
        mechanisms: mech,
        sequence,
        flops,
        editor: editor_report,
        effect: effect_report,
        eval,
        train_seconds,
        eval_seconds: t0.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub recipe: Recipe,
    pub full: VariantResult,
    pub variants: Vec<VariantResult>,
}

/// Paired comparison of a variant against the full method on the same
/// held-out triplets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    /// variant minus full.
    pub psnr: Summary,
    pub iou: Summary,
}

pub fn paired_delta(full: &VariantResult, variant: &VariantResult) -> PairedDelta {
    let mut dp = Vec::new();
    let mut di = Vec::new();
    for (a, b) in full.eval.rows.iter().zip(&variant.eval.rows) {
        if let (Some(a), Some(b)) = (a.metrics, b.metrics) {
            dp.push(b.psnr - a.psnr);
            di.push(b.iou - a.iou);
        }
    }
    PairedDelta { psnr: Summary::of(&dp), iou: Summary::of(&di) }
}

impl AblationReport {
    pub fn variant(&self, axis: Axis) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.axis == Some(axis))
    }

    fn rows(&self) -> impl Iterator<Item = &VariantResult> {
        std::iter::once(&self.full).chain(&self.variants)
    }

    /// One row per variant in the order full, then the requested axes.
    pub fn csv(&self) -> String {
        let mut s = String::from(
            "variant,seq_len,attention_flops,psnr_mean,psnr_se,iou_mean,iou_se,temporal_mean,effect_loss_ratio,train_s,eval_s\n",
        );
        for v in self.rows() {
            let m = &v.eval.summary;
            s.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{},{:.1},{:.1}\n",
                v.label,
                v.flops.sequence_len,
                v.flops.total,
                m.psnr.mean,
                m.psnr.std_error(),
                m.iou.mean,
                m.iou.std_error(),
                m.temporal.mean,
                v.effect_loss_ratio().map_or(String::new(), |r| format!("{r:.4}")),
                v.train_seconds,
                v.eval_seconds
            ));
        }
        s
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from(
            "| Variant | L | Attn. FLOPs | Bg. PSNR (dB) | Effect IoU | Temporal err. | Train (s) | Eval (s) |\n|---|---|---|---|---|---|---|---|\n",
        );
        for v in self.rows() {
            let m = &v.eval.summary;
            s.push_str(&format!(
                "| {} | {} | {:.3e} | {:.2} ± {:.2} | {:.3} ± {:.3} | {:.4} | {:.0} | {:.0} |\n",
                v.label,
                v.flops.sequence_len,
                v.flops.total as f64,
                m.psnr.mean,
                m.psnr.std_error(),
                m.iou.mean,
                m.iou.std_error(),
                m.temporal.mean,
                v.train_seconds,
                v.eval_seconds
            ));
        }
        s
    }
}

/// Full method plus one variant per axis, sharing seeds, data and cached
/// editors.
pub fn run_ablation(recipe: &Recipe, axes: &[Axis], progress: &mut dyn FnMut(&str, Phase, &StepRecord)) -> Result<AblationReport> {
    let data = recipe.data()?;
    let mut cache = EditorCache::new();
    let full = run_variant(recipe, &data, None, &mut cache, &mut |p, s| progress("Full", p, s))?;
    let mut variants = Vec::new();
    for &axis in axes {
        variants.push(run_variant(recipe, &data, Some(axis), &mut cache, &mut |p, s| progress(axis.label(), p, s))?);
    }
    Ok(AblationReport { recipe: recipe.clone(), full, variants })
}

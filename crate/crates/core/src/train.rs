//! Flow-matching objective and the two-stage training loop.
//!
//! `x_t = (1 - t) x0 + t eps`, target velocity `eps - x0`, mean squared
//! error over target tokens only. Stage `EDITOR` trains a high-rank adapter
//! on general edits starting from random weights; stage `EFFECT` trains a
//! low-rank adapter on a handful of effect pairs with the merged editor
//! frozen.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{bail, Error, Result};
use crate::lora::{self, LoraSpec};
use crate::model::{Model, ModelStage, SequenceContext, NULL_TOKEN};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamId;
use crate::rng::{self, SeededRng};
use crate::{Real, Tensor};

pub const EDITOR_ADAPTER: &str = "lora.editor";
pub const EFFECT_ADAPTER: &str = "lora.effect";

const STREAM_ADAPTER: u64 = 1;
const STREAM_STEPS: u64 = 2;
const STREAM_PROBE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Editor,
    Effect,
}

/// Which base (non-adapter) parameters the optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseTraining {
    /// Adapter tensors only.
    Frozen,
    /// Adapter tensors plus every base parameter that is not an adapted
    /// weight matrix (embeddings, biases, norms, modulation, output head).
    Stem,
    /// Every parameter, adapted weight matrices included.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Linear ramp from 0 over this many steps, then constant.
    pub warmup_steps: usize,
    pub lora_rank: usize,
    pub lora_alpha: Option<f64>,
    pub lora_targets: Vec<String>,
    pub base_training: BaseTraining,
    /// Probability of replacing the instruction with NULL.
    pub cfg_drop: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub optimizer: AdamWConfig,
    /// Examples and stratified timesteps used for the fixed-noise loss
    /// probe taken before and after training.
    pub probe_examples: usize,
    pub probe_timesteps: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn editor() -> Self {
        TrainConfig {
            stage: Stage::Editor,
            steps: 2000,
            batch_size: 1,
            lr: 1e-3,
            warmup_steps: 50,
            lora_rank: 16,
            lora_alpha: None,
            lora_targets: lora::default_targets(),
            base_training: BaseTraining::Stem,
            cfg_drop: 0.1,
            t_min: 0.001,
            t_max: 0.999,
            optimizer: AdamWConfig::default(),
            probe_examples: 16,
            probe_timesteps: 4,
            seed: 0,
        }
    }

    pub fn effect() -> Self {
        TrainConfig {
            stage: Stage::Effect,
            steps: 500,
            lora_rank: 8,
            warmup_steps: 20,
            base_training: BaseTraining::Frozen,
            probe_examples: 8,
            ..TrainConfig::editor()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Editor => Self::editor(),
            Stage::Effect => Self::effect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.lora_rank == 0 {
            bail!(Config, "steps, batch_size and lora_rank must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "learning rate must be positive, got {}", self.lr);
        }
        if !(0.0..=1.0).contains(&self.cfg_drop) {
            bail!(Config, "cfg_drop must lie in [0, 1], got {}", self.cfg_drop);
        }
        if !(0.0 < self.t_min && self.t_min < self.t_max && self.t_max < 1.0) {
            bail!(Config, "timestep range must satisfy 0 < t_min < t_max < 1");
        }
        Ok(())
    }

    pub fn lora_spec(&self) -> LoraSpec {
        let prefix = match self.stage {
            Stage::Editor => EDITOR_ADAPTER,
            Stage::Effect => EFFECT_ADAPTER,
        };
        LoraSpec { targets: self.lora_targets.clone(), rank: self.lora_rank, alpha: self.lora_alpha, prefix: prefix.into() }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / (self.warmup_steps + 1) as f64
        } else {
            self.lr
        }
    }
}

/// One supervised pair in model space.
#[derive(Debug, Clone)]
pub struct TrainExample<T> {
    /// Clean target tokens `[target_len, token_dim]`.
    pub x0: Tensor<T>,
    pub context: SequenceContext<T>,
    pub text: Vec<usize>,
}

/// One term of the flow-matching objective.
#[derive(Debug, Clone)]
pub struct FlowSample<'a, T> {
    pub x0: &'a Tensor<T>,
    pub eps: Tensor<T>,
    pub t: f64,
    pub context: &'a SequenceContext<T>,
    pub text: &'a [usize],
    pub drop_text: bool,
}

pub fn interpolate<T: Real>(x0: &Tensor<T>, eps: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() {
        bail!(Shape, "x0 {:?} and noise {:?} differ", x0.shape(), eps.shape());
    }
    let (a, b) = (T::from_f64(1.0 - t), T::from_f64(t));
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + b * e).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

pub fn velocity_target<T: Real>(x0: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() {
        bail!(Shape, "x0 {:?} and noise {:?} differ", x0.shape(), eps.shape());
    }
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| e - x).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

const NULL_TEXT: [usize; 1] = [NULL_TOKEN];

fn text_of<'a, T>(s: &'a FlowSample<'_, T>) -> &'a [usize] {
    if s.drop_text {
        &NULL_TEXT
    } else {
        s.text
    }
}

fn check_loss(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what}: loss is {v}")))
    }
}

/// Loss of one sample without recording a tape.
pub fn flow_loss<T: Real>(model: &Model<T>, s: &FlowSample<'_, T>) -> Result<f64> {
    let xt = interpolate(s.x0, &s.eps, s.t)?;
    let v = model.predict(&xt, s.context, s.t, text_of(s))?;
    let target = velocity_target(s.x0, &s.eps)?;
    let n = target.numel() as f64;
    let loss = v.data().iter().zip(target.data()).map(|(&a, &b)| (a - b).as_f64() * (a - b).as_f64()).sum::<f64>() / n;
    check_loss(loss, "flow loss")?;
    Ok(loss)
}

/// Mean loss over `samples` and its gradient with respect to every
/// trainable parameter.
pub fn flow_loss_and_grad<T: Real>(model: &Model<T>, samples: &[FlowSample<'_, T>]) -> Result<(f64, BTreeMap<ParamId, Tensor<T>>)> {
    if samples.is_empty() {
        bail!(Config, "empty batch");
    }
    let inv = T::from_f64(1.0 / samples.len() as f64);
    let mut total = 0.0;
    let mut acc: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
    for s in samples {
        let mut g = Graph::new(&model.params);
        let xt = g.input(interpolate(s.x0, &s.eps, s.t)?);
        let out = model.forward(&mut g, xt, s.context, s.t, text_of(s))?;
        let target = g.input(velocity_target(s.x0, &s.eps)?);
        let loss = g.mse(out.velocity, target)?;
        let value = g.value(loss).data()[0].as_f64();
        check_loss(value, "flow loss")?;
        total += value;
        for (id, grad) in g.backward(loss)?.into_params() {
            match acc.get_mut(&id) {
                Some(a) => a.data_mut().iter_mut().zip(grad.data()).for_each(|(a, &g)| *a += g * inv),
                None => {
                    acc.insert(id, grad.map(|g| g * inv));
                }
            }
        }
    }
    Ok((total / samples.len() as f64, acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub curve: Vec<StepRecord>,
    /// Fixed-noise loss before the first and after the last step.
    pub probe_initial: f64,
    pub probe_final: f64,
    pub trainable_scalars: usize,
    pub total_scalars: usize,
}

impl TrainReport {
    /// `step,loss,lr` rows.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,loss,lr\n");
        for r in &self.curve {
            let _ = writeln!(s, "{},{:.8},{:.3e}", r.step, r.loss, r.lr);
        }
        s
    }
}

fn randn_like<T: Real>(x: &Tensor<T>, r: &mut SeededRng) -> Tensor<T> {
    Tensor::randn(x.shape(), 1.0, r)
}

/// Loss at fixed, seed-derived noise and stratified timesteps: a
/// low-variance measure of fit that is comparable across steps.
pub fn probe_loss<T: Real>(model: &Model<T>, data: &[TrainExample<T>], cfg: &TrainConfig) -> Result<f64> {
    let count = cfg.probe_examples.min(data.len()).max(1);
    let k = cfg.probe_timesteps.max(1);
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, STREAM_PROBE));
    let mut total = 0.0;
    for ex in data.iter().take(count) {
        for j in 0..k {
            let t = cfg.t_min + (cfg.t_max - cfg.t_min) * (j as f64 + 0.5) / k as f64;
            let s = FlowSample { x0: &ex.x0, eps: randn_like(&ex.x0, &mut r), t, context: &ex.context, text: &ex.text, drop_text: false };
            total += flow_loss(model, &s)?;
        }
    }
    Ok(total / (count * k) as f64)
}

/// Marks the parameters a stage may update; adapter tensors stay trainable.
pub fn apply_base_training<T: Real>(model: &mut Model<T>, mode: BaseTraining) {
    let adapted: Vec<String> = model.adapters.iter().map(|s| s.target.clone()).collect();
    let adapter_tensors: Vec<String> = model.adapters.iter().flat_map(|s| [s.a.clone(), s.b.clone()]).collect();
    let ids: Vec<(ParamId, bool)> = model
        .params
        .iter()
        .map(|(id, e)| {
            let is_adapter = adapter_tensors.contains(&e.name);
            let train = match mode {
                BaseTraining::Frozen => is_adapter,
                BaseTraining::Stem => is_adapter || !adapted.contains(&e.name),
                BaseTraining::Full => true,
            };
            (id, train)
        })
        .collect();
    for (id, train) in ids {
        model.params.set_trainable(id, train);
    }
}

/// Stage entry checks and adapter attachment. `EDITOR` needs an
/// un-adapted random base; `EFFECT` needs a merged editor.
pub fn prepare_stage<T: Real>(model: &mut Model<T>, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if !model.adapters.is_empty() {
        bail!(Config, "model already carries adapters; merge or detach them first");
    }
    match (cfg.stage, model.stage) {
        (Stage::Editor, ModelStage::Base) | (Stage::Effect, ModelStage::Editor) => {}
        (Stage::Editor, ModelStage::Editor) => bail!(Config, "EDITOR stage starts from a random base, got a merged editor"),
        (Stage::Effect, ModelStage::Base) => {
            bail!(Config, "EFFECT stage requires a merged stage-1 editor checkpoint")
        }
    }
    lora::attach(model, &cfg.lora_spec(), rng::derive_seed(cfg.seed, STREAM_ADAPTER))?;
    apply_base_training(model, cfg.base_training);
    Ok(())
}

/// Optimizer loop over whatever is currently trainable. Example order is
/// a fresh seeded permutation per epoch.
pub fn run_training(
    model: &mut Model<f32>,
    data: &[TrainExample<f32>],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        bail!(Config, "training set is empty");
    }
    let probe_initial = probe_loss(model, data, cfg)?;
    let mut opt = AdamW::<f32>::new(cfg.optimizer);
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, STREAM_STEPS));
    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut samples = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng::below(&mut r, i + 1));
                }
            }
            let ex = &data[order.pop().expect("refilled above")];
            let t = rng::uniform(&mut r, cfg.t_min, cfg.t_max);
            let drop_text = rng::uniform(&mut r, 0.0, 1.0) < cfg.cfg_drop;
            let eps = randn_like(&ex.x0, &mut r);
            samples.push(FlowSample { x0: &ex.x0, eps, t, context: &ex.context, text: &ex.text, drop_text });
        }
        let (loss, grads) = flow_loss_and_grad(model, &samples).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("step {step}: {m}")),
            other => other,
        })?;
        let lr = cfg.lr_at(step);
        let grad_norm = opt.step(&mut model.params, &grads, lr)?;
        let rec = StepRecord { step, loss, lr, grad_norm };
        progress(&rec);
        curve.push(rec);
    }
    let probe_final = probe_loss(model, data, cfg)?;
    Ok(TrainReport {
        stage: cfg.stage,
        curve,
        probe_initial,
        probe_final,
        trainable_scalars: model.params.num_trainable_scalars(),
        total_scalars: model.params.num_scalars(),
    })
}

/// `prepare_stage` followed by `run_training`. The adapter stays attached.
pub fn train_stage(
    model: &mut Model<f32>,
    data: &[TrainExample<f32>],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    prepare_stage(model, cfg)?;
    run_training(model, data, cfg, progress)
}

/// Folds the editor adapter into the base and marks the model as a
/// stage-1 editor.
pub fn finish_editor<T: Real>(model: &mut Model<T>) -> Result<()> {
    lora::merge(model, EDITOR_ADAPTER)?;
    model.stage = ModelStage::Editor;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let x0 = Tensor::<f64>::new(alloc::vec![2], alloc::vec![1.0, -2.0]).unwrap();
        let e = Tensor::<f64>::new(alloc::vec![2], alloc::vec![0.5, 4.0]).unwrap();
        assert_eq!(interpolate(&x0, &e, 0.0).unwrap().data(), x0.data());
        assert_eq!(interpolate(&x0, &e, 1.0).unwrap().data(), e.data());
        assert_eq!(interpolate(&x0, &e, 0.5).unwrap().data(), &[0.75, 1.0]);
        assert_eq!(velocity_target(&x0, &e).unwrap().data(), &[-0.5, 6.0]);
    }

    #[test]
    fn config_validation() {
        TrainConfig::editor().validate().unwrap();
        TrainConfig::effect().validate().unwrap();
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::editor() }.validate().is_err());
        assert!(TrainConfig { t_min: 0.0, ..TrainConfig::editor() }.validate().is_err());
        assert!(TrainConfig { cfg_drop: 1.5, ..TrainConfig::editor() }.validate().is_err());
        let c = TrainConfig { warmup_steps: 3, lr: 1.0, ..TrainConfig::editor() };
        assert_eq!(c.lr_at(0), 0.25);
        assert_eq!(c.lr_at(3), 1.0);
    }
}

//! Sampling plus oracle metrics over a dataset.
//!
//! `eval.csv` columns: `index,instruction,psnr_db,iou,temporal,error`.
//! A triplet that fails (shape mismatch, numerical blow-up) gets an empty
//! metric triple and its message in `error`; it is excluded from the
//! summary but does not abort the run.

use std::path::Path;

use ivfx_core::metrics::{evaluate_output, summarize, MetricConfig, MetricSummary, TripletMetrics};
use ivfx_core::model::Model;
use ivfx_core::pipeline::EditConfig;
use ivfx_core::rng::derive_seed;
use ivfx_core::sampler::{sample, SampleConfig};
use ivfx_core::synth::EditTriplet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_json_file;
use crate::error::{IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRow {
    pub index: usize,
    pub instruction: String,
    pub metrics: Option<TripletMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample: SampleConfig,
    pub metric: MetricConfig,
    pub rows: Vec<TripletRow>,
    pub summary: MetricSummary,
    pub failures: usize,
}

impl EvalReport {
    pub fn metrics(&self) -> Vec<TripletMetrics> {
        self.rows.iter().filter_map(|r| r.metrics).collect()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("index,instruction,psnr_db,iou,temporal,error\n");
        for r in &self.rows {
            let m = r.metrics.map_or(",,".to_string(), |m| format!("{:.4},{:.4},{:.6}", m.psnr, m.iou, m.temporal));
            let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
            s.push_str(&format!("{},\"{}\",{},\"{}\"\n", r.index, r.instruction, m, err));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let p = dir.join("eval.csv");
        std::fs::write(&p, self.csv()).at(&p)?;
        write_json_file(&dir.join("eval.json"), self)
    }
}

/// Triplet `i` is sampled with seed `derive_seed(cfg.seed, i)`, so results
/// do not depend on the worker count.
pub fn evaluate(model: &Model<f32>, edit: &EditConfig, triplets: &[EditTriplet], cfg: &SampleConfig, metric: &MetricConfig) -> EvalReport {
    let rows: Vec<TripletRow> = triplets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let sc = SampleConfig { seed: derive_seed(cfg.seed, i as u64), ..*cfg };
            let res = sample(model, edit, &t.source, &t.instruction, &sc).and_then(|out| evaluate_output(&out, t, metric));
            match res {
                Ok(m) => TripletRow { index: i, instruction: t.instruction.clone(), metrics: Some(m), error: None },
                Err(e) => TripletRow { index: i, instruction: t.instruction.clone(), metrics: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let ok: Vec<TripletMetrics> = rows.iter().filter_map(|r| r.metrics).collect();
    let failures = rows.len() - ok.len();
    EvalReport { sample: *cfg, metric: *metric, summary: summarize(&ok), rows, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ivfx_core::model::ModelConfig;
    use ivfx_core::synth::{generate_vfx, Effect, SynthConfig};

    #[test]
    fn failures_are_recorded_not_fatal() {
        let cfg = ModelConfig { depth: 1, model_dim: 32, heads: 1, ..ModelConfig::default() };
        let model = Model::<f32>::init(cfg, 1).unwrap();
        let mut ts = generate_vfx(1, Effect::GlowOutline, 2, &SynthConfig::default()).unwrap();
        ts[1].target = ivfx_core::codec::VideoClip::zeros(8, 32, 32, 3);
        let sc = SampleConfig { steps: 2, ..SampleConfig::default() };
        let r = evaluate(&model, &EditConfig::default(), &ts, &sc, &MetricConfig::default());
        assert_eq!(r.failures, 1);
        assert!(r.rows[0].metrics.is_some());
        assert!(r.rows[1].error.is_some());
        assert_eq!(r.summary.psnr.n, 1);
        assert!(r.csv().lines().count() == 3);
    }
}

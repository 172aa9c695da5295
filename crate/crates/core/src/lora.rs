//! Low-rank adapters on named projections.
//!
//! An adapter on `W` (`m x n`) stores `A` (`m x r`) and `B` (`r x n`) in the
//! model's parameter store; the forward adds `(alpha / r) * x A B`. Merging
//! folds the update into `W` and removes the adapter.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::{AdapterSlot, Model};
use crate::real::Strides;
use crate::rng;
use crate::{Real, Tensor};

const A_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    /// Glob patterns (`*` matches any run of characters) over projection
    /// names, i.e. weight names without the `.weight` suffix.
    pub targets: Vec<String>,
    pub rank: usize,
    /// Defaults to `rank`, making the update scale 1.
    pub alpha: Option<f64>,
    /// Namespace for the adapter tensors, e.g. `lora.editor`.
    pub prefix: String,
}

/// Self-attention, cross-attention and MLP projections of every block.
pub fn default_targets() -> Vec<String> {
    vec!["blocks.*.attn.*".into(), "blocks.*.cross.*".into(), "blocks.*.mlp.*".into()]
}

impl LoraSpec {
    pub fn new(prefix: &str, rank: usize) -> Self {
        LoraSpec { targets: default_targets(), rank, alpha: None, prefix: prefix.into() }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.rank as f64)
    }
}

/// Wildcard match with `*` only.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let (p, n) = (pattern.as_bytes(), name.as_bytes());
    let (mut pi, mut ni) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ni < n.len() {
        if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, ni));
            pi += 1;
        } else if pi < p.len() && p[pi] == n[ni] {
            pi += 1;
            ni += 1;
        } else if let Some((sp, sn)) = star {
            pi = sp + 1;
            ni = sn + 1;
            star = Some((sp, sn + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == b'*')
}

/// Rank-2 weights whose projection name matches any pattern. Every pattern
/// must match at least one.
pub fn resolve_targets<T: Real>(model: &Model<T>, patterns: &[String]) -> Result<Vec<String>> {
    if patterns.is_empty() {
        bail!(Config, "adapter needs at least one target pattern");
    }
    let candidates: Vec<&str> = model
        .params
        .iter()
        .filter(|(_, e)| e.value.rank() == 2 && e.name.ends_with(".weight") && !e.name.starts_with("lora."))
        .map(|(_, e)| e.name.as_str())
        .collect();
    let mut out = Vec::new();
    for pat in patterns {
        let mut hit = false;
        for name in &candidates {
            let proj = &name[..name.len() - ".weight".len()];
            if glob_match(pat, proj) {
                hit = true;
                if !out.iter().any(|o: &String| o == name) {
                    out.push(String::from(*name));
                }
            }
        }
        if !hit {
            bail!(Config, "adapter target pattern '{}' matches no projection", pat);
        }
    }
    out.sort();
    Ok(out)
}

/// Adds fresh adapters (`A ~ N(0, 0.02)`, `B = 0`) and freezes everything
/// else. Returns the attached slots.
pub fn attach<T: Real>(model: &mut Model<T>, spec: &LoraSpec, seed: u64) -> Result<Vec<AdapterSlot>> {
    if spec.rank == 0 {
        bail!(Config, "adapter rank must be positive");
    }
    if model.adapters.iter().any(|s| s.a.starts_with(&format!("{}.", spec.prefix))) {
        bail!(Config, "adapter '{}' is already attached", spec.prefix);
    }
    let targets = resolve_targets(model, &spec.targets)?;
    let mut r = rng::seeded(seed);
    model.params.freeze_all();
    let mut slots = Vec::with_capacity(targets.len());
    for target in targets {
        let shape = model.params.tensor(&target)?.shape().to_vec();
        let (m, n) = (shape[0], shape[1]);
        if spec.rank > m.min(n) {
            bail!(Config, "rank {} exceeds min({}, {}) for {}", spec.rank, m, n, target);
        }
        let proj = &target[..target.len() - ".weight".len()];
        let a = format!("{}.{}.a", spec.prefix, proj);
        let b = format!("{}.{}.b", spec.prefix, proj);
        model.params.insert(&a, Tensor::randn(&[m, spec.rank], A_INIT_STD, &mut r), true)?;
        model.params.insert(&b, Tensor::zeros(&[spec.rank, n]), true)?;
        slots.push(AdapterSlot { target, a, b, rank: spec.rank, alpha: spec.alpha() });
    }
    model.adapters.extend(slots.iter().cloned());
    Ok(slots)
}

fn take_slots<T>(model: &mut Model<T>, prefix: &str) -> Result<Vec<AdapterSlot>> {
    let tag = format!("{prefix}.");
    let (mine, rest): (Vec<_>, Vec<_>) = model.adapters.drain(..).partition(|s| s.a.starts_with(&tag));
    model.adapters = rest;
    if mine.is_empty() {
        bail!(Config, "no adapter named '{}' is attached", prefix);
    }
    Ok(mine)
}

/// Removes an adapter without touching the base.
pub fn detach<T: Real>(model: &mut Model<T>, prefix: &str) -> Result<()> {
    for slot in take_slots(model, prefix)? {
        model.params.remove(&slot.a);
        model.params.remove(&slot.b);
    }
    Ok(())
}

/// `W <- W + (alpha / r) A B` for every slot of the adapter, then removes it.
pub fn merge<T: Real>(model: &mut Model<T>, prefix: &str) -> Result<()> {
    let slots = take_slots(model, prefix)?;
    for slot in &slots {
        let missing = || crate::Error::Config(format!("adapter tensors for {} are missing", slot.target));
        let a = model.params.remove(&slot.a).ok_or_else(missing)?.value;
        let b = model.params.remove(&slot.b).ok_or_else(missing)?.value;
        let w = model.params.tensor(&slot.target)?;
        let (m, n) = (w.shape()[0], w.shape()[1]);
        if a.shape() != [m, slot.rank] || b.shape() != [slot.rank, n] {
            bail!(Shape, "adapter for {} has A {:?}, B {:?}, weight {:?}", slot.target, a.shape(), b.shape(), w.shape());
        }
        let w = model.params.tensor_mut(&slot.target)?;
        T::gemm(
            m,
            slot.rank,
            n,
            T::from_f64(slot.scale()),
            a.data(),
            Strides::row_major(slot.rank),
            b.data(),
            Strides::row_major(n),
            T::one(),
            w.data_mut(),
            Strides::row_major(n),
        );
    }
    Ok(())
}

/// Adapter tensors detached from a model, for saving or moving between
/// compatible bases.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet<T> {
    pub prefix: String,
    pub slots: Vec<AdapterSlot>,
    /// `(a, b)` per slot.
    pub tensors: Vec<(Tensor<T>, Tensor<T>)>,
}

pub fn extract<T: Real>(model: &Model<T>, prefix: &str) -> Result<AdapterSet<T>> {
    let tag = format!("{prefix}.");
    let slots: Vec<AdapterSlot> = model.adapters.iter().filter(|s| s.a.starts_with(&tag)).cloned().collect();
    if slots.is_empty() {
        bail!(Config, "no adapter named '{}' is attached", prefix);
    }
    let tensors =
        slots.iter().map(|s| Ok((model.params.tensor(&s.a)?.clone(), model.params.tensor(&s.b)?.clone()))).collect::<Result<Vec<_>>>()?;
    Ok(AdapterSet { prefix: prefix.into(), slots, tensors })
}

/// Attaches saved adapter tensors; targets must exist with matching shapes.
pub fn install<T: Real>(model: &mut Model<T>, set: &AdapterSet<T>, trainable: bool) -> Result<()> {
    if set.slots.len() != set.tensors.len() {
        bail!(Format, "adapter '{}' has {} slots but {} tensor pairs", set.prefix, set.slots.len(), set.tensors.len());
    }
    for (slot, (a, b)) in set.slots.iter().zip(&set.tensors) {
        let w = model.params.tensor(&slot.target)?;
        let (m, n) = (w.shape()[0], w.shape()[1]);
        if a.shape() != [m, slot.rank] || b.shape() != [slot.rank, n] {
            bail!(Shape, "adapter for {} has A {:?}, B {:?}, weight {:?}", slot.target, a.shape(), b.shape(), w.shape());
        }
    }
    for (slot, (a, b)) in set.slots.iter().zip(&set.tensors) {
        model.params.insert(&slot.a, a.clone(), trainable)?;
        model.params.insert(&slot.b, b.clone(), trainable)?;
        model.adapters.push(slot.clone());
    }
    Ok(())
}

/// Scalars an adapter adds: `sum r (m + n)` over its slots.
pub fn adapter_scalars(slots: &[AdapterSlot], shapes: impl Fn(&str) -> (usize, usize)) -> usize {
    slots
        .iter()
        .map(|s| {
            let (m, n) = shapes(&s.target);
            s.rank * (m + n)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> Model<f32> {
        let cfg = ModelConfig {
            depth: 2,
            model_dim: 16,
            heads: 2,
            head_dim: 8,
            mlp_ratio: 2,
            vocab_size: 8,
            max_text_len: 4,
            token_dim: 12,
            time_freq_dim: 8,
            ..ModelConfig::default()
        };
        Model::init(cfg, 1).unwrap()
    }

    #[test]
    fn glob() {
        assert!(glob_match("blocks.*.attn.*", "blocks.3.attn.q"));
        assert!(!glob_match("blocks.*.attn.*", "blocks.3.cross.q"));
        assert!(glob_match("*", "anything"));
        assert!(glob_match("a*b*c", "axxbyyc"));
        assert!(!glob_match("a*b", "ab_"));
    }

    #[test]
    fn attach_counts_and_freezes() {
        let mut m = tiny();
        let base = m.params.num_scalars();
        let slots = attach(&mut m, &LoraSpec::new("lora.t", 2), 0).unwrap();
        assert_eq!(slots.len(), 2 * 10);
        let expect = adapter_scalars(&slots, |n| {
            let s = m.params.tensor(n).unwrap().shape();
            (s[0], s[1])
        });
        assert_eq!(m.params.num_trainable_scalars(), expect);
        assert_eq!(m.params.num_scalars(), base + expect);
        assert!(attach(&mut m, &LoraSpec::new("lora.t", 2), 0).is_err());
    }

    #[test]
    fn unmatched_pattern_is_config_error() {
        let mut m = tiny();
        let spec = LoraSpec { targets: vec!["blocks.*.nothing".into()], ..LoraSpec::new("lora.x", 2) };
        assert!(matches!(attach(&mut m, &spec, 0), Err(crate::Error::Config(_))));
        let spec = LoraSpec::new("lora.x", 99);
        assert!(matches!(attach(&mut m, &spec, 0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn merge_direct_product() {
        let mut m = tiny();
        let spec = LoraSpec { targets: vec!["patch_embed".into()], ..LoraSpec::new("lora.p", 1) };
        attach(&mut m, &spec, 0).unwrap();
        let w0 = m.params.tensor("patch_embed.weight").unwrap().clone();
        let (rows, cols) = (w0.shape()[0], w0.shape()[1]);
        let mut a = Tensor::zeros(&[rows, 1]);
        a.data_mut()[0] = 1.0;
        let mut b = Tensor::zeros(&[1, cols]);
        b.data_mut()[1] = 1.0;
        *m.params.tensor_mut("lora.p.patch_embed.a").unwrap() = a;
        *m.params.tensor_mut("lora.p.patch_embed.b").unwrap() = b;
        merge(&mut m, "lora.p").unwrap();
        let w = m.params.tensor("patch_embed.weight").unwrap();
        for i in 0..rows * cols {
            let bump = if i == 1 { 1.0 } else { 0.0 };
            assert_eq!(w.data()[i], w0.data()[i] + bump);
        }
        assert!(m.adapters.is_empty());
        assert!(m.params.id("lora.p.patch_embed.a").is_none());
    }

    #[test]
    fn extract_install_roundtrip() {
        let mut m = tiny();
        attach(&mut m, &LoraSpec::new("lora.e", 2), 3).unwrap();
        let set = extract(&m, "lora.e").unwrap();
        detach(&mut m, "lora.e").unwrap();
        assert!(m.adapters.is_empty());
        install(&mut m, &set, true).unwrap();
        assert_eq!(extract(&m, "lora.e").unwrap(), set);
    }
}

//! JSON run configuration with dotted-key overrides.
//!
//! A run starts from the serialized defaults of its config type, merges an
//! optional JSON file over them, then applies `key.path=value` overrides.
//! Every key in the file or an override must already exist in the
//! defaults, so typos fail loudly. Override values are parsed as JSON and
//! fall back to a plain string.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::checkpoint::{read_json, write_json_file};
use crate::error::{Error, Result};

pub const EFFECTIVE_CONFIG: &str = "effective-config.json";

fn merge(base: &mut Value, over: &Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| Error::Config(format!("unknown key '{sub}'")))?;
                merge(slot, v, &sub)?;
            }
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(m) => m.get_mut(part),
            Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Defaults, then `file`, then `overrides`, in increasing precedence.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut v = serde_json::to_value(defaults).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(p) = file {
        let f: Value = read_json(p)?;
        merge(&mut v, &f, "")?;
    }
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
}

/// Writes the fully resolved configuration next to the run's outputs.
pub fn write_effective(dir: &Path, cfg: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    write_json_file(&dir.join(EFFECTIVE_CONFIG), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ivfx_core::train::TrainConfig;

    #[test]
    fn precedence_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"steps": 7, "optimizer": {"beta2": 0.95}}"#).unwrap();
        let c = resolve(&TrainConfig::editor(), Some(&p), &["steps=9".into(), "lora_targets.0=blocks.*.mlp.*".into()]).unwrap();
        assert_eq!(c.steps, 9);
        assert_eq!(c.optimizer.beta2, 0.95);
        assert_eq!(c.lora_targets[0], "blocks.*.mlp.*");
        assert!(resolve(&TrainConfig::editor(), None, &["stepz=1".into()]).is_err());
        assert!(resolve(&TrainConfig::editor(), None, &["steps=abc".into()]).is_err());
        std::fs::write(&p, r#"{"optimizer": {"nope": 1}}"#).unwrap();
        assert!(resolve(&TrainConfig::editor(), Some(&p), &[]).is_err());
    }

    #[test]
    fn effective_config_reproduces_run() {
        let dir = tempfile::tempdir().unwrap();
        let c = resolve(&TrainConfig::effect(), None, &["seed=42".into(), "lr=0.002".into()]).unwrap();
        write_effective(dir.path(), &c).unwrap();
        let back = resolve(&TrainConfig::effect(), Some(&dir.path().join(EFFECTIVE_CONFIG)), &[]).unwrap();
        assert_eq!(back, c);
    }
}

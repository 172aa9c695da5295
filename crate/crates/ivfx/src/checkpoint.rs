//! Checkpoint directories: `manifest.json` (model config, stage, edit
//! layout, parameter names and shapes, attached adapters) plus
//! `weights.ivfx` holding one blob per parameter in manifest order.
//! Adapter directories: `adapter.json` plus `adapter.ivfx` (A, B per slot).

use std::fs;
use std::path::Path;

use ivfx_core::lora::AdapterSet;
use ivfx_core::model::{AdapterSlot, Model, ModelConfig, ModelStage};
use ivfx_core::params::ParamStore;
use ivfx_core::pipeline::EditConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::format::{blob_tensor, read_blobs, tensor_blob, write_blobs};

pub const CHECKPOINT_FORMAT: &str = "ivfx-checkpoint/1";
pub const ADAPTER_FORMAT: &str = "ivfx-adapter/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub stage: ModelStage,
    pub model: ModelConfig,
    pub edit: EditConfig,
    pub parameters: Vec<ParamRecord>,
    pub adapters: Vec<AdapterSlot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub edit: EditConfig,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).at(path)?;
    s.push('\n');
    fs::write(path, s).at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&s).at(path)
}

pub(crate) fn write_json_file(path: &Path, value: &impl Serialize) -> Result<()> {
    write_json(path, value)
}

pub fn save_checkpoint(dir: &Path, model: &Model<f32>, edit: &EditConfig) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let parameters = model
        .params
        .iter()
        .map(|(_, e)| ParamRecord { name: e.name.clone(), shape: e.value.shape().to_vec(), trainable: e.trainable })
        .collect();
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        stage: model.stage,
        model: model.config,
        edit: *edit,
        parameters,
        adapters: model.adapters.clone(),
    };
    let blobs: Vec<_> = model.params.iter().map(|(_, e)| tensor_blob(&e.value)).collect();
    write_blobs(&dir.join("weights.ivfx"), &blobs)?;
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join("manifest.json");
    let m: CheckpointManifest = read_json(&mpath)?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Format { path: mpath, msg: format!("unsupported format '{}'", m.format) });
    }
    m.model.validate()?;
    let wpath = dir.join("weights.ivfx");
    let blobs = read_blobs(&wpath)?;
    if blobs.len() != m.parameters.len() {
        return Err(Error::Format { path: wpath, msg: format!("{} tensors for {} manifest parameters", blobs.len(), m.parameters.len()) });
    }
    let mut params = ParamStore::new();
    for (rec, blob) in m.parameters.iter().zip(blobs) {
        if blob.shape != rec.shape {
            return Err(Error::Format {
                path: wpath,
                msg: format!("{}: stored shape {:?}, manifest {:?}", rec.name, blob.shape, rec.shape),
            });
        }
        params.insert(&rec.name, blob_tensor(blob, &wpath)?, rec.trainable)?;
    }
    // every parameter a fresh model of this config has must be present
    let reference = Model::<f32>::init(m.model, 0)?;
    for (_, e) in reference.params.iter() {
        let got = params.get(&e.name).ok_or_else(|| Error::Format { path: mpath.clone(), msg: format!("missing parameter {}", e.name) })?;
        if got.shape() != e.value.shape() {
            return Err(Error::Format {
                path: mpath.clone(),
                msg: format!("{}: shape {:?}, config implies {:?}", e.name, got.shape(), e.value.shape()),
            });
        }
    }
    let model = Model { config: m.model, params, adapters: m.adapters, stage: m.stage };
    Ok(Checkpoint { model, edit: m.edit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub format: String,
    pub prefix: String,
    pub slots: Vec<AdapterSlot>,
}

pub fn save_adapter(dir: &Path, set: &AdapterSet<f32>) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let blobs: Vec<_> = set.tensors.iter().flat_map(|(a, b)| [tensor_blob(a), tensor_blob(b)]).collect();
    write_blobs(&dir.join("adapter.ivfx"), &blobs)?;
    let m = AdapterManifest { format: ADAPTER_FORMAT.into(), prefix: set.prefix.clone(), slots: set.slots.clone() };
    write_json(&dir.join("adapter.json"), &m)
}

pub fn load_adapter(dir: &Path) -> Result<AdapterSet<f32>> {
    let mpath = dir.join("adapter.json");
    let m: AdapterManifest = read_json(&mpath)?;
    if m.format != ADAPTER_FORMAT {
        return Err(Error::Format { path: mpath, msg: format!("unsupported format '{}'", m.format) });
    }
    let tpath = dir.join("adapter.ivfx");
    let blobs = read_blobs(&tpath)?;
    if blobs.len() != 2 * m.slots.len() {
        return Err(Error::Format { path: tpath, msg: format!("{} tensors for {} adapter slots", blobs.len(), m.slots.len()) });
    }
    let mut it = blobs.into_iter();
    let mut tensors = Vec::with_capacity(m.slots.len());
    while let (Some(a), Some(b)) = (it.next(), it.next()) {
        tensors.push((blob_tensor(a, &tpath)?, blob_tensor(b, &tpath)?));
    }
    Ok(AdapterSet { prefix: m.prefix, slots: m.slots, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ivfx_core::lora::{attach, extract, LoraSpec};

    fn tiny() -> ModelConfig {
        ModelConfig { depth: 1, model_dim: 32, heads: 1, ..ModelConfig::default() }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Model::<f32>::init(tiny(), 3).unwrap();
        attach(&mut m, &LoraSpec::new("lora.editor", 4), 1).unwrap();
        save_checkpoint(dir.path(), &m, &EditConfig::default()).unwrap();
        let c = load_checkpoint(dir.path()).unwrap();
        assert!(c.model.params.bit_eq(&m.params));
        assert_eq!(c.model.adapters, m.adapters);
        assert_eq!(c.edit, EditConfig::default());
    }

    #[test]
    fn adapter_roundtrip_and_missing_params() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Model::<f32>::init(tiny(), 3).unwrap();
        attach(&mut m, &LoraSpec::new("lora.effect", 2), 1).unwrap();
        let set = extract(&m, "lora.effect").unwrap();
        save_adapter(&dir.path().join("a"), &set).unwrap();
        assert_eq!(load_adapter(&dir.path().join("a")).unwrap(), set);

        let mut broken = Model::<f32>::init(tiny(), 3).unwrap();
        broken.params.remove("final.proj.bias");
        save_checkpoint(&dir.path().join("c"), &broken, &EditConfig::default()).unwrap();
        assert!(matches!(load_checkpoint(&dir.path().join("c")), Err(Error::Format { .. })));
    }
}

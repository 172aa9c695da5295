//! On-disk triplet datasets: one subdirectory per triplet holding
//! `source.ivfx`, `target.ivfx`, `mask.ivfx` and `meta.json`, and a
//! top-level `manifest.json` with SHA-256 checksums of every file.

use std::fs;
use std::path::{Path, PathBuf};

use ivfx_core::synth::{self, EditKind, EditTriplet, Effect, SynthConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{read_json, write_json_file};
use crate::error::{Error, IoContext, Result};
use crate::format::{load_clip, load_mask, save_clip, save_mask};

pub const DATASET_FORMAT: &str = "ivfx-dataset/1";
const FILES: [&str; 4] = ["source.ivfx", "target.ivfx", "mask.ivfx", "meta.json"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    General,
    Vfx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletMeta {
    pub instruction: String,
    pub kind: EditKind,
    pub seed: u64,
    pub trajectory: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub instruction: String,
    /// File name to hex SHA-256.
    pub sha256: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub kind: DatasetKind,
    pub effect: Option<Effect>,
    pub seed: u64,
    pub synth: SynthConfig,
    pub triplets: Vec<ManifestEntry>,
}

/// Generates `count` triplets; triplet `i` depends only on `(seed, i)`.
pub fn generate(kind: DatasetKind, effect: Option<Effect>, seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<EditTriplet>> {
    if count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    let one = |i: usize| {
        let s = ivfx_core::rng::derive_seed(seed, i as u64);
        match (kind, effect) {
            (DatasetKind::General, _) => Ok(synth::general_triplet(s, cfg)),
            (DatasetKind::Vfx, Some(e)) => Ok(synth::vfx_triplet(s, e, cfg)),
            (DatasetKind::Vfx, None) => Err(Error::Config("vfx datasets need an effect id".into())),
        }
    };
    (0..count).into_par_iter().map(one).collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).at(path)?)))
}

fn triplet_dir(i: usize) -> String {
    format!("{i:05}")
}

pub fn save_dataset(
    dir: &Path,
    triplets: &[EditTriplet],
    kind: DatasetKind,
    effect: Option<Effect>,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).at(dir)?;
    let entries = triplets
        .par_iter()
        .enumerate()
        .map(|(i, t)| -> Result<ManifestEntry> {
            let name = triplet_dir(i);
            let d = dir.join(&name);
            fs::create_dir_all(&d).at(&d)?;
            save_clip(&d.join("source.ivfx"), &t.source)?;
            save_clip(&d.join("target.ivfx"), &t.target)?;
            save_mask(&d.join("mask.ivfx"), &t.mask)?;
            let meta = TripletMeta { instruction: t.instruction.clone(), kind: t.kind, seed: t.seed, trajectory: t.trajectory.clone() };
            write_json_file(&d.join("meta.json"), &meta)?;
            let sha256 = FILES.iter().map(|f| Ok((f.to_string(), sha256_file(&d.join(f))?))).collect::<Result<_>>()?;
            Ok(ManifestEntry { dir: name, instruction: t.instruction.clone(), sha256 })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { format: DATASET_FORMAT.into(), kind, effect, seed, synth: *cfg, triplets: entries };
    write_json_file(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn load_triplet(dir: &Path, e: &ManifestEntry, verify: bool) -> Result<EditTriplet> {
    let d: PathBuf = dir.join(&e.dir);
    if verify {
        for (file, want) in &e.sha256 {
            let p = d.join(file);
            let got = sha256_file(&p)?;
            if &got != want {
                return Err(Error::Format { path: p, msg: format!("checksum mismatch: {got} != {want}") });
            }
        }
    }
    let meta: TripletMeta = read_json(&d.join("meta.json"))?;
    let source = load_clip(&d.join("source.ivfx"))?;
    let target = load_clip(&d.join("target.ivfx"))?;
    let mask = load_mask(&d.join("mask.ivfx"))?;
    if source.dims() != target.dims() || [mask.frames, mask.height, mask.width] != [source.frames, source.height, source.width] {
        return Err(Error::Format { path: d, msg: "source, target and mask shapes disagree".into() });
    }
    Ok(EditTriplet { source, target, instruction: meta.instruction, mask, kind: meta.kind, trajectory: meta.trajectory, seed: meta.seed })
}

/// Loads every triplet, verifying checksums.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<EditTriplet>)> {
    let mpath = dir.join("manifest.json");
    let m: DatasetManifest = read_json(&mpath)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Format { path: mpath, msg: format!("unsupported format '{}'", m.format) });
    }
    let triplets = m.triplets.par_iter().map(|e| load_triplet(dir, e, true)).collect::<Result<Vec<_>>>()?;
    Ok((m, triplets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let ts = generate(DatasetKind::Vfx, Some(Effect::GlowOutline), 4, 3, &cfg).unwrap();
        assert_eq!(ts, synth::generate_vfx(4, Effect::GlowOutline, 3, &cfg).unwrap());
        save_dataset(dir.path(), &ts, DatasetKind::Vfx, Some(Effect::GlowOutline), 4, &cfg).unwrap();
        let (m, back) = load_dataset(dir.path()).unwrap();
        assert_eq!(m.triplets.len(), 3);
        assert_eq!(back, ts);

        let p = dir.path().join("00001/target.ivfx");
        let mut bytes = fs::read(&p).unwrap();
        *bytes.last_mut().unwrap() ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn vfx_requires_effect() {
        assert!(generate(DatasetKind::Vfx, None, 0, 1, &SynthConfig::default()).is_err());
        assert!(generate(DatasetKind::General, None, 0, 0, &SynthConfig::default()).is_err());
    }
}

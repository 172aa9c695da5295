//! IVFX tensor files: `"IVFX"`, `u8` dtype code, `u8` rank, `rank` x `u64`
//! extents, then raw little-endian data. Several blobs may be concatenated
//! in one file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ivfx_core::codec::VideoClip;
use ivfx_core::real::DType;
use ivfx_core::synth::FrameMask;
use ivfx_core::Tensor;

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"IVFX";
const MAX_RANK: usize = 8;
const MAX_ELEMENTS: usize = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

pub fn write_blob(w: &mut impl Write, blob: &Blob) -> std::io::Result<()> {
    assert_eq!(blob.shape.iter().product::<usize>(), blob.payload.len(), "blob shape and payload disagree");
    w.write_all(MAGIC)?;
    w.write_all(&[blob.payload.dtype() as u8, blob.shape.len() as u8])?;
    for &e in &blob.shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    match &blob.payload {
        Payload::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
        Payload::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
        Payload::U8(v) => w.write_all(v),
    }
}

/// Reads the next blob; `Ok(None)` at a clean end of input.
pub fn read_blob(r: &mut impl Read, path: &Path) -> Result<Option<Blob>> {
    let mut magic = [0u8; 4];
    match r.read(&mut magic[..1]).at(path)? {
        0 => return Ok(None),
        _ => r.read_exact(&mut magic[1..]).map_err(|_| bad(path, "truncated header"))?,
    }
    if &magic != MAGIC {
        return Err(bad(path, format!("bad magic {:?}", magic)));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head).map_err(|_| bad(path, "truncated header"))?;
    let dtype = DType::from_code(head[0]).ok_or_else(|| bad(path, format!("unknown dtype code {}", head[0])))?;
    let rank = head[1] as usize;
    if rank > MAX_RANK {
        return Err(bad(path, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| bad(path, "truncated extents"))?;
        shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| bad(path, "extent overflows usize"))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| bad(path, format!("implausible extents {:?}", shape)))?;
    let mut raw = vec![0u8; n * dtype.size()];
    r.read_exact(&mut raw).map_err(|_| bad(path, format!("truncated data for shape {:?}", shape)))?;
    let payload = match dtype {
        DType::F32 => Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        DType::F64 => Payload::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        DType::U8 => Payload::U8(raw),
    };
    Ok(Some(Blob { shape, payload }))
}

pub fn write_blobs(path: &Path, blobs: &[Blob]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    for b in blobs {
        write_blob(&mut w, b).at(path)?;
    }
    w.flush().at(path)
}

pub fn read_blobs(path: &Path) -> Result<Vec<Blob>> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    let mut out = Vec::new();
    while let Some(b) = read_blob(&mut r, path)? {
        out.push(b);
    }
    Ok(out)
}

fn read_single(path: &Path) -> Result<Blob> {
    let mut blobs = read_blobs(path)?;
    if blobs.len() != 1 {
        return Err(bad(path, format!("expected one tensor, found {}", blobs.len())));
    }
    Ok(blobs.pop().unwrap())
}

pub fn tensor_blob(t: &Tensor<f32>) -> Blob {
    Blob { shape: t.shape().to_vec(), payload: Payload::F32(t.data().to_vec()) }
}

pub fn blob_tensor(b: Blob, path: &Path) -> Result<Tensor<f32>> {
    match b.payload {
        Payload::F32(v) => Ok(Tensor::new(b.shape, v)?),
        other => Err(bad(path, format!("expected f32 tensor, found {:?}", other.dtype()))),
    }
}

pub fn save_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_blobs(path, &[tensor_blob(t)])
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>> {
    blob_tensor(read_single(path)?, path)
}

/// Clips are `[frames, height, width, channels]` f32 tensors.
pub fn save_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    write_blobs(path, &[Blob { shape: clip.dims().to_vec(), payload: Payload::F32(clip.data.clone()) }])
}

pub fn load_clip(path: &Path) -> Result<VideoClip> {
    let b = read_single(path)?;
    let dims = match b.shape.as_slice() {
        &[f, h, w, c] => [f, h, w, c],
        other => return Err(bad(path, format!("clip must be rank 4, got shape {:?}", other))),
    };
    match b.payload {
        Payload::F32(v) => Ok(VideoClip::new(dims[0], dims[1], dims[2], dims[3], v)?),
        other => Err(bad(path, format!("clip must be f32, found {:?}", other.dtype()))),
    }
}

/// Masks are `[frames, height, width]` u8 tensors of 0/1.
pub fn save_mask(path: &Path, mask: &FrameMask) -> Result<()> {
    let data = mask.data.iter().map(|&b| b as u8).collect();
    write_blobs(path, &[Blob { shape: vec![mask.frames, mask.height, mask.width], payload: Payload::U8(data) }])
}

pub fn load_mask(path: &Path) -> Result<FrameMask> {
    let b = read_single(path)?;
    let [f, h, w] = match b.shape.as_slice() {
        &[f, h, w] => [f, h, w],
        other => return Err(bad(path, format!("mask must be rank 3, got shape {:?}", other))),
    };
    match b.payload {
        Payload::U8(v) => {
            if v.iter().any(|&x| x > 1) {
                return Err(bad(path, "mask values must be 0 or 1"));
            }
            Ok(FrameMask { frames: f, height: h, width: w, data: v.into_iter().map(|x| x == 1).collect() })
        }
        other => Err(bad(path, format!("mask must be u8, found {:?}", other.dtype()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_all_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ivfx");
        let blobs = vec![
            Blob { shape: vec![2, 3], payload: Payload::F32(vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0]) },
            Blob { shape: vec![], payload: Payload::F64(vec![std::f64::consts::PI]) },
            Blob { shape: vec![4], payload: Payload::U8(vec![0, 1, 255, 7]) },
        ];
        write_blobs(&p, &blobs).unwrap();
        assert_eq!(read_blobs(&p).unwrap(), blobs);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"IVFX");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 2);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ivfx");
        std::fs::write(&p, b"NOPE\x01\x00").unwrap();
        assert!(matches!(read_blobs(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"IVFX\x09\x00").unwrap();
        assert!(matches!(read_blobs(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"IVFX\x01\x01\x05\x00\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_blobs(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn clip_and_mask_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = ivfx_core::synth::vfx_triplet(1, ivfx_core::synth::Effect::RingOrbit, &Default::default());
        save_clip(&dir.path().join("c.ivfx"), &t.target).unwrap();
        save_mask(&dir.path().join("m.ivfx"), &t.mask).unwrap();
        assert_eq!(load_clip(&dir.path().join("c.ivfx")).unwrap().data, t.target.data);
        assert_eq!(load_mask(&dir.path().join("m.ivfx")).unwrap(), t.mask);
        assert!(load_clip(&dir.path().join("m.ivfx")).is_err());
    }
}

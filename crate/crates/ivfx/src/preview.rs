//! PNG frame dumps and animated-GIF previews of clips.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ivfx_core::codec::VideoClip;

use crate::error::{Error, IoContext, Result};

fn rgb8(clip: &VideoClip, f: usize) -> Result<Vec<u8>> {
    if clip.channels != 3 {
        return Err(Error::Config(format!("previews need 3-channel clips, got {}", clip.channels)));
    }
    let n = clip.frame_len();
    Ok(clip.data[f * n..(f + 1) * n].iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
}

fn encoding_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format { path: path.to_path_buf(), msg: e.to_string() }
}

/// Writes `frame_000.png`, `frame_001.png`, ... into `dir`.
pub fn write_png_frames(dir: &Path, clip: &VideoClip) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for f in 0..clip.frames {
        let p = dir.join(format!("frame_{f:03}.png"));
        let mut enc = png::Encoder::new(BufWriter::new(File::create(&p).at(&p)?), clip.width as u32, clip.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| encoding_error(&p, e))?;
        w.write_image_data(&rgb8(clip, f)?).map_err(|e| encoding_error(&p, e))?;
    }
    Ok(())
}

/// Looping GIF, each pixel upscaled by `scale`.
pub fn write_gif(path: &Path, clip: &VideoClip, scale: usize) -> Result<()> {
    let scale = scale.max(1);
    let (w, h) = (clip.width * scale, clip.height * scale);
    let (gw, gh) = (u16::try_from(w).map_err(|e| encoding_error(path, e))?, u16::try_from(h).map_err(|e| encoding_error(path, e))?);
    let file = BufWriter::new(File::create(path).at(path)?);
    let mut enc = gif::Encoder::new(file, gw, gh, &[]).map_err(|e| encoding_error(path, e))?;
    enc.set_repeat(gif::Repeat::Infinite).map_err(|e| encoding_error(path, e))?;
    let delay = if clip.fps > 0.0 { (100.0 / clip.fps).round() as u16 } else { 12 };
    for f in 0..clip.frames {
        let src = rgb8(clip, f)?;
        let mut px = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let s = ((y / scale) * clip.width + x / scale) * 3;
                px[(y * w + x) * 3..][..3].copy_from_slice(&src[s..s + 3]);
            }
        }
        let mut frame = gif::Frame::from_rgb_speed(gw, gh, &px, 10);
        frame.delay = delay;
        enc.write_frame(&frame).map_err(|e| encoding_error(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_frames_and_gif() {
        let dir = tempfile::tempdir().unwrap();
        let t = ivfx_core::synth::vfx_triplet(3, ivfx_core::synth::Effect::GlowOutline, &Default::default());
        write_png_frames(&dir.path().join("png"), &t.target).unwrap();
        assert_eq!(std::fs::read_dir(dir.path().join("png")).unwrap().count(), 16);
        let g = dir.path().join("a.gif");
        write_gif(&g, &t.target, 4).unwrap();
        assert_eq!(&std::fs::read(&g).unwrap()[..3], b"GIF");
    }
}

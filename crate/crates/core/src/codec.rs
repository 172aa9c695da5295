//! Exactly invertible pixel <-> latent mapping.
//!
//! Encoding folds every `f_t x f_s x f_s` block of pixels into the channel
//! axis of one latent cell (space-time-to-depth). It is a permutation of the
//! input values, so decoding reproduces the clip bit-for-bit.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Raw video, `frames x height x width x channels`, row-major, values in
/// `[0, 1]` by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub fps: f32,
    pub data: Vec<f32>,
}

pub const DEFAULT_FPS: f32 = 8.0;

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * height * width * channels {
            bail!(
                Shape,
                "clip {}x{}x{}x{} needs {} values, got {}",
                frames,
                height,
                width,
                channels,
                frames * height * width * channels,
                data.len()
            );
        }
        Ok(VideoClip { frames, height, width, channels, fps: DEFAULT_FPS, data })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        VideoClip { frames, height, width, channels, fps: DEFAULT_FPS, data: vec![0.0; frames * height * width * channels] }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    #[inline]
    pub fn index(&self, f: usize, y: usize, x: usize, c: usize) -> usize {
        ((f * self.height + y) * self.width + x) * self.channels + c
    }

    pub fn pixel(&self, f: usize, y: usize, x: usize) -> &[f32] {
        let i = self.index(f, y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, f: usize, y: usize, x: usize) -> &mut [f32] {
        let i = self.index(f, y, x, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    /// The first `count` frames as a new clip.
    pub fn leading_frames(&self, count: usize) -> Result<Self> {
        if count > self.frames {
            bail!(Shape, "asked for {} frames of a {}-frame clip", count, self.frames);
        }
        let mut clip = VideoClip::new(count, self.height, self.width, self.channels, self.data[..count * self.frame_len()].to_vec())?;
        clip.fps = self.fps;
        Ok(clip)
    }

    /// Averages every `n x n` pixel block of every frame.
    pub fn area_downsample(&self, n: usize) -> Result<Self> {
        if n == 0 || !self.height.is_multiple_of(n) || !self.width.is_multiple_of(n) {
            bail!(Shape, "downsample factor {} does not divide {}x{}", n, self.height, self.width);
        }
        let (h, w, c) = (self.height / n, self.width / n, self.channels);
        let mut out = VideoClip::zeros(self.frames, h, w, c);
        out.fps = self.fps;
        let inv = 1.0 / (n * n) as f32;
        for f in 0..self.frames {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let mut s = 0.0f32;
                        for dy in 0..n {
                            for dx in 0..n {
                                s += self.data[self.index(f, y * n + dy, x * n + dx, ch)];
                            }
                        }
                        let o = out.index(f, y, x, ch);
                        out.data[o] = s * inv;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Latent features, `t x h x w x channels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl LatentGrid {
    pub fn new(t: usize, h: usize, w: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != t * h * w * channels {
            bail!(Shape, "latent {}x{}x{}x{} needs {} values, got {}", t, h, w, channels, t * h * w * channels, data.len());
        }
        Ok(LatentGrid { t, h, w, channels, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.t, self.h, self.w, self.channels]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Pixel frames folded into one latent step.
    pub temporal_factor: usize,
    /// Pixels per latent cell along each spatial axis.
    pub spatial_factor: usize,
    pub channels_in: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { temporal_factor: 2, spatial_factor: 2, channels_in: 3 }
    }
}

impl CodecConfig {
    pub fn channels_lat(&self) -> usize {
        self.channels_in * self.temporal_factor * self.spatial_factor * self.spatial_factor
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_factor == 0 || self.spatial_factor == 0 || self.channels_in == 0 {
            bail!(Config, "codec factors and channels must be >= 1: {:?}", self);
        }
        Ok(())
    }

    /// Latent grid extents for a clip of the given pixel extents.
    pub fn latent_dims(&self, frames: usize, height: usize, width: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let (ft, fs) = (self.temporal_factor, self.spatial_factor);
        for (axis, len, f) in [("frames", frames, ft), ("height", height, fs), ("width", width, fs)] {
            if len % f != 0 {
                bail!(Shape, "{} = {} is not divisible by factor {}", axis, len, f);
            }
        }
        Ok([frames / ft, height / fs, width / fs])
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<LatentGrid> {
        if clip.channels != self.channels_in {
            bail!(Shape, "channels = {} but codec expects {}", clip.channels, self.channels_in);
        }
        let [t, h, w] = self.latent_dims(clip.frames, clip.height, clip.width)?;
        let (ft, fs, c) = (self.temporal_factor, self.spatial_factor, self.channels_in);
        let cl = self.channels_lat();
        let mut data = vec![0.0f32; t * h * w * cl];
        for (cell, chunk) in data.chunks_mut(cl).enumerate() {
            let (ti, rest) = (cell / (h * w), cell % (h * w));
            let (yi, xi) = (rest / w, rest % w);
            let mut o = 0;
            for dt in 0..ft {
                for dy in 0..fs {
                    for dx in 0..fs {
                        let src = clip.index(ti * ft + dt, yi * fs + dy, xi * fs + dx, 0);
                        chunk[o..o + c].copy_from_slice(&clip.data[src..src + c]);
                        o += c;
                    }
                }
            }
        }
        LatentGrid::new(t, h, w, cl, data)
    }

    pub fn decode(&self, grid: &LatentGrid) -> Result<VideoClip> {
        self.validate()?;
        if grid.channels != self.channels_lat() {
            bail!(Shape, "latent channels = {} but codec expects {}", grid.channels, self.channels_lat());
        }
        let (ft, fs, c) = (self.temporal_factor, self.spatial_factor, self.channels_in);
        let mut clip = VideoClip::zeros(grid.t * ft, grid.h * fs, grid.w * fs, c);
        for (cell, chunk) in grid.data.chunks(grid.channels).enumerate() {
            let (ti, rest) = (cell / (grid.h * grid.w), cell % (grid.h * grid.w));
            let (yi, xi) = (rest / grid.w, rest % grid.w);
            let mut o = 0;
            for dt in 0..ft {
                for dy in 0..fs {
                    for dx in 0..fs {
                        let dst = clip.index(ti * ft + dt, yi * fs + dy, xi * fs + dx, 0);
                        clip.data[dst..dst + c].copy_from_slice(&chunk[o..o + c]);
                        o += c;
                    }
                }
            }
        }
        Ok(clip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_clip(f: usize, h: usize, w: usize, seed: u64) -> VideoClip {
        let mut r = rng::seeded(seed);
        let data = (0..f * h * w * 3).map(|_| rng::uniform(&mut r, 0.0, 1.0) as f32).collect();
        VideoClip::new(f, h, w, 3, data).unwrap()
    }

    #[test]
    fn default_shapes() {
        let codec = CodecConfig::default();
        let g = codec.encode(&VideoClip::zeros(16, 32, 32, 3)).unwrap();
        assert_eq!(g.dims(), [8, 16, 16, 24]);
        assert!(g.data.iter().all(|&v| v == 0.0));
        let back = codec.decode(&LatentGrid::new(8, 16, 16, 24, vec![0.0; 8 * 16 * 16 * 24]).unwrap()).unwrap();
        assert_eq!(back.dims(), [16, 32, 32, 3]);
    }

    #[test]
    fn single_latent_frame_decodes_to_block() {
        let codec = CodecConfig::default();
        let g = LatentGrid::new(1, 4, 4, 24, vec![0.5; 4 * 4 * 24]).unwrap();
        assert_eq!(codec.decode(&g).unwrap().frames, 2);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let codec = CodecConfig { temporal_factor: 2, spatial_factor: 4, channels_in: 3 };
        let clip = random_clip(4, 8, 12, 5);
        let back = codec.decode(&codec.encode(&clip).unwrap()).unwrap();
        assert_eq!(back.data, clip.data);
    }

    #[test]
    fn errors_name_the_axis() {
        let codec = CodecConfig::default();
        let err = codec.encode(&VideoClip::zeros(15, 32, 32, 3)).unwrap_err();
        assert!(matches!(err, crate::Error::Shape(ref m) if m.contains("frames")));
        let err = codec.encode(&VideoClip::zeros(16, 32, 31, 3)).unwrap_err();
        assert!(matches!(err, crate::Error::Shape(ref m) if m.contains("width")));
        let bad = LatentGrid::new(1, 1, 1, 6, vec![0.0; 6]).unwrap();
        assert!(codec.decode(&bad).is_err());
    }

    #[test]
    fn area_downsample_averages_blocks() {
        let mut clip = VideoClip::zeros(1, 2, 2, 3);
        for (i, v) in clip.data.iter_mut().enumerate() {
            *v = (i / 3) as f32;
        }
        let d = clip.area_downsample(2).unwrap();
        assert_eq!(d.data, vec![1.5, 1.5, 1.5]);
        assert!(clip.area_downsample(3).is_err());
    }
}

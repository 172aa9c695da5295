//! Oracle metrics against synthetic ground truth.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::codec::VideoClip;
use crate::error::{bail, Result};
use crate::synth::{EditTriplet, FrameMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Per-pixel max-channel `|output - source|` above which a pixel counts
    /// as edited.
    pub diff_threshold: f32,
    /// PSNR reported for zero error.
    pub psnr_cap: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { diff_threshold: 0.05, psnr_cap: 99.0 }
    }
}

fn check_dims(a: &VideoClip, b: &VideoClip) -> Result<()> {
    if a.dims() != b.dims() {
        bail!(Shape, "clip {:?} vs {:?}", a.dims(), b.dims());
    }
    Ok(())
}

fn check_mask(c: &VideoClip, m: &FrameMask) -> Result<()> {
    if [c.frames, c.height, c.width] != [m.frames, m.height, m.width] {
        bail!(Shape, "mask {}x{}x{} vs clip {:?}", m.frames, m.height, m.width, c.dims());
    }
    Ok(())
}

/// PSNR (peak 1.0) over pixels where `mask` is false, capped.
pub fn background_psnr(output: &VideoClip, target: &VideoClip, mask: &FrameMask, cap: f64) -> Result<f64> {
    check_dims(output, target)?;
    check_mask(output, mask)?;
    let c = output.channels;
    let (mut se, mut n) = (0.0f64, 0usize);
    for (p, &m) in mask.data.iter().enumerate() {
        if m {
            continue;
        }
        for k in 0..c {
            let d = (output.data[p * c + k] - target.data[p * c + k]) as f64;
            se += d * d;
        }
        n += c;
    }
    if n == 0 || se == 0.0 {
        return Ok(cap);
    }
    Ok((10.0 * libm::log10(n as f64 / se)).min(cap))
}

/// Pixels whose max-channel change from `source` exceeds `threshold`.
pub fn change_map(output: &VideoClip, source: &VideoClip, threshold: f32) -> Result<FrameMask> {
    check_dims(output, source)?;
    let c = output.channels;
    let data = output
        .data
        .chunks(c)
        .zip(source.data.chunks(c))
        .map(|(o, s)| o.iter().zip(s).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max) > threshold)
        .collect();
    Ok(FrameMask { frames: output.frames, height: output.height, width: output.width, data })
}

/// IoU of the thresholded change map and the ground-truth mask; 1 when
/// both are empty.
pub fn effect_iou(output: &VideoClip, source: &VideoClip, mask: &FrameMask, threshold: f32) -> Result<f64> {
    check_mask(output, mask)?;
    let pred = change_map(output, source, threshold)?;
    let (mut inter, mut uni) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&mask.data) {
        inter += (p && g) as usize;
        uni += (p || g) as usize;
    }
    Ok(if uni == 0 { 1.0 } else { inter as f64 / uni as f64 })
}

/// Mean over consecutive frame pairs of the RMS difference between the
/// output's and the target's frame-to-frame changes.
pub fn temporal_error(output: &VideoClip, target: &VideoClip) -> Result<f64> {
    check_dims(output, target)?;
    if output.frames < 2 {
        return Ok(0.0);
    }
    let n = output.frame_len();
    let mut total = 0.0;
    for f in 1..output.frames {
        let mut se = 0.0f64;
        for i in 0..n {
            let d_out = output.data[f * n + i] - output.data[(f - 1) * n + i];
            let d_tgt = target.data[f * n + i] - target.data[(f - 1) * n + i];
            let e = (d_out - d_tgt) as f64;
            se += e * e;
        }
        total += libm::sqrt(se / n as f64);
    }
    Ok(total / (output.frames - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletMetrics {
    pub psnr: f64,
    pub iou: f64,
    pub temporal: f64,
}

pub fn evaluate_output(output: &VideoClip, triplet: &EditTriplet, cfg: &MetricConfig) -> Result<TripletMetrics> {
    Ok(TripletMetrics {
        psnr: background_psnr(output, &triplet.target, &triplet.mask, cfg.psnr_cap)?,
        iou: effect_iou(output, &triplet.source, &triplet.mask, cfg.diff_threshold)?,
        temporal: temporal_error(output, &triplet.target)?,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Summary { mean, std: libm::sqrt(var), n }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.std / libm::sqrt(self.n as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub psnr: Summary,
    pub iou: Summary,
    pub temporal: Summary,
}

pub fn summarize(items: &[TripletMetrics]) -> MetricSummary {
    let pick = |f: fn(&TripletMetrics) -> f64| Summary::of(&items.iter().map(f).collect::<Vec<_>>());
    MetricSummary { psnr: pick(|m| m.psnr), iou: pick(|m| m.iou), temporal: pick(|m| m.temporal) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{vfx_triplet, Effect, SynthConfig};

    #[test]
    fn identical_output_is_perfect() {
        let t = vfx_triplet(1, Effect::GlowOutline, &SynthConfig::default());
        let m = evaluate_output(&t.target, &t, &MetricConfig::default()).unwrap();
        assert_eq!(m.psnr, 99.0);
        assert_eq!(m.iou, 1.0);
        assert_eq!(m.temporal, 0.0);
    }

    #[test]
    fn unedited_output_has_zero_iou() {
        let t = vfx_triplet(2, Effect::GlowOutline, &SynthConfig::default());
        let m = evaluate_output(&t.source, &t, &MetricConfig::default()).unwrap();
        assert_eq!(m.psnr, 99.0);
        assert_eq!(m.iou, 0.0);
    }

    #[test]
    fn psnr_closed_form_and_disjoint_masks() {
        let a = VideoClip::zeros(2, 2, 2, 1);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v = 0.1);
        let spec = crate::synth::ClipSpec { frames: 2, height: 2, width: 2 };
        let empty = FrameMask::new(spec);
        let p = background_psnr(&a, &b, &empty, 99.0).unwrap();
        assert!((p - 20.0).abs() < 1e-5);
        // prediction and truth disjoint
        let mut gt = FrameMask::new(spec);
        gt.set(0, 0, 0);
        let mut out = a.clone();
        out.data[7] = 1.0;
        assert_eq!(effect_iou(&out, &a, &gt, 0.05).unwrap(), 0.0);
        assert_eq!(effect_iou(&a, &a, &empty, 0.05).unwrap(), 1.0);
        assert!(background_psnr(&a, &VideoClip::zeros(1, 2, 2, 1), &empty, 99.0).is_err());
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
    }
}

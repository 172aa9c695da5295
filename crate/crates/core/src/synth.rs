//! Procedural edit triplets with exact masks.
//!
//! Clips are rendered in layers (static textured background, then sprites,
//! then effect overlays), so the edited clip is produced by re-rendering
//! with one layer changed and the mask is the union of the changed layer's
//! coverage. Source and target are therefore identical outside the mask by
//! construction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f32::consts::PI;
use core::f64::consts::TAU;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::VideoClip;
use crate::error::{bail, Error, Result};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ClipSpec {
    fn default() -> Self {
        ClipSpec { frames: 16, height: 32, width: 32 }
    }
}

/// Per-pixel, per-frame boolean map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl FrameMask {
    pub fn new(spec: ClipSpec) -> Self {
        FrameMask { frames: spec.frames, height: spec.height, width: spec.width, data: vec![false; spec.frames * spec.height * spec.width] }
    }

    #[inline]
    pub fn index(&self, f: usize, y: usize, x: usize) -> usize {
        (f * self.height + y) * self.width + x
    }

    pub fn get(&self, f: usize, y: usize, x: usize) -> bool {
        self.data[self.index(f, y, x)]
    }

    pub fn set(&mut self, f: usize, y: usize, x: usize) {
        let i = self.index(f, y, x);
        self.data[i] = true;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn frame_count(&self, f: usize) -> usize {
        let n = self.height * self.width;
        self.data[f * n..(f + 1) * n].iter().filter(|&&b| b).count()
    }

    /// Mean `(y, x)` of the set pixels of frame `f`.
    pub fn centroid(&self, f: usize) -> Option<[f32; 2]> {
        let (mut sy, mut sx, mut n) = (0.0f32, 0.0f32, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(f, y, x) {
                    sy += y as f32;
                    sx += x as f32;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| [sy / n as f32, sx / n as f32])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

pub const SHAPES: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }
}

/// Named sprite colors; names appear in instructions.
pub const PALETTE: [(&str, [f32; 3]); 8] = [
    ("red", [0.90, 0.15, 0.15]),
    ("green", [0.15, 0.80, 0.20]),
    ("blue", [0.20, 0.30, 0.95]),
    ("yellow", [0.95, 0.90, 0.20]),
    ("cyan", [0.20, 0.90, 0.90]),
    ("magenta", [0.90, 0.20, 0.85]),
    ("white", [0.97, 0.97, 0.97]),
    ("orange", [0.98, 0.55, 0.10]),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    Linear { start: [f32; 2], velocity: [f32; 2] },
    Circular { center: [f32; 2], radius: f32, omega: f32, phase: f32 },
}

impl Motion {
    pub fn at(&self, f: usize) -> [f32; 2] {
        let f = f as f32;
        match *self {
            Motion::Linear { start, velocity } => [start[0] + velocity[0] * f, start[1] + velocity[1] * f],
            Motion::Circular { center, radius, omega, phase } => {
                let a = omega * f + phase;
                [center[0] + radius * libm::sinf(a), center[1] + radius * libm::cosf(a)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    /// Index into [`PALETTE`].
    pub color: usize,
    /// Half extent in pixels.
    pub size: f32,
    pub motion: Motion,
}

impl Sprite {
    pub fn rgb(&self) -> [f32; 3] {
        PALETTE[self.color].1
    }

    pub fn label(&self) -> String {
        format!("{} {}", PALETTE[self.color].0, self.shape.name())
    }

    /// Whether the pixel centre of `(y, x)` lies inside the sprite at frame
    /// `f`, with the size multiplied by `scale`.
    pub fn covers(&self, f: usize, y: usize, x: usize, scale: f32) -> bool {
        let [cy, cx] = self.motion.at(f);
        let s = self.size * scale;
        let (dy, dx) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
        match self.shape {
            Shape::Square => dy.abs() <= s && dx.abs() <= s,
            Shape::Circle => dy * dy + dx * dx <= s * s,
            Shape::Triangle => dy >= -s && dy <= s && dx.abs() <= 0.5 * (dy + s) + 0.5,
        }
    }
}

/// Static background: colour gradient plus a low-frequency sinusoidal
/// texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: [f32; 3],
    pub gradient: [[f32; 3]; 2],
    pub amplitude: f32,
    /// Cycles per frame width along `(y, x)`.
    pub frequency: [f32; 2],
    pub phase: [f32; 3],
}

impl Background {
    fn random(r: &mut SeededRng) -> Self {
        let mut u = |lo: f64, hi: f64| rng::uniform(r, lo, hi) as f32;
        let base = [u(0.15, 0.45), u(0.15, 0.45), u(0.15, 0.45)];
        let gradient = [[u(-0.12, 0.12), u(-0.12, 0.12), u(-0.12, 0.12)], [u(-0.12, 0.12), u(-0.12, 0.12), u(-0.12, 0.12)]];
        Background {
            base,
            gradient,
            amplitude: u(0.04, 0.10),
            frequency: [u(0.5, 2.5), u(0.5, 2.5)],
            phase: [u(0.0, TAU), u(0.0, TAU), u(0.0, TAU)],
        }
    }

    pub fn at(&self, y: usize, x: usize, spec: ClipSpec) -> [f32; 3] {
        let (v, u) = (y as f32 / spec.height as f32, x as f32 / spec.width as f32);
        let wave = 2.0 * PI * (self.frequency[0] * v + self.frequency[1] * u);
        core::array::from_fn(|c| {
            self.base[c]
                + self.gradient[0][c] * (v - 0.5)
                + self.gradient[1][c] * (u - 0.5)
                + self.amplitude * libm::sinf(wave + self.phase[c])
        })
    }
}

/// Rounds to the nearest 8-bit level so clips survive PNG export exactly.
#[inline]
fn quantize(v: f32) -> f32 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

fn mix(a: [f32; 3], b: [f32; 3], w: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * w, a[1] + (b[1] - a[1]) * w, a[2] + (b[2] - a[2]) * w]
}

fn put(clip: &mut VideoClip, f: usize, y: usize, x: usize, rgb: [f32; 3]) {
    let px = clip.pixel_mut(f, y, x);
    for c in 0..3 {
        px[c] = quantize(rgb[c]);
    }
}

fn render_background(bg: &Background, spec: ClipSpec) -> VideoClip {
    let mut clip = VideoClip::zeros(spec.frames, spec.height, spec.width, 3);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let rgb = bg.at(y, x, spec);
            for f in 0..spec.frames {
                put(&mut clip, f, y, x, rgb);
            }
        }
    }
    clip
}

fn draw_sprite(clip: &mut VideoClip, s: &Sprite, scale: f32, color: [f32; 3], mask: Option<&mut FrameMask>) {
    let mut mask = mask;
    for f in 0..clip.frames {
        for y in 0..clip.height {
            for x in 0..clip.width {
                if s.covers(f, y, x, scale) {
                    put(clip, f, y, x, color);
                    if let Some(m) = mask.as_deref_mut() {
                        m.set(f, y, x);
                    }
                }
            }
        }
    }
}

fn coverage(s: &Sprite, scale: f32, spec: ClipSpec) -> FrameMask {
    let mut m = FrameMask::new(spec);
    for f in 0..spec.frames {
        for y in 0..spec.height {
            for x in 0..spec.width {
                if s.covers(f, y, x, scale) {
                    m.set(f, y, x);
                }
            }
        }
    }
    m
}

fn render(bg: &Background, sprites: &[Sprite], spec: ClipSpec) -> VideoClip {
    let mut clip = render_background(bg, spec);
    for s in sprites {
        draw_sprite(&mut clip, s, 1.0, s.rgb(), None);
    }
    clip
}

/// Samples a motion keeping a sprite of half extent `reach` inside the
/// frame for the whole clip.
fn random_motion(r: &mut SeededRng, reach: f32, max_speed: f32, spec: ClipSpec) -> Motion {
    let (h, w) = (spec.height as f32, spec.width as f32);
    let inside = |m: &Motion| {
        (0..spec.frames).all(|f| {
            let [y, x] = m.at(f);
            y >= reach && y <= h - reach && x >= reach && x <= w - reach
        })
    };
    for _ in 0..256 {
        let m = if rng::below(r, 3) < 2 {
            let speed = rng::uniform(r, 0.3, max_speed as f64) as f32;
            let a = rng::uniform(r, 0.0, 2.0 * core::f64::consts::PI) as f32;
            let start =
                [rng::uniform(r, reach as f64, (h - reach) as f64) as f32, rng::uniform(r, reach as f64, (w - reach) as f64) as f32];
            Motion::Linear { start, velocity: [speed * libm::sinf(a), speed * libm::cosf(a)] }
        } else {
            let radius = rng::uniform(r, 2.0, 5.0) as f32;
            let omega = (max_speed / radius).min(0.6) * if rng::below(r, 2) == 0 { 1.0 } else { -1.0 };
            let center = [
                rng::uniform(r, (reach + radius) as f64, (h - reach - radius) as f64) as f32,
                rng::uniform(r, (reach + radius) as f64, (w - reach - radius) as f64) as f32,
            ];
            Motion::Circular { center, radius, omega, phase: rng::uniform(r, 0.0, TAU) as f32 }
        };
        if inside(&m) {
            return m;
        }
    }
    Motion::Linear { start: [h / 2.0, w / 2.0], velocity: [0.0, 0.0] }
}

fn random_sprite(r: &mut SeededRng, taken: &[Sprite], margin: f32, max_speed: f32, spec: ClipSpec) -> Sprite {
    loop {
        let shape = SHAPES[rng::below(r, 3)];
        let color = rng::below(r, PALETTE.len());
        if taken.iter().any(|t| t.shape == shape && t.color == color) {
            continue;
        }
        let size = rng::uniform(r, 2.5, 4.5) as f32;
        let motion = random_motion(r, size + margin, max_speed, spec);
        return Sprite { shape, color, size, motion };
    }
}

/// Kind of programmatic edit in the general set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GeneralEdit {
    Add,
    Remove,
    Recolor,
    SwapShape,
    PaletteShift,
    Identity,
}

/// Procedural analogs of visual-effect categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Effect {
    GlowOutline,
    ParticleDisperse,
    ParticleGather,
    FlameFlicker,
    CloneOffset,
    RingOrbit,
    BounceScale,
    LineTraverse,
}

pub const EFFECTS: [Effect; 8] = [
    Effect::GlowOutline,
    Effect::ParticleDisperse,
    Effect::ParticleGather,
    Effect::FlameFlicker,
    Effect::CloneOffset,
    Effect::RingOrbit,
    Effect::BounceScale,
    Effect::LineTraverse,
];

impl Effect {
    pub fn id(self) -> &'static str {
        match self {
            Effect::GlowOutline => "GLOW_OUTLINE",
            Effect::ParticleDisperse => "PARTICLE_DISPERSE",
            Effect::ParticleGather => "PARTICLE_GATHER",
            Effect::FlameFlicker => "FLAME_FLICKER",
            Effect::CloneOffset => "CLONE_OFFSET",
            Effect::RingOrbit => "RING_ORBIT",
            Effect::BounceScale => "BOUNCE_SCALE",
            Effect::LineTraverse => "LINE_TRAVERSE",
        }
    }

    pub fn instruction(self, subject: Shape) -> String {
        let s = subject.name();
        match self {
            Effect::GlowOutline => format!("add a glowing outline to the {s}"),
            Effect::ParticleDisperse => format!("make the {s} disperse into particles"),
            Effect::ParticleGather => format!("gather particles into the {s}"),
            Effect::FlameFlicker => format!("set the {s} on fire"),
            Effect::CloneOffset => format!("add a shifted clone of the {s}"),
            Effect::RingOrbit => format!("add a ring orbiting the {s}"),
            Effect::BounceScale => format!("make the {s} bounce in scale"),
            Effect::LineTraverse => format!("sweep a line across the {s}"),
        }
    }
}

impl FromStr for Effect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EFFECTS.iter().copied().find(|e| e.id().eq_ignore_ascii_case(s)).ok_or_else(|| Error::Config(format!("unknown effect '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EditKind {
    General(GeneralEdit),
    Vfx(Effect),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditTriplet {
    pub source: VideoClip,
    pub target: VideoClip,
    pub instruction: String,
    /// True where source and target may differ.
    pub mask: FrameMask,
    pub kind: EditKind,
    /// Centre `(y, x)` of the edited sprite or effect subject per frame.
    pub trajectory: Vec<[f32; 2]>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub clip: ClipSpec,
    /// Subject speed ceiling, pixels per frame.
    pub max_subject_speed: f32,
    /// Effect-region displacement ceiling used by the coherence audit.
    pub max_effect_speed: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { clip: ClipSpec::default(), max_subject_speed: 1.2, max_effect_speed: 5.0 }
    }
}

fn diff_mask(a: &VideoClip, b: &VideoClip) -> FrameMask {
    let spec = ClipSpec { frames: a.frames, height: a.height, width: a.width };
    let mut m = FrameMask::new(spec);
    for f in 0..a.frames {
        for y in 0..a.height {
            for x in 0..a.width {
                if a.pixel(f, y, x) != b.pixel(f, y, x) {
                    m.set(f, y, x);
                }
            }
        }
    }
    m
}

fn union(a: &mut FrameMask, b: &FrameMask) {
    a.data.iter_mut().zip(&b.data).for_each(|(x, &y)| *x |= y);
}

/// One general-edit triplet from its own seed.
pub fn general_triplet(seed: u64, cfg: &SynthConfig) -> EditTriplet {
    let spec = cfg.clip;
    let mut r = rng::seeded(seed);
    let bg = Background::random(&mut r);
    let count = 1 + rng::below(&mut r, 3);
    let mut sprites: Vec<Sprite> = Vec::new();
    for _ in 0..count {
        let s = random_sprite(&mut r, &sprites, 1.0, cfg.max_subject_speed, spec);
        sprites.push(s);
    }
    let kinds = [
        GeneralEdit::Add,
        GeneralEdit::Remove,
        GeneralEdit::Recolor,
        GeneralEdit::SwapShape,
        GeneralEdit::PaletteShift,
        GeneralEdit::Identity,
    ];
    // identity and palette edits are rarer than object edits
    let weights = [5usize, 5, 5, 5, 2, 1];
    let mut pick = rng::below(&mut r, weights.iter().sum());
    let mut kind = kinds[0];
    for (k, w) in kinds.iter().zip(weights) {
        if pick < w {
            kind = *k;
            break;
        }
        pick -= w;
    }
    if kind == GeneralEdit::Add && sprites.len() == 3 {
        sprites.pop();
    }
    let source = render(&bg, &sprites, spec);
    let k = rng::below(&mut r, sprites.len());
    let chosen = sprites[k];
    let free_shapes: Vec<Shape> = SHAPES
        .iter()
        .copied()
        .filter(|&sh| sh != chosen.shape && !sprites.iter().any(|s| s.shape == sh && s.color == chosen.color))
        .collect();
    // both other shapes already exist in this color: recolor instead
    if kind == GeneralEdit::SwapShape && free_shapes.is_empty() {
        kind = GeneralEdit::Recolor;
    }
    let traj = |s: &Sprite| (0..spec.frames).map(|f| s.motion.at(f)).collect::<Vec<_>>();
    let (target, mask, instruction, trajectory) = match kind {
        GeneralEdit::Add => {
            let new = random_sprite(&mut r, &sprites, 1.0, cfg.max_subject_speed, spec);
            let mut all = sprites.clone();
            all.push(new);
            let target = render(&bg, &all, spec);
            (target, coverage(&new, 1.0, spec), format!("add a {}", new.label()), traj(&new))
        }
        GeneralEdit::Remove => {
            let rest: Vec<Sprite> = sprites.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, s)| *s).collect();
            let target = render(&bg, &rest, spec);
            (target, coverage(&chosen, 1.0, spec), format!("remove the {}", chosen.label()), traj(&chosen))
        }
        GeneralEdit::Recolor => {
            let mut color = rng::below(&mut r, PALETTE.len());
            while color == chosen.color || sprites.iter().any(|s| s.shape == chosen.shape && s.color == color) {
                color = rng::below(&mut r, PALETTE.len());
            }
            let mut edited = sprites.clone();
            edited[k].color = color;
            let target = render(&bg, &edited, spec);
            let instr = format!("make the {} {}", chosen.label(), PALETTE[color].0);
            (target, coverage(&chosen, 1.0, spec), instr, traj(&chosen))
        }
        GeneralEdit::SwapShape => {
            let shape = free_shapes[rng::below(&mut r, free_shapes.len())];
            let mut edited = sprites.clone();
            edited[k].shape = shape;
            let target = render(&bg, &edited, spec);
            let mut mask = coverage(&chosen, 1.0, spec);
            union(&mut mask, &coverage(&edited[k], 1.0, spec));
            (target, mask, format!("turn the {} into a {}", chosen.label(), shape.name()), traj(&chosen))
        }
        GeneralEdit::PaletteShift => {
            let warm = rng::below(&mut r, 2) == 0;
            let mut target = source.clone();
            let shift = if warm { [0.08, 0.02, -0.08] } else { [-0.08, 0.02, 0.08] };
            for px in target.data.chunks_mut(3) {
                for c in 0..3 {
                    px[c] = quantize(px[c] + shift[c]);
                }
            }
            let mask = FrameMask { data: vec![true; spec.frames * spec.height * spec.width], ..FrameMask::new(spec) };
            let instr = String::from(if warm { "shift the palette warmer" } else { "shift the palette cooler" });
            let center = [spec.height as f32 / 2.0, spec.width as f32 / 2.0];
            (target, mask, instr, vec![center; spec.frames])
        }
        GeneralEdit::Identity => (source.clone(), FrameMask::new(spec), String::from("make no change"), traj(&chosen)),
    };
    EditTriplet { source, target, instruction, mask, kind: EditKind::General(kind), trajectory, seed }
}

/// Renders `effect` on top of (or, for scale changes, instead of) the
/// subject; returns the target and the effect mask.
fn render_effect(effect: Effect, bg: &Background, subject: &Sprite, r: &mut SeededRng, spec: ClipSpec) -> (VideoClip, FrameMask) {
    let base = render(bg, core::slice::from_ref(subject), spec);
    let cover = coverage(subject, 1.0, spec);
    let mut target = base.clone();
    let mut mask = FrameMask::new(spec);
    let color = subject.rgb();
    let (h, w) = (spec.height as isize, spec.width as isize);
    let dot = |target: &mut VideoClip, mask: &mut FrameMask, f: usize, y: isize, x: isize, rgb: [f32; 3]| {
        if y >= 0 && y < h && x >= 0 && x < w {
            put(target, f, y as usize, x as usize, rgb);
            mask.set(f, y as usize, x as usize);
        }
    };
    match effect {
        Effect::GlowOutline => {
            let rim = mix(color, [1.0; 3], 0.55);
            for f in 0..spec.frames {
                for y in 0..h {
                    for x in 0..w {
                        if cover.get(f, y as usize, x as usize) {
                            continue;
                        }
                        let near = (-2isize..=2).any(|dy| {
                            (-2isize..=2).any(|dx| {
                                let (yy, xx) = (y + dy, x + dx);
                                dy * dy + dx * dx <= 4 && yy >= 0 && yy < h && xx >= 0 && xx < w && cover.get(f, yy as usize, xx as usize)
                            })
                        });
                        if near {
                            dot(&mut target, &mut mask, f, y, x, rim);
                        }
                    }
                }
            }
        }
        Effect::ParticleDisperse | Effect::ParticleGather => {
            let pixels: Vec<[f32; 2]> = (0..spec.height)
                .flat_map(|y| (0..spec.width).map(move |x| (y, x)))
                .filter(|&(y, x)| cover.get(0, y, x))
                .map(|(y, x)| [y as f32 + 0.5, x as f32 + 0.5])
                .collect();
            let c0 = subject.motion.at(0);
            let tint = mix(color, [1.0; 3], 0.35);
            let last = (spec.frames - 1) as f32;
            for _ in 0..20 {
                let p = pixels[rng::below(r, pixels.len().max(1)).min(pixels.len().saturating_sub(1))];
                let off = [p[0] - c0[0], p[1] - c0[1]];
                let len = libm::sqrtf(off[0] * off[0] + off[1] * off[1]);
                let a = if len > 0.5 { libm::atan2f(off[0], off[1]) } else { rng::uniform(r, 0.0, TAU) as f32 };
                let speed = rng::uniform(r, 0.3, 0.8) as f32;
                let vel = [speed * libm::sinf(a), speed * libm::cosf(a)];
                for f in 0..spec.frames {
                    let k = if effect == Effect::ParticleDisperse { f as f32 } else { last - f as f32 };
                    let c = subject.motion.at(f);
                    let y = libm::floorf(c[0] + off[0] + vel[0] * k) as isize;
                    let x = libm::floorf(c[1] + off[1] + vel[1] * k) as isize;
                    dot(&mut target, &mut mask, f, y, x, tint);
                }
            }
        }
        Effect::FlameFlicker => {
            let salt = rng::below(r, 1 << 30) as u64;
            for f in 0..spec.frames {
                for x in 0..w {
                    let top = (0..h).find(|&y| cover.get(f, y as usize, x as usize));
                    let Some(top) = top else { continue };
                    let hsh = crate::model::fnv1a(&[salt.to_le_bytes(), (x as u64).to_le_bytes(), ((f / 2) as u64).to_le_bytes()].concat());
                    let height = 2 + (hsh % 3) as isize;
                    for k in 1..=height {
                        let heat = (k - 1) as f32 / height as f32;
                        dot(&mut target, &mut mask, f, top - k, x, mix([1.0, 0.45, 0.05], [1.0, 0.92, 0.35], heat));
                    }
                }
            }
        }
        Effect::CloneOffset => {
            let c = subject.motion.at(0);
            let dx = if c[1] < spec.width as f32 / 2.0 { 7.0 } else { -7.0 };
            let clone = Sprite {
                motion: match subject.motion {
                    Motion::Linear { start, velocity } => Motion::Linear { start: [start[0], start[1] + dx], velocity },
                    Motion::Circular { center, radius, omega, phase } => {
                        Motion::Circular { center: [center[0], center[1] + dx], radius, omega, phase }
                    }
                },
                ..*subject
            };
            let hue = [color[1], color[2], color[0]];
            let mut layered = render_background(bg, spec);
            draw_sprite(&mut layered, &clone, 1.0, hue, None);
            draw_sprite(&mut layered, subject, 1.0, color, None);
            target = layered;
            mask = coverage(&clone, 1.0, spec);
            mask.data.iter_mut().zip(&cover.data).for_each(|(m, &s)| *m &= !s);
        }
        Effect::RingOrbit => {
            let radius = subject.size + 4.0;
            let omega = 2.0 * PI / 16.0;
            let phase = rng::uniform(r, 0.0, TAU) as f32;
            for f in 0..spec.frames {
                let c = subject.motion.at(f);
                let a = omega * f as f32 + phase;
                let (py, px) = (c[0] + radius * libm::sinf(a), c[1] + radius * libm::cosf(a));
                for y in 0..h {
                    for x in 0..w {
                        let (dy, dx) = (y as f32 + 0.5 - py, x as f32 + 0.5 - px);
                        if dy * dy + dx * dx <= 2.25 {
                            dot(&mut target, &mut mask, f, y, x, [0.95, 0.95, 0.6]);
                        }
                    }
                }
            }
        }
        Effect::BounceScale => {
            let mut layered = render_background(bg, spec);
            let mut scaled_cover = FrameMask::new(spec);
            for f in 0..spec.frames {
                let s = 1.0 + 0.35 * libm::powf(libm::sinf(PI * f as f32 / 8.0), 2.0);
                for y in 0..spec.height {
                    for x in 0..spec.width {
                        if subject.covers(f, y, x, s) {
                            put(&mut layered, f, y, x, color);
                            scaled_cover.set(f, y, x);
                        }
                    }
                }
            }
            target = layered;
            mask = cover.clone();
            union(&mut mask, &scaled_cover);
        }
        Effect::LineTraverse => {
            let last = (spec.frames - 1) as f32;
            for f in 0..spec.frames {
                let cols: Vec<usize> = (0..spec.width).filter(|&x| (0..spec.height).any(|y| cover.get(f, y, x))).collect();
                let (Some(&lo), Some(&hi)) = (cols.first(), cols.last()) else { continue };
                let x = lo + libm::roundf(f as f32 * (hi - lo) as f32 / last) as usize;
                for y in 0..spec.height {
                    if cover.get(f, y, x) {
                        dot(&mut target, &mut mask, f, y as isize, x as isize, [0.98, 0.98, 0.98]);
                    }
                }
            }
        }
    }
    (target, mask)
}

/// One effect triplet (single moving subject) from its own seed.
pub fn vfx_triplet(seed: u64, effect: Effect, cfg: &SynthConfig) -> EditTriplet {
    let spec = cfg.clip;
    let mut r = rng::seeded(seed);
    let bg = Background::random(&mut r);
    let shape = SHAPES[rng::below(&mut r, 3)];
    // white subjects leave no headroom for brightening effects
    let color = rng::below(&mut r, PALETTE.len() - 2);
    let color = if color >= 6 { color + 1 } else { color };
    let size = rng::uniform(&mut r, 3.0, 4.5) as f32;
    let margin = match effect {
        Effect::GlowOutline | Effect::LineTraverse | Effect::BounceScale => 3.0,
        Effect::FlameFlicker => 5.0,
        _ => 6.0,
    };
    let motion = random_motion(&mut r, size + margin, cfg.max_subject_speed, spec);
    let subject = Sprite { shape, color, size, motion };
    let source = render(&bg, core::slice::from_ref(&subject), spec);
    let (target, mask) = render_effect(effect, &bg, &subject, &mut r, spec);
    let trajectory = (0..spec.frames).map(|f| subject.motion.at(f)).collect();
    EditTriplet { source, target, instruction: effect.instruction(shape), mask, kind: EditKind::Vfx(effect), trajectory, seed }
}

/// `count` general-edit triplets; triplet `i` depends only on
/// `(seed, i)`.
pub fn generate_general(seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<EditTriplet>> {
    if count == 0 {
        bail!(Config, "count must be >= 1");
    }
    Ok((0..count).map(|i| general_triplet(rng::derive_seed(seed, i as u64), cfg)).collect())
}

pub fn generate_vfx(seed: u64, effect: Effect, count: usize, cfg: &SynthConfig) -> Result<Vec<EditTriplet>> {
    if count == 0 {
        bail!(Config, "count must be >= 1");
    }
    Ok((0..count).map(|i| vfx_triplet(rng::derive_seed(seed, i as u64), effect, cfg)).collect())
}

/// Pixels that differ between source and target outside the mask.
pub fn mask_violations(t: &EditTriplet) -> usize {
    let d = diff_mask(&t.source, &t.target);
    d.data.iter().zip(&t.mask.data).filter(|(&d, &m)| d && !m).count()
}

/// Largest frame-to-frame displacement of the effect-region centroid, and
/// the frame at which it occurs.
pub fn max_effect_displacement(t: &EditTriplet) -> (f32, usize) {
    let mut worst = (0.0f32, 0usize);
    for f in 1..t.mask.frames {
        if let (Some(a), Some(b)) = (t.mask.centroid(f - 1), t.mask.centroid(f)) {
            let d = libm::sqrtf((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]));
            if d > worst.0 {
                worst = (d, f);
            }
        }
    }
    worst
}

/// Every word that the instruction templates can produce.
pub fn vocabulary() -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    let mut add = |text: &str| {
        for w in crate::model::InstructionTokenizer::words(text) {
            if !words.contains(&w) {
                words.push(w);
            }
        }
    };
    for (c, _) in PALETTE {
        add(c);
    }
    for s in SHAPES {
        add(s.name());
        for e in EFFECTS {
            add(&e.instruction(s));
        }
    }
    for t in ["add a", "remove the", "make the", "turn the into a", "shift the palette warmer cooler", "make no change"] {
        add(t);
    }
    words.sort();
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_masks_are_exact() {
        let cfg = SynthConfig::default();
        for t in generate_general(11, 60, &cfg).unwrap() {
            assert_eq!(mask_violations(&t), 0, "{}", t.instruction);
            assert_eq!(t.source.dims(), [16, 32, 32, 3]);
            if t.kind == EditKind::General(GeneralEdit::Identity) {
                assert_eq!(t.source, t.target);
                assert_eq!(t.mask.count(), 0);
            }
        }
    }

    #[test]
    fn every_effect_renders_inside_its_mask() {
        let cfg = SynthConfig::default();
        for e in EFFECTS {
            for t in generate_vfx(5, e, 6, &cfg).unwrap() {
                assert_eq!(mask_violations(&t), 0, "{:?}", e);
                assert!(t.mask.count() > 0, "{:?} produced no effect", e);
                assert_ne!(t.source, t.target, "{:?}", e);
            }
        }
    }

    #[test]
    fn generation_is_pure() {
        let cfg = SynthConfig::default();
        assert_eq!(generate_vfx(3, Effect::FlameFlicker, 2, &cfg).unwrap(), generate_vfx(3, Effect::FlameFlicker, 2, &cfg).unwrap());
        assert_eq!(general_triplet(9, &cfg), general_triplet(9, &cfg));
        assert!(generate_general(1, 0, &cfg).is_err());
    }

    #[test]
    fn effect_names_parse() {
        assert_eq!("GLOW_OUTLINE".parse::<Effect>().unwrap(), Effect::GlowOutline);
        assert!(matches!("SPARKLE".parse::<Effect>(), Err(Error::Config(_))));
    }

    #[test]
    fn glow_rim_is_two_pixels() {
        let cfg = SynthConfig::default();
        let t = vfx_triplet(4, Effect::GlowOutline, &cfg);
        let spec = cfg.clip;
        let subject_center = t.trajectory[0];
        // walk right from the centre: subject pixels, then exactly two rim pixels
        let y = subject_center[0] as usize;
        let mut x = subject_center[1] as usize;
        while t.source.pixel(0, y, x) == t.target.pixel(0, y, x) && !t.mask.get(0, y, x) {
            x += 1;
        }
        let mut rim = 0;
        while x < spec.width && t.mask.get(0, y, x) {
            rim += 1;
            x += 1;
        }
        assert_eq!(rim, 2);
    }

    #[test]
    fn vocabulary_is_closed_and_collision_free() {
        let words = vocabulary();
        assert!(words.len() <= 256);
        let tok = crate::model::InstructionTokenizer::for_model(&crate::model::ModelConfig::default());
        let mut ids: Vec<usize> = words.iter().map(|w| tok.token_id(w)).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), words.len(), "hash collision in {:?}", words);
        let cfg = SynthConfig::default();
        for t in generate_general(2, 200, &cfg).unwrap() {
            for w in crate::model::InstructionTokenizer::words(&t.instruction) {
                assert!(words.contains(&w), "{} not in vocabulary", w);
            }
        }
    }
}

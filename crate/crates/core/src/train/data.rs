//! Training data: procedural moving-texture clips with known motion, and
//! random crops from user-supplied frame folders.
//!
//! A texture is a sum of oriented sinusoids evaluated at continuous
//! coordinates, so every motion is rendered without resampling error and the
//! ground-truth backward flow is known exactly.

use std::f64::consts::PI;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NvcError, Result};
use crate::frame::read_png_dir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Static,
    Translation,
    Rotation,
    Zoom,
    Occlusion,
}

impl MotionKind {
    pub const ALL: [MotionKind; 5] = [
        MotionKind::Static,
        MotionKind::Translation,
        MotionKind::Rotation,
        MotionKind::Zoom,
        MotionKind::Occlusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Static => "static",
            MotionKind::Translation => "translation",
            MotionKind::Rotation => "rotation",
            MotionKind::Zoom => "zoom",
            MotionKind::Occlusion => "occlusion",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| NvcError::Config(format!("unknown motion kind '{name}'")))
    }
}

/// Smooth procedural texture with a roughly 1/f spectrum: sinusoids whose
/// amplitude grows with their period, plus soft-edged discs for edges.
#[derive(Debug, Clone)]
struct Texture {
    /// `(kx, ky, phase, rgb amplitude)` per component.
    waves: Vec<(f64, f64, f64, [f64; 3])>,
    /// `(cx, cy, radius, rgb offset)` per disc.
    discs: Vec<(f64, f64, f64, [f64; 3])>,
    base: [f64; 3],
}

impl Texture {
    /// Discs are scattered at a fixed density over `[-margin, w + margin] x
    /// [-margin, h + margin]` so every crop has edges to track.
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, margin: f64) -> Self {
        let waves = (0..8)
            .map(|_| {
                let period = (rng.gen_range(8f64.ln()..160f64.ln())).exp();
                let angle = rng.gen_range(0.0..PI);
                let k = 2.0 * PI / period;
                let scale = 0.1 * (period / 160.0).powf(0.7);
                let amp = [0, 1, 2].map(|_| scale * rng.gen_range(0.3..1.0));
                (k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..2.0 * PI), amp)
            })
            .collect();
        let (ew, eh) = (w as f64 + 2.0 * margin, h as f64 + 2.0 * margin);
        let count = (ew * eh / 300.0).ceil() as usize;
        let discs = (0..count)
            .map(|_| {
                let c = (rng.gen_range(0.0..ew) - margin, rng.gen_range(0.0..eh) - margin);
                let r = rng.gen_range(3.0..12.0);
                let off = [0, 1, 2].map(|_| rng.gen_range(-0.25..0.25));
                (c.0, c.1, r, off)
            })
            .collect();
        let base = [0, 1, 2].map(|_| rng.gen_range(0.35..0.65));
        Self { waves, discs, base }
    }

    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        let mut v = self.base;
        for (kx, ky, ph, a) in &self.waves {
            let s = (kx * x + ky * y + ph).sin();
            for c in 0..3 {
                v[c] += a[c] * s;
            }
        }
        for (cx, cy, r, off) in &self.discs {
            // One-pixel soft edge keeps sampling alias-free.
            let d = (x - cx).hypot(y - cy) - r;
            let m = (0.5 - d).clamp(0.0, 1.0);
            for c in 0..3 {
                v[c] += off[c] * m;
            }
        }
        v.map(|c| c.clamp(0.0, 1.0))
    }
}

/// Affine content motion: frame `t` shows texture point
/// `c + A^t (p - c) - v t` at pixel `p`.
#[derive(Debug, Clone, Copy)]
struct Affine {
    angle: f64,
    zoom: f64,
    velocity: (f64, f64),
    center: (f64, f64),
}

impl Affine {
    fn forward(&self, t: f64, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = (self.angle * t).sin_cos();
        let z = self.zoom.powf(t);
        let (dx, dy) = (p.0 - self.center.0, p.1 - self.center.1);
        (
            self.center.0 + z * (c * dx - s * dy) - self.velocity.0 * t,
            self.center.1 + z * (s * dx + c * dy) - self.velocity.1 * t,
        )
    }

    fn inverse(&self, t: f64, q: (f64, f64)) -> (f64, f64) {
        let (s, c) = (-self.angle * t).sin_cos();
        let z = self.zoom.powf(-t);
        let (dx, dy) = (q.0 + self.velocity.0 * t - self.center.0, q.1 + self.velocity.1 * t - self.center.1);
        (self.center.0 + z * (c * dx - s * dy), self.center.1 + z * (s * dx + c * dy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub kind: MotionKind,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub seed: u64,
    /// Largest per-frame displacement in pixels for translating content.
    pub max_speed: f64,
}

impl ClipSpec {
    pub fn new(kind: MotionKind, size: usize, frames: usize, seed: u64) -> Self {
        Self {
            kind,
            height: size,
            width: size,
            frames,
            seed,
            max_speed: 3.0,
        }
    }
}

/// Frames plus per-frame ground-truth backward flow (target to previous frame).
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub frames: Vec<Tensor>,
    /// `flows[t]` is `(1, 2, H, W)` for `t >= 1`; `flows[0]` is zero.
    pub flows: Vec<Tensor>,
}

pub fn generate_clip(spec: &ClipSpec) -> Result<SyntheticClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);
    // Content may drift by max_speed per frame; cover that with discs too.
    let margin = 8.0 + spec.max_speed * spec.frames as f64;
    let bg = Texture::random(&mut rng, w, h, margin);
    let fg = Texture::random(&mut rng, w, h, 0.0);
    let speed = spec.max_speed;
    let mut vel = || (rng.gen_range(-speed..=speed), rng.gen_range(-speed..=speed));
    let v = vel();
    let v_fg = vel();
    let center = (w as f64 / 2.0, h as f64 / 2.0);
    let mut motion = Affine {
        angle: 0.0,
        zoom: 1.0,
        velocity: (0.0, 0.0),
        center,
    };
    match spec.kind {
        MotionKind::Static => {}
        MotionKind::Translation | MotionKind::Occlusion => motion.velocity = v,
        MotionKind::Rotation => motion.angle = rng.gen_range(0.01..0.04) * if rng.gen() { 1.0 } else { -1.0 },
        MotionKind::Zoom => motion.zoom = 1.0 + rng.gen_range(0.01..0.04) * if rng.gen() { 1.0 } else { -1.0 },
    }
    let side = (h.min(w) as f64 * 0.35).max(4.0);
    let origin = (rng.gen_range(0.0..(w as f64 - side)), rng.gen_range(0.0..(h as f64 - side)));
    let occluder = spec.kind == MotionKind::Occlusion;
    // Foreground square position at time t.
    let fg_at = |t: f64| (origin.0 + v_fg.0 * t, origin.1 + v_fg.1 * t);
    let inside = |p: (f64, f64), t: f64| {
        let o = fg_at(t);
        occluder && p.0 >= o.0 && p.0 < o.0 + side && p.1 >= o.1 && p.1 < o.1 + side
    };
    let mut frames = Vec::with_capacity(spec.frames);
    let mut flows = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let tf = t as f64;
        let mut pix = vec![0f32; 3 * h * w];
        let mut flow = vec![0f32; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                let p = (x as f64, y as f64);
                let i = y * w + x;
                let (rgb, prev) = if inside(p, tf) {
                    let o = fg_at(tf);
                    (fg.at(p.0 - o.0, p.1 - o.1), (p.0 - v_fg.0, p.1 - v_fg.1))
                } else {
                    let q = motion.forward(tf, p);
                    (bg.at(q.0, q.1), motion.inverse(tf - 1.0, q))
                };
                for c in 0..3 {
                    pix[c * h * w + i] = rgb[c] as f32;
                }
                if t > 0 {
                    flow[i] = (prev.0 - p.0) as f32;
                    flow[h * w + i] = (prev.1 - p.1) as f32;
                }
            }
        }
        frames.push(Tensor::from_vec(pix, (1, 3, h, w), &Device::Cpu)?);
        flows.push(Tensor::from_vec(flow, (1, 2, h, w), &Device::Cpu)?);
    }
    Ok(SyntheticClip { frames, flows })
}

/// Source of training samples; `sample(i, ..)` is a pure function of `i`
/// so that runs are reproducible and resumable.
pub trait FrameSource {
    fn sample(&self, index: u64, frames: usize, crop: usize) -> Result<Vec<Tensor>>;
}

/// Procedural clips cycling through the configured motion kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub kinds: Vec<MotionKind>,
    pub seed: u64,
    pub max_speed: f64,
}

impl SyntheticSource {
    pub fn new(kinds: Vec<MotionKind>, seed: u64) -> Self {
        Self {
            kinds,
            seed,
            max_speed: 3.0,
        }
    }
}

impl FrameSource for SyntheticSource {
    fn sample(&self, index: u64, frames: usize, crop: usize) -> Result<Vec<Tensor>> {
        if self.kinds.is_empty() {
            return Err(NvcError::Config("synthetic source needs at least one motion kind".into()));
        }
        let kind = self.kinds[(index % self.kinds.len() as u64) as usize];
        let spec = ClipSpec {
            max_speed: self.max_speed,
            ..ClipSpec::new(kind, crop, frames, self.seed.wrapping_mul(0x1000_0000_01b3).wrapping_add(index))
        };
        Ok(generate_clip(&spec)?.frames)
    }
}

/// Random aligned crops of consecutive frames from PNG folders.
pub struct FolderSource {
    sequences: Vec<Vec<Tensor>>,
    seed: u64,
}

impl FolderSource {
    pub fn open(dirs: &[impl AsRef<Path>], seed: u64) -> Result<Self> {
        let mut sequences = Vec::new();
        for d in dirs {
            let frames: Vec<Tensor> = read_png_dir(d.as_ref())?.into_iter().map(|f| f.pixels).collect();
            if !frames.is_empty() {
                sequences.push(frames);
            }
        }
        if sequences.is_empty() {
            return Err(NvcError::Config("no frames found in the given folders".into()));
        }
        Ok(Self { sequences, seed })
    }
}

impl FrameSource for FolderSource {
    fn sample(&self, index: u64, frames: usize, crop: usize) -> Result<Vec<Tensor>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let usable: Vec<&Vec<Tensor>> = self
            .sequences
            .iter()
            .filter(|s| s.len() >= frames && s[0].dim(2).unwrap_or(0) >= crop && s[0].dim(3).unwrap_or(0) >= crop)
            .collect();
        if usable.is_empty() {
            return Err(NvcError::Config(format!("no sequence has {frames} frames of at least {crop}x{crop}")));
        }
        let seq = usable[rng.gen_range(0..usable.len())];
        let start = rng.gen_range(0..=seq.len() - frames);
        let (h, w) = (seq[0].dim(2)?, seq[0].dim(3)?);
        let y = rng.gen_range(0..=h - crop);
        let x = rng.gen_range(0..=w - crop);
        seq[start..start + frames]
            .iter()
            .map(|f| Ok(f.narrow(2, y, crop)?.narrow(3, x, crop)?))
            .collect()
    }
}

/// Alternates between several sources.
pub struct MixedSource(pub Vec<Box<dyn FrameSource>>);

impl FrameSource for MixedSource {
    fn sample(&self, index: u64, frames: usize, crop: usize) -> Result<Vec<Tensor>> {
        if self.0.is_empty() {
            return Err(NvcError::Config("empty data mix".into()));
        }
        let n = self.0.len() as u64;
        self.0[(index % n) as usize].sample(index / n, frames, crop)
    }
}

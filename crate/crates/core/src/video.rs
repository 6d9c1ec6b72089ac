//! Toy videos: a bright square sliding over a dark background.
//!
//! Motion speed stands in for motion quality and additive texture noise for
//! (inverse) visual quality. Four degradations mirror the ones used to probe
//! gradient alignment: spatial blur, quantization ("compression"), additive
//! noise, and frame shuffling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TqdError};
use crate::rng;

pub const DEFAULT_FRAMES: usize = 8;
pub const DEFAULT_HEIGHT: usize = 16;
pub const DEFAULT_WIDTH: usize = 16;

pub const BACKGROUND: f32 = 0.1;
pub const FOREGROUND: f32 = 0.9;
pub const SQUARE_SIZE: usize = 4;

const MAGIC: u32 = u32::from_le_bytes(*b"TQDV");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for VideoDims {
    fn default() -> Self {
        Self {
            frames: DEFAULT_FRAMES,
            height: DEFAULT_HEIGHT,
            width: DEFAULT_WIDTH,
        }
    }
}

impl VideoDims {
    pub fn len(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Right,
    Left,
    Down,
    Up,
}

impl Direction {
    /// (row, column) unit step.
    fn step(self) -> (f64, f64) {
        match self {
            Direction::Right => (0.0, 1.0),
            Direction::Left => (0.0, -1.0),
            Direction::Down => (1.0, 0.0),
            Direction::Up => (-1.0, 0.0),
        }
    }
}

/// Generator parameters and the history of degradations applied since.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub motion_speed: f64,
    pub texture_noise: f64,
    pub seed: u64,
    pub direction: Direction,
    /// Top-left corner (row, column) in frame 0 before rounding.
    pub start: (f64, f64),
    /// Rounded top-left corner per frame, wrapped onto the torus.
    pub trajectory: Vec<(usize, usize)>,
    pub mq_score: f64,
    pub vq_score: f64,
    #[serde(default)]
    pub degradations: Vec<DegradationSpec>,
}

/// Scalar frame stack of shape `frames x height x width`, values in `[0, 1]`,
/// stored row-major (frame, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVideo {
    pub dims: VideoDims,
    pub data: Vec<f32>,
    pub meta: Option<VideoMeta>,
}

/// Motion-quality analog of a speed: monotone, in `[1, 5)`.
pub fn mq_analog(motion_speed: f64) -> f64 {
    1.0 + 4.0 * (1.0 - (-motion_speed / 1.5).exp())
}

/// Visual-quality analog of a texture noise level: decreasing, in `(1, 5]`.
pub fn vq_analog(texture_noise: f64) -> f64 {
    1.0 + 4.0 * (-texture_noise / 0.1).exp()
}

impl ToyVideo {
    pub fn from_data(dims: VideoDims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(TqdError::ShapeMismatch {
                expected: format!("{} values", dims.len()),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            dims,
            data,
            meta: None,
        })
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        for word in [
            MAGIC,
            self.dims.frames as u32,
            self.dims.height as u32,
            self.dims.width as u32,
        ] {
            buf.extend_from_slice(&word.to_le_bytes());
        }
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| TqdError::io(path, e))?;
        if let Some(meta) = &self.meta {
            let side = meta_path(path);
            let json = serde_json::to_string_pretty(meta)?;
            fs::write(&side, json).map_err(|e| TqdError::io(&side, e))?;
        }
        Ok(())
    }

    /// Reads a video and, when present, its JSON meta sidecar.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| TqdError::io(path, e))?;
        let mut video = Self::decode(&bytes)?;
        let side = meta_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| TqdError::io(&side, e))?;
            video.meta = Some(serde_json::from_str(&text)?);
        }
        Ok(video)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(TqdError::Artifact("video file shorter than its header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        if word(0) != MAGIC {
            return Err(TqdError::Artifact("bad video magic".into()));
        }
        let dims = VideoDims {
            frames: word(1) as usize,
            height: word(2) as usize,
            width: word(3) as usize,
        };
        let body = &bytes[16..];
        if body.len() != 4 * dims.len() {
            return Err(TqdError::Artifact(format!(
                "video body holds {} bytes, header promises {}",
                body.len(),
                4 * dims.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_data(dims, data)
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn generate_moving_shape(motion_speed: f64, texture_noise: f64, seed: u64) -> ToyVideo {
    generate_moving_shape_with(VideoDims::default(), motion_speed, texture_noise, seed)
}

/// Renders a `SQUARE_SIZE` square moving `motion_speed` pixels per frame along
/// one axis (direction and start drawn from `seed`), wrapping around the frame
/// edges, plus Gaussian texture noise of std `texture_noise`, clamped to
/// `[0, 1]`.
pub fn generate_moving_shape_with(
    dims: VideoDims,
    motion_speed: f64,
    texture_noise: f64,
    seed: u64,
) -> ToyVideo {
    let mut rng = rng::seeded(seed);
    let direction = [Direction::Right, Direction::Left, Direction::Down, Direction::Up]
        [rng.random_range(0..4)];
    let start = (
        rng.random_range(0.0..dims.height as f64),
        rng.random_range(0.0..dims.width as f64),
    );
    let (dr, dc) = direction.step();
    let trajectory: Vec<(usize, usize)> = (0..dims.frames)
        .map(|f| {
            let shift = motion_speed * f as f64;
            let r = (start.0 + dr * shift).round().rem_euclid(dims.height as f64) as usize;
            let c = (start.1 + dc * shift).round().rem_euclid(dims.width as f64) as usize;
            (r % dims.height, c % dims.width)
        })
        .collect();

    let mut data = vec![BACKGROUND; dims.len()];
    for (f, &(top, left)) in trajectory.iter().enumerate() {
        let frame = &mut data[f * dims.frame_len()..(f + 1) * dims.frame_len()];
        for i in 0..SQUARE_SIZE.min(dims.height) {
            for j in 0..SQUARE_SIZE.min(dims.width) {
                let r = (top + i) % dims.height;
                let c = (left + j) % dims.width;
                frame[r * dims.width + c] = FOREGROUND;
            }
        }
    }
    if texture_noise > 0.0 {
        let mut noise_rng = rng::stream(seed, rng::streams::NOISE);
        for x in data.iter_mut() {
            let z: f64 = noise_rng.sample(StandardNormal);
            *x = (*x as f64 + texture_noise * z).clamp(0.0, 1.0) as f32;
        }
    }

    ToyVideo {
        dims,
        data,
        meta: Some(VideoMeta {
            motion_speed,
            texture_noise,
            seed,
            direction,
            start,
            trajectory,
            mq_score: mq_analog(motion_speed),
            vq_score: vq_analog(texture_noise),
            degradations: Vec::new(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationKind {
    Blur,
    Compression,
    Noise,
    Shuffle,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 4] = [
        DegradationKind::Blur,
        DegradationKind::Compression,
        DegradationKind::Noise,
        DegradationKind::Shuffle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Blur => "blur",
            DegradationKind::Compression => "compression",
            DegradationKind::Noise => "noise",
            DegradationKind::Shuffle => "shuffle",
        }
    }

    /// Whether the degradation hurts visual (as opposed to motion) quality.
    pub fn is_visual(self) -> bool {
        !matches!(self, DegradationKind::Shuffle)
    }
}

/// `strength` is the blur radius, the number of quantization levels, the
/// noise std, or the fraction of frames shuffled, depending on `kind`.
/// Zero strength is the identity for every kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub strength: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, strength: f64, seed: u64) -> Self {
        Self {
            kind,
            strength,
            seed,
        }
    }

    /// One moderate setting per kind.
    pub fn defaults(seed: u64) -> Vec<Self> {
        vec![
            Self::new(DegradationKind::Blur, 2.0, seed),
            Self::new(DegradationKind::Compression, 8.0, seed),
            Self::new(DegradationKind::Noise, 0.1, seed),
            Self::new(DegradationKind::Shuffle, 1.0, seed),
        ]
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.kind.name(), self.strength)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.strength;
        let bad = |msg: String| Err(TqdError::InvalidParameter(msg));
        if !(s >= 0.0 && s.is_finite()) {
            return bad(format!("{} strength must be finite and >= 0, got {s}", self.kind.name()));
        }
        match self.kind {
            DegradationKind::Blur if s.fract() != 0.0 => {
                bad(format!("blur radius must be a whole number, got {s}"))
            }
            DegradationKind::Compression if s != 0.0 && (s < 2.0 || s.fract() != 0.0) => bad(
                format!("compression needs a whole number of levels >= 2, got {s}"),
            ),
            DegradationKind::Shuffle if s > 1.0 => {
                bad(format!("shuffle fraction must lie in [0, 1], got {s}"))
            }
            _ => Ok(()),
        }
    }
}

pub fn degrade(video: &ToyVideo, spec: &DegradationSpec) -> Result<ToyVideo> {
    spec.validate()?;
    let mut out = video.clone();
    if spec.strength > 0.0 {
        match spec.kind {
            DegradationKind::Blur => box_blur(&mut out, spec.strength as usize),
            DegradationKind::Compression => quantize(&mut out, spec.strength as usize),
            DegradationKind::Noise => add_noise(&mut out, spec.strength, spec.seed),
            DegradationKind::Shuffle => shuffle_frames(&mut out, spec.strength, spec.seed),
        }
    }
    if let Some(meta) = out.meta.as_mut() {
        meta.degradations.push(*spec);
    }
    Ok(out)
}

/// Mirror index for half-sample symmetric padding (`... b a | a b c | c b ...`).
fn mirror(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable per-frame box blur with symmetric boundary padding. Each input
/// pixel contributes total weight one, so the frame mean is preserved.
fn box_blur(video: &mut ToyVideo, radius: usize) {
    let VideoDims { height, width, .. } = video.dims;
    let r = radius as isize;
    let norm = 1.0 / (2 * radius + 1) as f64;
    let mut tmp = vec![0.0f64; height * width];
    for f in 0..video.dims.frames {
        let frame = &mut video.data[f * height * width..(f + 1) * height * width];
        for row in 0..height {
            for col in 0..width {
                let s: f64 = (-r..=r)
                    .map(|k| frame[row * width + mirror(col as isize + k, width)] as f64)
                    .sum();
                tmp[row * width + col] = s * norm;
            }
        }
        for row in 0..height {
            for col in 0..width {
                let s: f64 = (-r..=r)
                    .map(|k| tmp[mirror(row as isize + k, height) * width + col])
                    .sum();
                frame[row * width + col] = (s * norm).clamp(0.0, 1.0) as f32;
            }
        }
    }
}

/// Mid-rise uniform quantizer on `[0, 1]`: `(floor(x * L) + 0.5) / L`.
pub fn quantize_value(x: f32, levels: usize) -> f32 {
    let l = levels as f64;
    let bin = ((x as f64) * l).floor().clamp(0.0, l - 1.0);
    ((bin + 0.5) / l) as f32
}

fn quantize(video: &mut ToyVideo, levels: usize) {
    for x in video.data.iter_mut() {
        *x = quantize_value(*x, levels);
    }
}

fn add_noise(video: &mut ToyVideo, std: f64, seed: u64) {
    let mut rng = rng::stream(seed, rng::streams::DEGRADE);
    for x in video.data.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x = (*x as f64 + std * z).clamp(0.0, 1.0) as f32;
    }
}

/// Picks `round(fraction * F)` frame slots and rotates their contents along a
/// random cycle (Sattolo), so every chosen slot receives a different frame.
fn shuffle_frames(video: &mut ToyVideo, fraction: f64, seed: u64) {
    let frames = video.dims.frames;
    let k = (fraction * frames as f64).round() as usize;
    if k < 2 {
        return;
    }
    let mut rng = rng::stream(seed, rng::streams::DEGRADE);
    let mut slots = index::sample(&mut rng, frames, k).into_vec();
    slots.sort_unstable();
    let mut order: Vec<usize> = slots.clone();
    for i in (1..k).rev() {
        let j = rng.random_range(0..i);
        order.swap(i, j);
    }
    let n = video.dims.frame_len();
    let src = video.data.clone();
    for (dst, from) in slots.iter().zip(&order) {
        video.data[dst * n..(dst + 1) * n].copy_from_slice(&src[from * n..(from + 1) * n]);
    }
}

/// `t * x1 + (1 - t) * x0`, elementwise and unclamped.
pub fn flow_interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    if x0.len() != x1.len() {
        return Err(TqdError::ShapeMismatch {
            expected: format!("{} values", x0.len()),
            got: format!("{} values", x1.len()),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(TqdError::InvalidParameter(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(x0.iter().zip(x1).map(|(&a, &b)| t * b + (1.0 - t) * a).collect())
}

/// Where a manifest record's video comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Synthetic {
        motion_speed: f64,
        texture_noise: f64,
        seed: u64,
    },
    File(PathBuf),
}

impl Payload {
    /// Parses `synth:speed=<f>,noise=<f>,seed=<u>`; anything else is a path.
    pub fn parse(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synth:") else {
            return Ok(Payload::File(PathBuf::from(s)));
        };
        let (mut speed, mut noise, mut seed) = (None, None, None);
        for part in rest.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad_payload(s))?;
            match k.trim() {
                "speed" => speed = Some(v.trim().parse::<f64>().map_err(|_| bad_payload(s))?),
                "noise" => noise = Some(v.trim().parse::<f64>().map_err(|_| bad_payload(s))?),
                "seed" => seed = Some(v.trim().parse::<u64>().map_err(|_| bad_payload(s))?),
                _ => return Err(bad_payload(s)),
            }
        }
        match (speed, noise, seed) {
            (Some(motion_speed), Some(texture_noise), Some(seed))
                if motion_speed.is_finite() && texture_noise.is_finite() =>
            {
                Ok(Payload::Synthetic {
                    motion_speed,
                    texture_noise,
                    seed,
                })
            }
            _ => Err(bad_payload(s)),
        }
    }

    pub fn synthetic(motion_speed: f64, texture_noise: f64, seed: u64) -> String {
        format!("synth:speed={motion_speed},noise={texture_noise},seed={seed}")
    }

    /// Materializes the video. Relative file paths resolve against `base`.
    pub fn resolve(&self, dims: VideoDims, base: Option<&Path>) -> Result<ToyVideo> {
        match self {
            Payload::Synthetic {
                motion_speed,
                texture_noise,
                seed,
            } => Ok(generate_moving_shape_with(dims, *motion_speed, *texture_noise, *seed)),
            Payload::File(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let v = ToyVideo::read(&path)?;
                if v.dims != dims {
                    return Err(TqdError::ShapeMismatch {
                        expected: format!("{dims:?}"),
                        got: format!("{:?}", v.dims),
                    });
                }
                Ok(v)
            }
        }
    }
}

fn bad_payload(s: &str) -> TqdError {
    TqdError::InvalidParameter(format!(
        "malformed payload `{s}` (expected synth:speed=<f>,noise=<f>,seed=<u> or a file path)"
    ))
}

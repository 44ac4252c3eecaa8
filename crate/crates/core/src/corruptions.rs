//! Natural corruptions applied to target images.
//!
//! Sixteen kinds in four categories (blur, noise, digital, weather), each at
//! integer severity 1..=5. Per-severity parameters live in
//! `data/corruption_params.toml`, which is compiled into the crate. Random
//! kinds draw from a ChaCha generator seeded by [`CorruptionSpec::seed`], so
//! every call with the same `(image, kind, severity, seed)` is byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RgbImage;

const PARAMS_TOML: &str = include_str!("../data/corruption_params.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorruptionError {
    #[error("severity must be in 1..=5, got {0}")]
    InvalidSeverity(u8),
    #[error("unknown corruption kind {0:?}")]
    UnknownKind(String),
    #[error("invalid corruption setting {0:?}, expected <kind>:<severity>")]
    BadSetting(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    MotionBlur,
    DefocusBlur,
    GlassBlur,
    GaussianBlur,
    GaussianNoise,
    ImpulseNoise,
    ShotNoise,
    SpeckleNoise,
    Brightness,
    Contrast,
    Saturation,
    JpegCompression,
    Snow,
    Spatter,
    Fog,
    Frost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionCategory {
    Blur,
    Noise,
    Digital,
    Weather,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 16] = [
        Self::MotionBlur,
        Self::DefocusBlur,
        Self::GlassBlur,
        Self::GaussianBlur,
        Self::GaussianNoise,
        Self::ImpulseNoise,
        Self::ShotNoise,
        Self::SpeckleNoise,
        Self::Brightness,
        Self::Contrast,
        Self::Saturation,
        Self::JpegCompression,
        Self::Snow,
        Self::Spatter,
        Self::Fog,
        Self::Frost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MotionBlur => "motion-blur",
            Self::DefocusBlur => "defocus-blur",
            Self::GlassBlur => "glass-blur",
            Self::GaussianBlur => "gaussian-blur",
            Self::GaussianNoise => "gaussian-noise",
            Self::ImpulseNoise => "impulse-noise",
            Self::ShotNoise => "shot-noise",
            Self::SpeckleNoise => "speckle-noise",
            Self::Brightness => "brightness",
            Self::Contrast => "contrast",
            Self::Saturation => "saturation",
            Self::JpegCompression => "jpeg-compression",
            Self::Snow => "snow",
            Self::Spatter => "spatter",
            Self::Fog => "fog",
            Self::Frost => "frost",
        }
    }

    pub fn category(self) -> CorruptionCategory {
        use CorruptionKind::*;
        match self {
            MotionBlur | DefocusBlur | GlassBlur | GaussianBlur => CorruptionCategory::Blur,
            GaussianNoise | ImpulseNoise | ShotNoise | SpeckleNoise => CorruptionCategory::Noise,
            Brightness | Contrast | Saturation | JpegCompression => CorruptionCategory::Digital,
            Snow | Spatter | Fog | Frost => CorruptionCategory::Weather,
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = CorruptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CorruptionError::UnknownKind(s.to_string()))
    }
}

/// Severity level in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Severity(u8);

impl Severity {
    pub fn new(level: u8) -> Result<Self, CorruptionError> {
        if (1..=5).contains(&level) {
            Ok(Self(level))
        } else {
            Err(CorruptionError::InvalidSeverity(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Severity> {
        (1..=5).map(Severity)
    }

    fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u8> for Severity {
    type Error = CorruptionError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Severity::new(v)
    }
}

impl From<Severity> for u8 {
    fn from(s: Severity) -> u8 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: Severity,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self, CorruptionError> {
        Ok(Self {
            kind,
            severity: Severity::new(severity)?,
            seed,
        })
    }
}

/// Parses a `kind:severity` setting such as `fog:3`.
pub fn parse_setting(s: &str) -> Result<(CorruptionKind, Severity), CorruptionError> {
    let (kind, sev) = s
        .split_once(':')
        .ok_or_else(|| CorruptionError::BadSetting(s.to_string()))?;
    let level: u8 = sev
        .parse()
        .map_err(|_| CorruptionError::BadSetting(s.to_string()))?;
    Ok((kind.parse()?, Severity::new(level)?))
}

/// Parameters of one `(kind, severity)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeverityParams {
    MotionBlur { length: f64 },
    DefocusBlur { radius: f64 },
    GlassBlur { sigma: f64, max_delta: usize, iterations: usize },
    GaussianBlur { sigma: f64 },
    GaussianNoise { sigma: f64 },
    ImpulseNoise { amount: f64 },
    ShotNoise { photons: f64 },
    SpeckleNoise { sigma: f64 },
    Brightness { delta: f64 },
    Contrast { factor: f64 },
    Saturation { factor: f64 },
    JpegCompression { quality: u8 },
    Snow { density: f64, flake_length: f64, whiten: f64 },
    Spatter { threshold: f64, blob_sigma: f64, opacity: f64 },
    Fog { weight: f64 },
    Frost { weight: f64 },
}

type ParamTable = BTreeMap<String, BTreeMap<String, [f64; 5]>>;

fn table() -> &'static ParamTable {
    static TABLE: OnceLock<ParamTable> = OnceLock::new();
    TABLE.get_or_init(|| toml::from_str(PARAMS_TOML).expect("bundled corruption table parses"))
}

fn param(kind: CorruptionKind, name: &str, severity: Severity) -> f64 {
    table()
        .get(kind.name())
        .and_then(|row| row.get(name))
        .unwrap_or_else(|| panic!("bundled table lacks {}.{}", kind.name(), name))[severity.index()]
}

pub fn severity_params(kind: CorruptionKind, severity: Severity) -> SeverityParams {
    use CorruptionKind as K;
    let p = |name| param(kind, name, severity);
    match kind {
        K::MotionBlur => SeverityParams::MotionBlur { length: p("length") },
        K::DefocusBlur => SeverityParams::DefocusBlur { radius: p("radius") },
        K::GlassBlur => SeverityParams::GlassBlur {
            sigma: p("sigma"),
            max_delta: p("max_delta") as usize,
            iterations: p("iterations") as usize,
        },
        K::GaussianBlur => SeverityParams::GaussianBlur { sigma: p("sigma") },
        K::GaussianNoise => SeverityParams::GaussianNoise { sigma: p("sigma") },
        K::ImpulseNoise => SeverityParams::ImpulseNoise { amount: p("amount") },
        K::ShotNoise => SeverityParams::ShotNoise { photons: p("photons") },
        K::SpeckleNoise => SeverityParams::SpeckleNoise { sigma: p("sigma") },
        K::Brightness => SeverityParams::Brightness { delta: p("delta") },
        K::Contrast => SeverityParams::Contrast { factor: p("factor") },
        K::Saturation => SeverityParams::Saturation { factor: p("factor") },
        K::JpegCompression => SeverityParams::JpegCompression {
            quality: p("quality") as u8,
        },
        K::Snow => SeverityParams::Snow {
            density: p("density"),
            flake_length: p("flake_length"),
            whiten: p("whiten"),
        },
        K::Spatter => SeverityParams::Spatter {
            threshold: p("threshold"),
            blob_sigma: p("blob_sigma"),
            opacity: p("opacity"),
        },
        K::Fog => SeverityParams::Fog { weight: p("weight") },
        K::Frost => SeverityParams::Frost { weight: p("weight") },
    }
}

/// Applies `spec` to `img`. Output has the same dimensions.
pub fn corrupt(img: &RgbImage, spec: &CorruptionSpec) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buf = FloatImage::from_rgb(img);
    match severity_params(spec.kind, spec.severity) {
        SeverityParams::MotionBlur { length } => {
            let angle = rng.random_range(-45.0..45.0f64);
            buf = buf.convolve(&line_kernel(length, angle));
        }
        SeverityParams::DefocusBlur { radius } => {
            buf = buf.convolve(&disk_kernel(radius)).gaussian_blur(0.5);
        }
        SeverityParams::GlassBlur {
            sigma,
            max_delta,
            iterations,
        } => {
            buf = buf.gaussian_blur(sigma);
            glass_shuffle(&mut buf, max_delta, iterations, &mut rng);
            buf = buf.gaussian_blur(sigma);
        }
        SeverityParams::GaussianBlur { sigma } => buf = buf.gaussian_blur(sigma),
        SeverityParams::GaussianNoise { sigma } => {
            let n = Normal::new(0.0, sigma as f32).expect("sigma is positive");
            for v in &mut buf.data {
                *v += n.sample(&mut rng);
            }
        }
        SeverityParams::ImpulseNoise { amount } => {
            for v in &mut buf.data {
                if rng.random_bool(amount) {
                    *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                }
            }
        }
        SeverityParams::ShotNoise { photons } => {
            for v in &mut buf.data {
                let lambda = (v.clamp(0.0, 1.0) as f64) * photons;
                let k = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng)
                } else {
                    0.0
                };
                *v = (k / photons) as f32;
            }
        }
        SeverityParams::SpeckleNoise { sigma } => {
            let n = Normal::new(0.0, sigma as f32).expect("sigma is positive");
            for v in &mut buf.data {
                *v += *v * n.sample(&mut rng);
            }
        }
        SeverityParams::Brightness { delta } => buf.map_hsv(|h, s, v| (h, s, v + delta as f32)),
        SeverityParams::Contrast { factor } => {
            let mean = buf.data.iter().sum::<f32>() / buf.data.len() as f32;
            for v in &mut buf.data {
                *v = (*v - mean) * factor as f32 + mean;
            }
        }
        SeverityParams::Saturation { factor } => buf.map_hsv(|h, s, v| (h, s * factor as f32, v)),
        SeverityParams::JpegCompression { quality } => return jpeg_round_trip(img, quality),
        SeverityParams::Snow {
            density,
            flake_length,
            whiten,
        } => snow(&mut buf, density, flake_length, whiten as f32, &mut rng),
        SeverityParams::Spatter {
            threshold,
            blob_sigma,
            opacity,
        } => spatter(&mut buf, threshold as f32, blob_sigma, opacity as f32, &mut rng),
        SeverityParams::Fog { weight } => {
            let layer = plasma_fractal(buf.width, buf.height, &mut rng);
            let w = weight as f32;
            for (i, px) in buf.data.chunks_exact_mut(3).enumerate() {
                let fog = 0.55 + 0.45 * layer[i];
                for c in px {
                    *c = (1.0 - w) * *c + w * fog;
                }
            }
        }
        SeverityParams::Frost { weight } => {
            let layer = frost_layer(buf.width, buf.height, &mut rng);
            let w = weight as f32;
            const TINT: [f32; 3] = [0.86, 0.92, 1.0];
            for (i, px) in buf.data.chunks_exact_mut(3).enumerate() {
                for (c, t) in px.iter_mut().zip(TINT) {
                    *c = (1.0 - w) * *c + w * t * layer[i];
                }
            }
        }
    }
    buf.to_rgb()
}

/// Interleaved RGB in `[0, 1]` (values may leave the range until
/// quantization).
#[derive(Clone)]
struct FloatImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FloatImage {
    fn from_rgb(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_bytes().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    fn to_rgb(&self) -> RgbImage {
        let data = self
            .data
            .iter()
            .map(|v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(self.width, self.height, data).expect("same dimensions")
    }

    /// Convolution with a sparse kernel, edges clamped.
    fn convolve(&self, taps: &[(i32, i32, f32)]) -> Self {
        let (w, h) = (self.width as i32, self.height as i32);
        let mut out = vec![0.0f32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for &(dx, dy, wt) in taps {
                    let sx = (x + dx).clamp(0, w - 1);
                    let sy = (y + dy).clamp(0, h - 1);
                    let i = ((sy * w + sx) * 3) as usize;
                    acc[0] += wt * self.data[i];
                    acc[1] += wt * self.data[i + 1];
                    acc[2] += wt * self.data[i + 2];
                }
                let o = ((y * w + x) * 3) as usize;
                out[o..o + 3].copy_from_slice(&acc);
            }
        }
        Self {
            data: out,
            ..*self
        }
    }

    fn gaussian_blur(&self, sigma: f64) -> Self {
        let kernel = gaussian_kernel(sigma);
        let horizontal: Vec<(i32, i32, f32)> = kernel.iter().map(|&(d, w)| (d, 0, w)).collect();
        let vertical: Vec<(i32, i32, f32)> = kernel.iter().map(|&(d, w)| (0, d, w)).collect();
        self.convolve(&horizontal).convolve(&vertical)
    }

    fn map_hsv(&mut self, f: impl Fn(f32, f32, f32) -> (f32, f32, f32)) {
        for px in self.data.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(px[0].clamp(0.0, 1.0), px[1].clamp(0.0, 1.0), px[2].clamp(0.0, 1.0));
            let (h, s, v) = f(h, s, v);
            let (r, g, b) = hsv_to_rgb(h, s.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
            px.copy_from_slice(&[r, g, b]);
        }
    }

    fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<(i32, f32)> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i32;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    (-radius..=radius)
        .zip(weights)
        .map(|(d, w)| (d, (w / sum) as f32))
        .collect()
}

fn disk_kernel(radius: f64) -> Vec<(i32, i32, f32)> {
    let r = radius.ceil() as i32;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                taps.push((dx, dy, 1.0));
            }
        }
    }
    let n = taps.len() as f32;
    taps.iter_mut().for_each(|t| t.2 /= n);
    taps
}

/// Uniform streak of `length` pixels centred on the origin, at `angle_deg`.
fn line_kernel(length: f64, angle_deg: f64) -> Vec<(i32, i32, f32)> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let n = length.round().max(1.0) as i32;
    let mut taps: BTreeMap<(i32, i32), f32> = BTreeMap::new();
    for k in 0..n {
        let t = k as f64 - (n - 1) as f64 / 2.0;
        let key = ((t * c).round() as i32, (t * s).round() as i32);
        *taps.entry(key).or_default() += 1.0;
    }
    taps.into_iter()
        .map(|((dx, dy), w)| (dx, dy, w / n as f32))
        .collect()
}

fn glass_shuffle(buf: &mut FloatImage, max_delta: usize, iterations: usize, rng: &mut ChaCha8Rng) {
    let (w, h) = (buf.width, buf.height);
    let d = max_delta as i64;
    for _ in 0..iterations {
        for y in (0..h).rev() {
            for x in (0..w).rev() {
                let dx = rng.random_range(-d..=d);
                let dy = rng.random_range(-d..=d);
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let a = (y * w + x) * 3;
                let b = (ny as usize * w + nx as usize) * 3;
                for c in 0..3 {
                    buf.data.swap(a + c, b + c);
                }
            }
        }
    }
}

fn snow(buf: &mut FloatImage, density: f64, flake_length: f64, whiten: f32, rng: &mut ChaCha8Rng) {
    let luma = buf.luma();
    for (px, l) in buf.data.chunks_exact_mut(3).zip(&luma) {
        let bright = (l * 1.5 + 0.5).min(1.0);
        for c in px {
            *c = (1.0 - whiten) * *c + whiten * c.max(bright);
        }
    }
    let mut flakes = FloatImage {
        width: buf.width,
        height: buf.height,
        data: vec![0.0; buf.data.len()],
    };
    for px in flakes.data.chunks_exact_mut(3) {
        if rng.random_bool(density) {
            px.copy_from_slice(&[1.0; 3]);
        }
    }
    let angle = rng.random_range(-135.0..-45.0f64);
    let streaks = flakes.convolve(&line_kernel(flake_length, angle));
    let gain = (flake_length / 2.0) as f32;
    for (v, s) in buf.data.iter_mut().zip(&streaks.data) {
        *v += (s * gain).min(1.0);
    }
}

fn spatter(buf: &mut FloatImage, threshold: f32, blob_sigma: f64, opacity: f32, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0f32, 1.0).expect("unit normal");
    let field = FloatImage {
        width: buf.width,
        height: buf.height,
        data: (0..buf.width * buf.height)
            .flat_map(|_| {
                let v = n.sample(rng);
                [v, v, v]
            })
            .collect(),
    }
    .gaussian_blur(blob_sigma);
    let values: Vec<f32> = field.data.iter().step_by(3).copied().collect();
    let mean = values.iter().sum::<f32>() / values.len() as f32;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / values.len() as f32;
    let std = var.sqrt().max(1e-6);
    const MUD: [f32; 3] = [0.25, 0.17, 0.08];
    for (px, v) in buf.data.chunks_exact_mut(3).zip(values) {
        let z = 0.5 + 0.15 * (v - mean) / std;
        let mask = ((z - threshold) / 0.03).clamp(0.0, 1.0) * opacity;
        for (c, m) in px.iter_mut().zip(MUD) {
            *c = *c * (1.0 - mask) + m * mask;
        }
    }
}

/// Diamond-square fractal in `[0, 1]`, one value per pixel.
fn plasma_fractal(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut size = 1usize;
    while size < width.max(height) {
        size *= 2;
    }
    let n = size + 1;
    let mut grid = vec![0.0f32; n * n];
    let mut amp = 1.0f32;
    let mut step = size;
    while step > 1 {
        let half = step / 2;
        for y in (half..n).step_by(step) {
            for x in (half..n).step_by(step) {
                let avg = (grid[(y - half) * n + x - half]
                    + grid[(y - half) * n + x + half]
                    + grid[(y + half) * n + x - half]
                    + grid[(y + half) * n + x + half])
                    / 4.0;
                grid[y * n + x] = avg + amp * rng.random_range(-1.0..1.0f32);
            }
        }
        for y in (0..n).step_by(half) {
            let start = if (y / half) % 2 == 0 { half } else { 0 };
            for x in (start..n).step_by(step) {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                if y >= half {
                    sum += grid[(y - half) * n + x];
                    cnt += 1.0;
                }
                if y + half < n {
                    sum += grid[(y + half) * n + x];
                    cnt += 1.0;
                }
                if x >= half {
                    sum += grid[y * n + x - half];
                    cnt += 1.0;
                }
                if x + half < n {
                    sum += grid[y * n + x + half];
                    cnt += 1.0;
                }
                grid[y * n + x] = sum / cnt + amp * rng.random_range(-1.0..1.0f32);
            }
        }
        step = half;
        amp *= 0.5;
    }
    normalize_unit(
        (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| grid[y * n + x])
            .collect(),
    )
}

/// Value noise lattice with bilinear interpolation.
fn value_noise(width: usize, height: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random::<f32>()).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let fx = x as f32 / cell as f32;
            let fy = y as f32 / cell as f32;
            let (x0, y0) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Ice-crystal texture: ridged multi-octave noise with a soft cloudy base.
fn frost_layer(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut acc = vec![0.0f32; width * height];
    let mut amp = 1.0f32;
    for cell in [32usize, 16, 8, 4, 2] {
        let octave = value_noise(width, height, cell, rng);
        for (a, v) in acc.iter_mut().zip(octave) {
            let ridge = 1.0 - (2.0 * v - 1.0).abs();
            *a += amp * ridge.powi(3);
        }
        amp *= 0.65;
    }
    let acc = normalize_unit(acc);
    acc.into_iter().map(|v| 0.45 + 0.55 * v).collect()
}

fn normalize_unit(values: Vec<f32>) -> Vec<f32> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(1e-6);
    values.into_iter().map(|v| (v - lo) / span).collect()
}

fn jpeg_round_trip(img: &RgbImage, quality: u8) -> RgbImage {
    let mut bytes = Vec::new();
    let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut bytes, quality);
    enc.encode(
        img.as_bytes(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .expect("in-memory jpeg encode");
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .expect("decode of freshly encoded jpeg")
        .into_rgb8();
    RgbImage::from_raw(img.width(), img.height(), decoded.into_raw()).expect("jpeg keeps size")
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h / 6.0, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<[u8; 3]> = (0..16).map(|_| rng.random()).collect();
        RgbImage::from_fn(48, 40, |x, y| {
            let c = base[(x / 6 + y / 5 * 3) % 16];
            let t = ((x * 7 + y * 3) % 32) as u8;
            [c[0].saturating_add(t), c[1], c[2].saturating_sub(t)]
        })
    }

    #[test]
    fn kind_names_round_trip() {
        assert_eq!(CorruptionKind::ALL.len(), 16);
        for k in CorruptionKind::ALL {
            assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("blur".parse::<CorruptionKind>().is_err());
    }

    #[test]
    fn four_kinds_per_category() {
        for cat in [
            CorruptionCategory::Blur,
            CorruptionCategory::Noise,
            CorruptionCategory::Digital,
            CorruptionCategory::Weather,
        ] {
            let n = CorruptionKind::ALL.iter().filter(|k| k.category() == cat).count();
            assert_eq!(n, 4);
        }
    }

    #[test]
    fn severity_domain() {
        assert_eq!(Severity::new(0), Err(CorruptionError::InvalidSeverity(0)));
        assert_eq!(Severity::new(6), Err(CorruptionError::InvalidSeverity(6)));
        assert!(CorruptionSpec::new(CorruptionKind::Brightness, 0, 1).is_err());
        assert!(serde_json::from_str::<Severity>("9").is_err());
        assert_eq!(parse_setting("fog:3").unwrap(), (CorruptionKind::Fog, Severity(3)));
        assert!(parse_setting("fog").is_err());
        assert!(parse_setting("fog:x").is_err());
    }

    #[test]
    fn params_table_is_total_and_monotone_where_definitional() {
        for k in CorruptionKind::ALL {
            for s in Severity::all() {
                severity_params(k, s);
            }
        }
        let series = |k, f: fn(SeverityParams) -> f64| -> Vec<f64> {
            Severity::all().map(|s| f(severity_params(k, s))).collect()
        };
        let sigma = series(CorruptionKind::GaussianNoise, |p| match p {
            SeverityParams::GaussianNoise { sigma } => sigma,
            _ => unreachable!(),
        });
        assert!(sigma.windows(2).all(|w| w[0] < w[1]));
        let quality = series(CorruptionKind::JpegCompression, |p| match p {
            SeverityParams::JpegCompression { quality } => quality as f64,
            _ => unreachable!(),
        });
        assert!(quality.windows(2).all(|w| w[0] > w[1]));
        let fog = series(CorruptionKind::Fog, |p| match p {
            SeverityParams::Fog { weight } => weight,
            _ => unreachable!(),
        });
        assert!(fog.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn deterministic_and_size_preserving() {
        let img = textured(3);
        for k in CorruptionKind::ALL {
            let spec = CorruptionSpec::new(k, 3, 42).unwrap();
            let a = corrupt(&img, &spec);
            let b = corrupt(&img, &spec);
            assert_eq!(a, b, "{k} not deterministic");
            assert_eq!(a.dimensions(), img.dimensions());
            assert_ne!(a, img, "{k} left the image untouched");
        }
    }

    #[test]
    fn digital_severity_one_stays_close_to_clean() {
        // Mean absolute deviation at most 30% of the clean mean intensity.
        let img = textured(9);
        let mean = img.as_bytes().iter().map(|&v| v as f64).sum::<f64>() / img.as_bytes().len() as f64;
        for k in CorruptionKind::ALL.into_iter().filter(|k| k.category() == CorruptionCategory::Digital) {
            let mad = corrupt(&img, &CorruptionSpec::new(k, 1, 3).unwrap()).mean_abs_diff(&img);
            assert!(mad <= 0.3 * mean, "{k}: {mad} vs mean {mean}");
        }
    }

    #[test]
    fn noise_depends_on_seed() {
        let img = textured(5);
        let a = corrupt(&img, &CorruptionSpec::new(CorruptionKind::GaussianNoise, 2, 1).unwrap());
        let b = corrupt(&img, &CorruptionSpec::new(CorruptionKind::GaussianNoise, 2, 2).unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(rgb.0, rgb.1, rgb.2);
            let (r, g, b) = hsv_to_rgb(h, s, v);
            assert!((r - rgb.0).abs() < 1e-5 && (g - rgb.1).abs() < 1e-5 && (b - rgb.2).abs() < 1e-5);
        }
    }

    #[test]
    fn kernels_sum_to_one() {
        for taps in [disk_kernel(3.5), line_kernel(13.0, 30.0)] {
            let s: f32 = taps.iter().map(|t| t.2).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        let g: f32 = gaussian_kernel(2.2).iter().map(|t| t.1).sum();
        assert!((g - 1.0).abs() < 1e-5);
    }
}

//! Seeded synthetic panoramas for dataset-free runs.
//!
//! Patterns are generated on the sphere, not in image space, so texture
//! density does not collapse towards the poles and the seam at yaw 180 is
//! invisible.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::projection::{EquirectImage, ProjectionError};
use crate::raster::{quantize, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Voronoi,
    FractalNoise,
    GridTags,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::Voronoi, SynthKind::FractalNoise, SynthKind::GridTags];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Voronoi => "voronoi",
            SynthKind::FractalNoise => "fractal-noise",
            SynthKind::GridTags => "grid-tags",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown synthetic kind {s:?}"))
    }
}

/// Unit direction of an equirect sample point, in the camera convention
/// (+x right, +y down, +z forward at yaw 0).
fn direction(u: f64, v: f64, w: usize, h: usize) -> [f64; 3] {
    let alpha = u / w as f64 * std::f64::consts::TAU - std::f64::consts::PI;
    let beta_down = v / h as f64 * std::f64::consts::PI - std::f64::consts::FRAC_PI_2;
    let (sb, cb) = beta_down.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [cb * sa, sb, cb * ca]
}

/// Shades every pixel from `ss x ss` sub-samples.
fn shade(w: usize, h: usize, ss: usize, f: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> RgbImage {
    let mut data = vec![0u8; w * h * 3];
    data.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let u = x as f64 + (sx as f64 + 0.5) / ss as f64;
                    let v = y as f64 + (sy as f64 + 0.5) / ss as f64;
                    let c = f(direction(u, v, w, h));
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            let n = (ss * ss) as f64;
            for k in 0..3 {
                row[x * 3 + k] = quantize(acc[k] / n);
            }
        }
    });
    RgbImage::from_raw(w, h, data).expect("sized above")
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)]
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = mix64(seed ^ mix64(x as u64 ^ mix64(y as u64 ^ mix64(z as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise in [0, 1] with smoothstep weights.
fn value_noise(seed: u64, p: [f64; 3]) -> f64 {
    let cell = p.map(|v| v.floor());
    let t = [0, 1, 2].map(|k| {
        let f = p[k] - cell[k];
        f * f * (3.0 - 2.0 * f)
    });
    let c = cell.map(|v| v as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let wgt: f64 = (0..3).map(|k| if o[k] == 1 { t[k] } else { 1.0 - t[k] }).product();
        acc += wgt * lattice(seed, c[0] + o[0] as i64, c[1] + o[1] as i64, c[2] + o[2] as i64);
    }
    acc
}

fn fbm(seed: u64, p: [f64; 3], octaves: u32) -> f64 {
    let (mut amp, mut freq, mut acc, mut norm) = (1.0, 1.0, 0.0, 0.0);
    for o in 0..octaves {
        acc += amp * value_noise(seed.wrapping_add(o as u64 * 7919), p.map(|v| v * freq));
        norm += amp;
        amp *= 0.55;
        freq *= 2.03;
    }
    acc / norm
}

fn fractal_noise(w: usize, h: usize, seed: u64) -> RgbImage {
    let base = mix64(seed);
    shade(w, h, 1, |d| {
        let p = d.map(|v| v * 6.0);
        [0u64, 1, 2].map(|c| {
            let n = fbm(base.wrapping_add(c * 1_000_003), p, 7);
            // stretch contrast around the mean of the sum
            (((n - 0.5) * 2.6 + 0.5).clamp(0.0, 1.0)) * 255.0
        })
    })
}

fn voronoi(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 600;
    let sites: Vec<([f64; 3], [f64; 3])> = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            ([r * phi.cos(), z, r * phi.sin()], random_color(&mut rng))
        })
        .collect();
    let noise_seed = rng.random::<u64>();
    shade(w, h, 2, |d| {
        let (mut best, mut second, mut color) = (f64::MAX, f64::MAX, [0.0; 3]);
        for (s, c) in &sites {
            let dd = (d[0] - s[0]).powi(2) + (d[1] - s[1]).powi(2) + (d[2] - s[2]).powi(2);
            if dd < best {
                second = best;
                best = dd;
                color = *c;
            } else if dd < second {
                second = dd;
            }
        }
        let edge = ((second.sqrt() - best.sqrt()) * 250.0).min(1.0);
        let grain = 0.75 + 0.5 * value_noise(noise_seed, d.map(|v| v * 40.0));
        color.map(|c| (c * edge * grain).min(255.0))
    })
}

/// Cube face and face coordinates in `[-1, 1]` for a direction.
fn cube_coords(d: [f64; 3]) -> (usize, f64, f64) {
    let [x, y, z] = d;
    let (ax, ay, az) = (x.abs(), y.abs(), z.abs());
    if ax >= ay && ax >= az {
        if x > 0.0 {
            (0, -z / ax, y / ax)
        } else {
            (1, z / ax, y / ax)
        }
    } else if ay >= az {
        if y > 0.0 {
            (2, x / ay, -z / ay)
        } else {
            (3, x / ay, z / ay)
        }
    } else if z > 0.0 {
        (4, x / az, y / az)
    } else {
        (5, -x / az, y / az)
    }
}

/// Cells per cube-face edge.
const TAG_CELLS: usize = 9;
/// Modules per tag edge: a one-module border around a random code.
const TAG_MODULES: usize = 6;

struct Tag {
    code: u64,
    fg: [f64; 3],
    bg: [f64; 3],
}

fn grid_tags(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = TAG_MODULES - 2;
    let tags: Vec<Tag> = (0..6 * TAG_CELLS * TAG_CELLS)
        .map(|_| {
            let fg = random_color(&mut rng);
            // background well separated from the foreground in luma
            let luma = 0.299 * fg[0] + 0.587 * fg[1] + 0.114 * fg[2];
            let bg_level = if luma > 128.0 { rng.random_range(0.0..50.0) } else { rng.random_range(205.0..255.0) };
            let tint = random_color(&mut rng);
            let bg = tint.map(|t| 0.7 * bg_level + 0.3 * t);
            Tag {
                code: rng.random::<u64>() & ((1u64 << (inner * inner)) - 1),
                fg,
                bg,
            }
        })
        .collect();
    shade(w, h, 3, |d| {
        let (face, a, b) = cube_coords(d);
        let fa = ((a + 1.0) / 2.0 * TAG_CELLS as f64).clamp(0.0, TAG_CELLS as f64 - 1e-9);
        let fb = ((b + 1.0) / 2.0 * TAG_CELLS as f64).clamp(0.0, TAG_CELLS as f64 - 1e-9);
        let (ca, cb) = (fa as usize, fb as usize);
        let tag = &tags[(face * TAG_CELLS + cb) * TAG_CELLS + ca];
        // tag occupies the middle 80% of its cell; gutter uses the background
        let (la, lb) = ((fa - ca as f64 - 0.1) / 0.8, (fb - cb as f64 - 0.1) / 0.8);
        if !(0.0..1.0).contains(&la) || !(0.0..1.0).contains(&lb) {
            return tag.bg;
        }
        let (ma, mb) = ((la * TAG_MODULES as f64) as usize, (lb * TAG_MODULES as f64) as usize);
        let on_border = ma == 0 || mb == 0 || ma == TAG_MODULES - 1 || mb == TAG_MODULES - 1;
        let bit = !on_border && (tag.code >> ((mb - 1) * inner + (ma - 1))) & 1 == 1;
        if on_border || bit {
            tag.fg
        } else {
            tag.bg
        }
    })
}

/// Deterministic panorama of the given kind. Width must be twice the height.
pub fn synth_panorama(kind: SynthKind, width: usize, height: usize, seed: u64) -> Result<EquirectImage, ProjectionError> {
    if width != 2 * height || height == 0 {
        return Err(ProjectionError::BadAspect { width, height });
    }
    let img = match kind {
        SynthKind::Voronoi => voronoi(width, height, seed),
        SynthKind::FractalNoise => fractal_noise(width, height, seed),
        SynthKind::GridTags => grid_tags(width, height, seed),
    };
    EquirectImage::new(img)
}

/// Parsed `synth:<kind>:<seed>[:<W>x<H>]` panorama id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthId {
    pub kind: SynthKind,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
}

impl SynthId {
    pub const DEFAULT_SIZE: (usize, usize) = (1024, 512);

    pub fn new(kind: SynthKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            width: Self::DEFAULT_SIZE.0,
            height: Self::DEFAULT_SIZE.1,
        }
    }

    pub fn parse(id: &str) -> Option<Self> {
        let mut parts = id.split(':');
        if parts.next()? != "synth" {
            return None;
        }
        let kind = parts.next()?.parse().ok()?;
        let seed = parts.next()?.parse().ok()?;
        let (width, height) = match parts.next() {
            None => Self::DEFAULT_SIZE,
            Some(size) => {
                let (w, h) = size.split_once('x')?;
                (w.parse().ok()?, h.parse().ok()?)
            }
        };
        if parts.next().is_some() {
            return None;
        }
        Some(Self {
            kind,
            seed,
            width,
            height,
        })
    }

    pub fn render(&self) -> Result<EquirectImage, ProjectionError> {
        synth_panorama(self.kind, self.width, self.height, self.seed)
    }
}

impl fmt::Display for SynthId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "synth:{}:{}", self.kind, self.seed)?;
        if (self.width, self.height) != Self::DEFAULT_SIZE {
            write!(f, ":{}x{}", self.width, self.height)?;
        }
        Ok(())
    }
}

//! Single-scale ORB-style features: FAST-9 corners, Harris ranking,
//! intensity-centroid orientation and steered BRIEF descriptors.

use std::sync::OnceLock;

use crate::raster::GrayImage;

use super::pattern::BIT_PATTERN_31;
use super::{DescriptorSet, Features, Keypoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbConfig {
    pub fast_threshold: u8,
    pub max_features: usize,
    /// Pixels kept clear of the image edge.
    pub border: usize,
    pub harris_block: usize,
    pub harris_k: f64,
    pub patch_radius: i32,
    pub blur_sigma: f64,
    /// Blur kernel half-width.
    pub blur_radius: usize,
}

impl Default for OrbConfig {
    fn default() -> Self {
        Self {
            fast_threshold: 20,
            max_features: 1000,
            border: 19,
            harris_block: 7,
            harris_k: 0.04,
            patch_radius: 15,
            blur_sigma: 2.0,
            blur_radius: 3,
        }
    }
}

/// Bresenham circle of radius 3, clockwise from the top.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Largest threshold at which the pixel at `i` is still a FAST-9 corner,
/// or 0.
///
/// The score is the max over all 9-pixel arcs of the smallest brightness
/// difference along the arc, for the brighter and darker case separately.
fn fast_score(data: &[u8], i: usize, ring: &[isize; 16]) -> u8 {
    let c = data[i] as i16;
    let d: [i16; 16] = std::array::from_fn(|k| data[(i as isize + ring[k]) as usize] as i16 - c);
    let mut best = 0i16;
    for start in 0..16 {
        let mut bright = i16::MAX;
        let mut dark = i16::MAX;
        for k in 0..9 {
            let v = d[(start + k) & 15];
            bright = bright.min(v);
            dark = dark.min(-v);
        }
        best = best.max(bright).max(dark);
    }
    best.max(0) as u8
}

fn ring_offsets(width: usize) -> [isize; 16] {
    std::array::from_fn(|k| CIRCLE[k].1 as isize * width as isize + CIRCLE[k].0 as isize)
}

/// Whether a 16-bit ring mask holds 9 consecutive set bits, circularly.
#[inline]
fn has_arc9(mask: u32) -> bool {
    let m = mask | (mask << 16);
    let mut run = m;
    for k in 1..9 {
        run &= m >> k;
    }
    run != 0
}

fn fast_corners(img: &GrayImage, threshold: u8, border: usize) -> Vec<(usize, usize, u8)> {
    let (w, h) = (img.width(), img.height());
    let edge = border.max(3);
    if w <= 2 * edge || h <= 2 * edge {
        return Vec::new();
    }
    let data = img.as_bytes();
    let ring = ring_offsets(w);
    let t = threshold as i16;
    let mut scores = vec![0u8; w * h];
    for y in edge..h - edge {
        for x in edge..w - edge {
            let i = y * w + x;
            let c = data[i] as i16;
            let at = |k: usize| data[(i as isize + ring[k]) as usize] as i16;
            // A 9-arc covers one of the vertical compass pixels (0, 8) and
            // one of the horizontal ones (4, 12). Flat areas fail the first
            // test after two loads.
            let (hi, lo) = (c + t, c - t);
            let (v0, v8) = (at(0), at(8));
            let (b_vert, d_vert) = (v0 > hi || v8 > hi, v0 < lo || v8 < lo);
            if !b_vert && !d_vert {
                continue;
            }
            let (v4, v12) = (at(4), at(12));
            let b_ok = b_vert && (v4 > hi || v12 > hi);
            let d_ok = d_vert && (v4 < lo || v12 < lo);
            if !b_ok && !d_ok {
                continue;
            }
            let (mut bm, mut dm) = (0u32, 0u32);
            for k in 0..16 {
                let v = at(k);
                bm |= ((v > c + t) as u32) << k;
                dm |= ((v < c - t) as u32) << k;
            }
            if has_arc9(bm) || has_arc9(dm) {
                scores[i] = fast_score(data, i, &ring);
            }
        }
    }
    let mut out = Vec::new();
    for y in edge..h - edge {
        for x in edge..w - edge {
            let s = scores[y * w + x];
            if s == 0 {
                continue;
            }
            let mut is_max = true;
            'nms: for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    if (nx, ny) == (x, y) {
                        continue;
                    }
                    let n = scores[ny * w + nx];
                    // ties go to the earlier pixel in scan order
                    if n > s || (n == s && (ny, nx) < (y, x)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                out.push((x, y, s));
            }
        }
    }
    out
}

fn harris_response(img: &GrayImage, x: usize, y: usize, block: usize, k: f64) -> f64 {
    let w = img.width() as isize;
    let data = img.as_bytes();
    let r = (block / 2) as isize;
    let (mut a, mut b, mut c) = (0i64, 0i64, 0i64);
    for dy in -r..=r {
        for dx in -r..=r {
            let i = (y as isize + dy) * w + x as isize + dx;
            let p = |o: isize| data[(i + o) as usize] as i64;
            let ix = (p(1) - p(-1)) * 2 + (p(1 - w) - p(-1 - w)) + (p(1 + w) - p(-1 + w));
            let iy = (p(w) - p(-w)) * 2 + (p(w - 1) - p(-w - 1)) + (p(w + 1) - p(-w + 1));
            a += ix * ix;
            b += iy * iy;
            c += ix * iy;
        }
    }
    let scale = 1.0 / (4.0 * block as f64 * 255.0);
    let (a, b, c) = (a as f64 * scale * scale, b as f64 * scale * scale, c as f64 * scale * scale);
    a * b - c * c - k * (a + b) * (a + b)
}

/// Half-widths of the rows of a disc.
fn disc_spans(radius: i32) -> Vec<i32> {
    (-radius..=radius)
        .map(|dy| ((radius * radius - dy * dy) as f64).sqrt() as i32)
        .collect()
}

/// Per-row prefix sums of `I` and `x * I`, for intensity-centroid moments.
struct RowMoments {
    width: usize,
    sum: Vec<i64>,
    xsum: Vec<i64>,
}

impl RowMoments {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let data = img.as_bytes();
        let mut sum = vec![0i64; (w + 1) * h];
        let mut xsum = vec![0i64; (w + 1) * h];
        for y in 0..h {
            let (row, base) = (&data[y * w..(y + 1) * w], y * (w + 1));
            for x in 0..w {
                sum[base + x + 1] = sum[base + x] + row[x] as i64;
                xsum[base + x + 1] = xsum[base + x] + x as i64 * row[x] as i64;
            }
        }
        Self { width: w, sum, xsum }
    }

    /// Sums of `I` and `x * I` over columns `x0..=x1` of row `y`.
    #[inline]
    fn row(&self, y: usize, x0: usize, x1: usize) -> (i64, i64) {
        let base = y * (self.width + 1);
        (
            self.sum[base + x1 + 1] - self.sum[base + x0],
            self.xsum[base + x1 + 1] - self.xsum[base + x0],
        )
    }
}

fn orientation(moments: &RowMoments, x: usize, y: usize, spans: &[i32]) -> f64 {
    let radius = (spans.len() / 2) as i32;
    let (mut m01, mut m10) = (0i64, 0i64);
    for (row, &span) in spans.iter().enumerate() {
        let dy = row as i32 - radius;
        let yy = (y as i32 + dy) as usize;
        let (s, xs) = moments.row(yy, x - span as usize, x + span as usize);
        m10 += xs - x as i64 * s;
        m01 += dy as i64 * s;
    }
    (m01 as f64).atan2(m10 as f64)
}

/// Normalized Gaussian taps, `2 * radius + 1` long.
fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i32;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamped edges.
pub fn gaussian_blur(img: &GrayImage, sigma: f64, radius: usize) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let data = img.as_bytes();
    let k: Vec<f32> = gaussian_kernel(sigma, radius).into_iter().map(|v| v as f32).collect();
    let r = radius as isize;
    let (wi, hi) = (w as isize, h as isize);
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for x in 0..w {
            let xi = x as isize;
            out[x] = if xi >= r && xi + r < wi {
                let win = &row[x - radius..=x + radius];
                k.iter().zip(win).map(|(kv, &p)| kv * p as f32).sum()
            } else {
                k.iter()
                    .enumerate()
                    .map(|(i, kv)| kv * row[(xi + i as isize - r).clamp(0, wi - 1) as usize] as f32)
                    .sum()
            };
        }
    }
    let mut out = vec![0u8; w * h];
    let mut acc = vec![0f32; w];
    for y in 0..h {
        acc.fill(0.0);
        for (i, kv) in k.iter().enumerate() {
            let yy = (y as isize + i as isize - r).clamp(0, hi - 1) as usize;
            for (a, &v) in acc.iter_mut().zip(&tmp[yy * w..(yy + 1) * w]) {
                *a += kv * v;
            }
        }
        for (o, &a) in out[y * w..(y + 1) * w].iter_mut().zip(&acc) {
            *o = crate::raster::quantize(a as f64);
        }
    }
    GrayImage::from_raw(w, h, out).expect("sized above")
}

const ANGLE_BINS: usize = 360;

/// Largest coordinate magnitude in any rotated pattern: the base pattern
/// lies in [-15, 15], and 15 * sqrt(2) rounds to 21.
const PATTERN_REACH: i32 = 21;

/// The sampling pattern rotated to each whole degree.
fn rotated_patterns() -> &'static [[[i8; 4]; 256]] {
    static TABLE: OnceLock<Vec<[[i8; 4]; 256]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..ANGLE_BINS)
            .map(|bin| {
                let (s, c) = (bin as f64).to_radians().sin_cos();
                let rot = |px: i8, py: i8| {
                    let (px, py) = (px as f64, py as f64);
                    ((c * px - s * py).round() as i8, (s * px + c * py).round() as i8)
                };
                std::array::from_fn(|k| {
                    let p = BIT_PATTERN_31[k];
                    let (ax, ay) = rot(p[0], p[1]);
                    let (bx, by) = rot(p[2], p[3]);
                    [ax, ay, bx, by]
                })
            })
            .collect()
    })
}

/// Binary tests `I(a) < I(b)` over the pattern steered to the nearest degree.
fn steered_brief(blurred: &GrayImage, x: usize, y: usize, angle: f64, out: &mut [u64]) {
    let bin = (angle.to_degrees().round() as i64).rem_euclid(ANGLE_BINS as i64) as usize;
    let pattern = &rotated_patterns()[bin];
    let (w, h) = (blurred.width() as i32, blurred.height() as i32);
    let data = blurred.as_bytes();
    out.fill(0);
    let (xi, yi) = (x as i32, y as i32);
    if xi >= PATTERN_REACH && yi >= PATTERN_REACH && xi + PATTERN_REACH < w && yi + PATTERN_REACH < h {
        // Whole pattern inside the image: plain offsets, no clamping.
        let base = (yi * w + xi) as isize;
        let at = |dx: i8, dy: i8| data[(base + dy as isize * w as isize + dx as isize) as usize];
        for (bit, p) in pattern.iter().enumerate() {
            if at(p[0], p[1]) < at(p[2], p[3]) {
                out[bit / 64] |= 1u64 << (bit % 64);
            }
        }
        return;
    }
    let sample = |dx: i8, dy: i8| {
        let xx = (xi + dx as i32).clamp(0, w - 1);
        let yy = (yi + dy as i32).clamp(0, h - 1);
        data[(yy * w + xx) as usize]
    };
    for (bit, p) in pattern.iter().enumerate() {
        if sample(p[0], p[1]) < sample(p[2], p[3]) {
            out[bit / 64] |= 1u64 << (bit % 64);
        }
    }
}

/// Deterministic: identical images give identical keypoints and descriptors.
pub fn detect_and_compute(img: &GrayImage, cfg: &OrbConfig) -> Features {
    let border = cfg.border.max(cfg.patch_radius as usize + 1).max(cfg.harris_block / 2 + 2);
    let mut corners: Vec<(usize, usize, f64)> = fast_corners(img, cfg.fast_threshold, border)
        .into_iter()
        .map(|(x, y, _)| (x, y, harris_response(img, x, y, cfg.harris_block, cfg.harris_k)))
        .collect();
    corners.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    corners.truncate(cfg.max_features);

    let blurred = gaussian_blur(img, cfg.blur_sigma, cfg.blur_radius);
    let spans = disc_spans(cfg.patch_radius);
    let moments = RowMoments::new(img);
    let mut keypoints = Vec::with_capacity(corners.len());
    let mut descriptors = DescriptorSet::new(256);
    let mut bits = [0u64; 4];
    for (x, y, response) in corners {
        let angle = orientation(&moments, x, y, &spans);
        steered_brief(&blurred, x, y, angle, &mut bits);
        descriptors.push(&bits);
        keypoints.push(Keypoint {
            x: x as f64 + 0.5,
            y: y as f64 + 0.5,
            angle,
            response,
        });
    }
    Features {
        keypoints,
        descriptors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Board inset on a mid-grey frame. Ideal X-junctions are not FAST
    /// corners; the board's outline corners are.
    fn checkerboard(n: usize, cell: usize, margin: usize) -> GrayImage {
        GrayImage::from_fn(n, n, |x, y| {
            if x < margin || y < margin || x >= n - margin || y >= n - margin {
                125
            } else if ((x - margin) / cell + (y - margin) / cell) % 2 == 0 {
                30
            } else {
                220
            }
        })
    }

    #[test]
    fn rotated_patterns_stay_within_reach() {
        let reach = rotated_patterns().iter().flatten().flatten().map(|v| (*v as i32).abs()).max();
        assert!(reach.unwrap() <= PATTERN_REACH);
    }

    #[test]
    fn uniform_image_has_no_keypoints() {
        let f = detect_and_compute(&GrayImage::from_fn(128, 128, |_, _| 90), &OrbConfig::default());
        assert!(f.keypoints.is_empty());
        assert_eq!(f.descriptors.len(), 0);
    }

    #[test]
    fn blob_corners_are_found() {
        // isolated bright squares have FAST corners at their vertices
        let img = GrayImage::from_fn(128, 128, |x, y| {
            if (x % 32) >= 12 && (x % 32) < 20 && (y % 32) >= 12 && (y % 32) < 20 {
                230
            } else {
                20
            }
        });
        let f = detect_and_compute(&img, &OrbConfig::default());
        assert!(!f.keypoints.is_empty());
        for k in &f.keypoints {
            assert!(k.x >= 19.0 && k.x < 109.0 && k.y >= 19.0 && k.y < 109.0);
        }
    }

    #[test]
    fn checkerboard_keypoints_exist_and_are_deterministic() {
        let img = checkerboard(256, 16, 32);
        let a = detect_and_compute(&img, &OrbConfig::default());
        let b = detect_and_compute(&img, &OrbConfig::default());
        assert!(!a.keypoints.is_empty());
        assert!(detect_and_compute(&checkerboard(256, 16, 0), &OrbConfig::default()).is_empty());
        assert_eq!(a.keypoints, b.keypoints);
        assert_eq!(a.descriptors, b.descriptors);
    }

    #[test]
    fn fast_score_brighter_arc() {
        // centre 100, nine consecutive circle pixels at 150, the rest at 100
        let mut img = GrayImage::from_fn(9, 9, |_, _| 100);
        for (dx, dy) in CIRCLE.iter().take(9) {
            img.set((4 + dx) as usize, (4 + dy) as usize, 150);
        }
        let ring = ring_offsets(9);
        assert_eq!(fast_score(img.as_bytes(), 40, &ring), 50);
        img.set(4, 1, 100);
        // arc broken at position 0: the eight remaining brights cannot form 9
        assert_eq!(fast_score(img.as_bytes(), 40, &ring), 0);
    }

    #[test]
    fn orientation_points_to_bright_side() {
        let img = GrayImage::from_fn(64, 64, |x, _| if x > 32 { 200 } else { 10 });
        let spans = disc_spans(15);
        assert!(orientation(&RowMoments::new(&img), 32, 32, &spans).abs() < 1e-9);
        let img = GrayImage::from_fn(64, 64, |_, y| if y > 32 { 200 } else { 10 });
        let a = orientation(&RowMoments::new(&img), 32, 32, &spans);
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn arc_masks() {
        assert!(has_arc9(0b1_1111_1111));
        assert!(!has_arc9(0b1111_1111));
        // wraps from bit 15 to bit 0
        assert!(has_arc9(0xf000 | 0x1f));
        assert!(!has_arc9(0xf000 | 0x0f));
        assert!(!has_arc9(0b0101_0101_0101_0101));
    }

    #[test]
    fn zero_angle_pattern_is_the_published_one() {
        assert_eq!(&rotated_patterns()[0][..], &BIT_PATTERN_31[..]);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = GrayImage::from_fn(20, 10, |_, _| 77);
        assert_eq!(gaussian_blur(&img, 2.0, 3), img);
    }
}

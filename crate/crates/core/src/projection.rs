//! Equirectangular-to-perspective rendering.
//!
//! Conventions:
//!
//! * Camera frame is right-handed with `+x` right, `+y` down and `+z`
//!   forward at the identity rotation.
//! * A rotation is a pitch about the camera's horizontal axis followed by a
//!   yaw about the world vertical axis (`R = R_yaw * R_pitch`), so views never
//!   roll. Positive pitch looks up, positive yaw looks right.
//! * Perspective pixel `(i, j)` is sampled through the continuous image
//!   coordinate `(i + 0.5, j + 0.5)`; the principal point sits at
//!   `(W / 2, H / 2)`.
//! * Panorama columns map yaw `(-180, 180]` onto `[0, W)`, rows map the
//!   downward latitude `[-90, 90]` onto `[0, H]` (row 0 is straight up).
//!   Horizontal sampling wraps, vertical sampling clamps.

use std::collections::VecDeque;
use std::ops::Deref;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use thiserror::Error;

use crate::raster::{quantize, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("field of view must lie in (0, 180) degrees, got {0}")]
    InvalidFov(f64),
    #[error("image size must be non-zero, got {width}x{height}")]
    InvalidSize { width: usize, height: usize },
    #[error("equirectangular image must be 2:1, got {width}x{height}")]
    BadAspect { width: usize, height: usize },
    #[error("pitch must lie in [-90, 90] degrees, got {0}")]
    InvalidPitch(f64),
    #[error("batch lists differ in length: {panoramas} panoramas, {rotations} rotations")]
    LengthMismatch { panoramas: usize, rotations: usize },
}

/// A rendered perspective view.
pub type PerspImage = RgbImage;

/// A full 360x180 degree panorama, `width == 2 * height`.
#[derive(Clone, PartialEq, Eq)]
pub struct EquirectImage(RgbImage);

impl std::fmt::Debug for EquirectImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "EquirectImage({}x{})", self.0.width(), self.0.height())
    }
}

impl EquirectImage {
    pub fn new(img: RgbImage) -> Result<Self, ProjectionError> {
        let (width, height) = img.dimensions();
        if width < 2 || width != 2 * height {
            return Err(ProjectionError::BadAspect { width, height });
        }
        Ok(Self(img))
    }

    pub fn into_inner(self) -> RgbImage {
        self.0
    }

    /// Panorama with every column moved `k` places to the left (wrapping).
    pub fn shift_columns_left(&self, k: usize) -> Self {
        let (w, h) = self.0.dimensions();
        Self(RgbImage::from_fn(w, h, |x, y| self.0.pixel((x + k) % w, y)))
    }
}

impl Deref for EquirectImage {
    type Target = RgbImage;

    fn deref(&self) -> &RgbImage {
        &self.0
    }
}

/// Pinhole intrinsics for a perspective view with horizontal FoV `fov_deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fov_deg: f64,
    width: usize,
    height: usize,
}

impl CameraIntrinsics {
    pub fn new(fov_deg: f64, width: usize, height: usize) -> Result<Self, ProjectionError> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(ProjectionError::InvalidFov(fov_deg));
        }
        if width == 0 || height == 0 {
            return Err(ProjectionError::InvalidSize { width, height });
        }
        Ok(Self {
            fov_deg,
            width,
            height,
        })
    }

    pub fn fov_deg(&self) -> f64 {
        self.fov_deg
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Focal length in pixels, `W / (2 tan(fov / 2))`.
    pub fn focal(&self) -> f64 {
        self.width as f64 / (2.0 * (self.fov_deg * std::f64::consts::PI / 180.0 / 2.0).tan())
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

pub fn make_intrinsics(
    fov_deg: f64,
    width: usize,
    height: usize,
) -> Result<CameraIntrinsics, ProjectionError> {
    CameraIntrinsics::new(fov_deg, width, height)
}

/// Viewing direction in degrees, canonical: pitch in `[-90, 90]`, yaw in
/// `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewRotation {
    pub pitch: f64,
    pub yaw: f64,
}

impl ViewRotation {
    /// Wraps `yaw` into `(-180, 180]`; rejects pitch outside `[-90, 90]`.
    pub fn new(pitch: f64, yaw: f64) -> Result<Self, ProjectionError> {
        if !(-90.0..=90.0).contains(&pitch) {
            return Err(ProjectionError::InvalidPitch(pitch));
        }
        Ok(Self {
            pitch,
            yaw: wrap_yaw(yaw),
        })
    }

    pub fn identity() -> Self {
        Self {
            pitch: 0.0,
            yaw: 0.0,
        }
    }

    /// Row-major `R_yaw * R_pitch`.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let (sp, cp) = self.pitch.to_radians().sin_cos();
        let (sy, cy) = self.yaw.to_radians().sin_cos();
        // R_pitch = [[1, 0, 0], [0, cp, -sp], [0, sp, cp]]
        // R_yaw   = [[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]]
        [
            [cy, sy * sp, sy * cp],
            [0.0, cp, -sp],
            [-sy, cy * sp, cy * cp],
        ]
    }
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_yaw(yaw: f64) -> f64 {
    let r = yaw.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Unit ray direction in the world frame (`+y` down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereDirection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SphereDirection {
    pub fn normalized(x: f64, y: f64, z: f64) -> Self {
        let n = (x * x + y * y + z * z).sqrt();
        Self {
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Yaw (full-quadrant arctangent) and upward pitch of the ray, degrees.
    pub fn yaw_pitch(&self) -> (f64, f64) {
        let yaw = self.x.atan2(self.z).to_degrees();
        let pitch = (-self.y).clamp(-1.0, 1.0).asin().to_degrees();
        (yaw, pitch)
    }
}

/// World ray through continuous image coordinate `v = (v_i, v_j)`.
pub fn pixel_ray(v: (f64, f64), cam: &CameraIntrinsics, rot: &ViewRotation) -> SphereDirection {
    let f = cam.focal();
    let (cx, cy) = cam.principal_point();
    let d = [(v.0 - cx) / f, (v.1 - cy) / f, 1.0];
    let r = rot.matrix();
    SphereDirection::normalized(
        r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
        r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
        r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
    )
}

/// Yaw and pitch (degrees) of the ray through continuous image coordinate
/// `v`. Pixel index `(i, j)` corresponds to `v = (i + 0.5, j + 0.5)`.
pub fn pixel_to_sphere(v: (f64, f64), cam: &CameraIntrinsics, rot: &ViewRotation) -> (f64, f64) {
    pixel_ray(v, cam, rot).yaw_pitch()
}

/// Continuous coordinate of the centre of pixel index `(i, j)`.
pub fn pixel_center(i: usize, j: usize) -> (f64, f64) {
    (i as f64 + 0.5, j as f64 + 0.5)
}

/// Panorama coordinate of a direction given as yaw `alpha` and downward
/// latitude `beta` (degrees; `beta = -pitch`). `u_i` is wrapped into
/// `[0, width)`.
pub fn sphere_to_equirect(alpha: f64, beta: f64, width: usize, height: usize) -> (f64, f64) {
    use std::f64::consts::PI;
    let w = width as f64;
    let ui = (alpha.to_radians() + PI) * (w / (2.0 * PI));
    let uj = (beta.to_radians() + PI / 2.0) * (height as f64 / PI);
    (ui.rem_euclid(w), uj)
}

/// Bilinear sample at fractional panorama coordinate `u`. Columns wrap,
/// rows clamp to `[0, H - 1]`. Returns unquantized channel values.
pub fn bilinear_sample(img: &RgbImage, u: (f64, f64)) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let uj = u.1.clamp(0.0, (h - 1) as f64);
    let i0f = u.0.floor();
    let j0f = uj.floor();
    let fx = u.0 - i0f;
    let fy = uj - j0f;
    let i0 = (i0f as i64).rem_euclid(w as i64) as usize;
    let i1 = (i0 + 1) % w;
    let j0 = j0f as usize;
    let j1 = (j0 + 1).min(h - 1);
    let data = img.as_bytes();
    let at = |x: usize, y: usize, c: usize| data[(y * w + x) * 3 + c] as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = at(i0, j0, c) * (1.0 - fx) + at(i1, j0, c) * fx;
        let bottom = at(i0, j1, c) * (1.0 - fx) + at(i1, j1, c) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

const PARALLEL_MIN_PIXELS: usize = 4096;
const PITCH_CACHE: usize = 4;

/// Per-pixel `(yaw, downward latitude)` in degrees for one pitch at yaw 0.
type AngleTable = Arc<Vec<[f64; 2]>>;

/// Renders views for one camera.
///
/// Yaw is applied last, so it only offsets the longitude of every ray. The
/// renderer keeps angle tables for the few most recent pitches and a yaw-only
/// move costs one lookup per pixel. Output is a pure function of the
/// rotation whether or not its table was cached.
pub struct PerspectiveRenderer {
    cam: CameraIntrinsics,
    rays: Vec<[f64; 3]>,
    tables: Mutex<VecDeque<(u64, AngleTable)>>,
}

impl std::fmt::Debug for PerspectiveRenderer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerspectiveRenderer").field("cam", &self.cam).finish_non_exhaustive()
    }
}

impl Clone for PerspectiveRenderer {
    fn clone(&self) -> Self {
        Self {
            cam: self.cam,
            rays: self.rays.clone(),
            tables: Mutex::default(),
        }
    }
}

impl PerspectiveRenderer {
    pub fn new(cam: CameraIntrinsics) -> Self {
        let f = cam.focal();
        let (cx, cy) = cam.principal_point();
        let mut rays = Vec::with_capacity(cam.width * cam.height);
        for j in 0..cam.height {
            for i in 0..cam.width {
                let (vi, vj) = pixel_center(i, j);
                let (x, y) = ((vi - cx) / f, (vj - cy) / f);
                let n = (x * x + y * y + 1.0).sqrt();
                rays.push([x / n, y / n, 1.0 / n]);
            }
        }
        Self {
            cam,
            rays,
            tables: Mutex::default(),
        }
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.cam
    }

    fn angles(&self, pitch: f64) -> AngleTable {
        let key = pitch.to_bits();
        let mut tables = self.tables.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, t)) = tables.iter().find(|(k, _)| *k == key) {
            return t.clone();
        }
        let r = ViewRotation { pitch, yaw: 0.0 }.matrix();
        let angle = |d: &[f64; 3]| {
            let x = r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2];
            let y = r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2];
            let z = r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2];
            [x.atan2(z).to_degrees(), y.clamp(-1.0, 1.0).asin().to_degrees()]
        };
        // Columns i and W-1-i hold mirrored rays (the principal point is
        // centred), so the right half is the left half with yaw negated.
        let w = self.cam.width;
        let mut table = vec![[0.0; 2]; self.rays.len()];
        for (row, rays) in table.chunks_mut(w).zip(self.rays.chunks(w)) {
            for i in 0..w.div_ceil(2) {
                let a = angle(&rays[i]);
                row[i] = a;
                row[w - 1 - i] = [-a[0], a[1]];
            }
        }
        let table: AngleTable = Arc::new(table);
        if tables.len() == PITCH_CACHE {
            tables.pop_front();
        }
        tables.push_back((key, table.clone()));
        table
    }

    pub fn render(&self, img: &EquirectImage, rot: &ViewRotation) -> PerspImage {
        let (w, h) = (self.cam.width, self.cam.height);
        let (pw, ph) = img.dimensions();
        let angles = self.angles(rot.pitch);
        let mut out = vec![0u8; w * h * 3];
        let data = img.as_bytes();
        let (wf, sx, sy) = (pw as f64, pw as f64 / 360.0, ph as f64 / 180.0);
        let max_row = (ph - 1) as f64;
        // Inlined sphere_to_equirect + bilinear_sample. Both coordinates are
        // non-negative once wrapped and clamped, so truncation is floor; this
        // keeps libm calls out of the per-pixel loop.
        let fill_row = |(row, angles): (&mut [u8], &[[f64; 2]])| {
            for (px, a) in row.chunks_exact_mut(3).zip(angles) {
                let mut ui = (a[0] + rot.yaw + 180.0) * sx;
                while ui < 0.0 {
                    ui += wf;
                }
                while ui >= wf {
                    ui -= wf;
                }
                let uj = ((a[1] + 90.0) * sy).clamp(0.0, max_row);
                let (i0, j0) = ((ui as usize).min(pw - 1), uj as usize);
                let (fx, fy) = (ui - i0 as f64, uj - j0 as f64);
                let i1 = if i0 + 1 == pw { 0 } else { i0 + 1 };
                let j1 = (j0 + 1).min(ph - 1);
                let (a00, a10) = ((j0 * pw + i0) * 3, (j0 * pw + i1) * 3);
                let (a01, a11) = ((j1 * pw + i0) * 3, (j1 * pw + i1) * 3);
                for c in 0..3 {
                    let top = data[a00 + c] as f64 * (1.0 - fx) + data[a10 + c] as f64 * fx;
                    let bottom = data[a01 + c] as f64 * (1.0 - fx) + data[a11 + c] as f64 * fx;
                    px[c] = quantize(top * (1.0 - fy) + bottom * fy);
                }
            }
        };
        // Thread dispatch costs more than a tiny view.
        if w * h < PARALLEL_MIN_PIXELS {
            out.chunks_mut(w * 3).zip(angles.chunks(w)).for_each(fill_row);
        } else {
            out.par_chunks_mut(w * 3).zip(angles.par_chunks(w)).for_each(fill_row);
        }
        RgbImage::from_raw(w, h, out).expect("renderer allocates exact buffer")
    }
}

pub fn render_perspective(
    img: &EquirectImage,
    rot: &ViewRotation,
    cam: &CameraIntrinsics,
) -> PerspImage {
    PerspectiveRenderer::new(*cam).render(img, rot)
}

/// Renders `imgs[k]` at `rots[k]` for every `k`, in parallel, preserving
/// order.
pub fn render_batch(
    imgs: &[&EquirectImage],
    rots: &[ViewRotation],
    cam: &CameraIntrinsics,
) -> Result<Vec<PerspImage>, ProjectionError> {
    if imgs.len() != rots.len() {
        return Err(ProjectionError::LengthMismatch {
            panoramas: imgs.len(),
            rotations: rots.len(),
        });
    }
    let renderer = PerspectiveRenderer::new(*cam);
    Ok(imgs
        .par_iter()
        .zip(rots.par_iter())
        .map(|(img, rot)| renderer.render(img, rot))
        .collect())
}

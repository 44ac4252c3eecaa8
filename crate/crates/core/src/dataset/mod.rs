//! Panorama catalogs, splits, episode sets and synthetic panoramas.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruptions::{CorruptionSpec, CorruptionKind, Severity};
use crate::environment::{sample_episode, Difficulty, EnvError, EpisodeSpec, PanoramaSource, SamplerConfig};
use crate::projection::EquirectImage;
use crate::raster::RgbImage;

pub mod synth;

pub use synth::{synth_panorama, SynthId, SynthKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no image files under {0}")]
    EmptyDirectory(PathBuf),
    #[error("invalid split ratios {0:?}; need three positive values summing to 1")]
    BadRatios([f64; 3]),
    #[error("manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("duplicate panorama id {0:?}")]
    DuplicateId(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scene {
    Indoor,
    Outdoor,
    Synthetic,
    Unknown,
}

impl Scene {
    pub fn name(self) -> &'static str {
        match self {
            Scene::Indoor => "indoor",
            Scene::Outdoor => "outdoor",
            Scene::Synthetic => "synthetic",
            Scene::Unknown => "unknown",
        }
    }

    /// Guesses the tag from path components such as `indoor/` or `outdoor/`.
    fn from_path(rel: &Path) -> Scene {
        for c in rel.components() {
            match c.as_os_str().to_string_lossy().to_ascii_lowercase().as_str() {
                "indoor" => return Scene::Indoor,
                "outdoor" => return Scene::Outdoor,
                "synthetic" => return Scene::Synthetic,
                _ => {}
            }
        }
        Scene::Unknown
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scene {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Scene::Indoor, Scene::Outdoor, Scene::Synthetic, Scene::Unknown]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scene {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub scene: Scene,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PanoramaCatalog {
    /// Sorted by id.
    pub entries: Vec<CatalogEntry>,
    pub warnings: Vec<String>,
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_ascii_lowercase().as_str()))
}

/// Ids are paths relative to `dir` without extension, `/`-separated.
pub fn build_catalog(dir: &Path) -> Result<PanoramaCatalog, DatasetError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| DatasetError::Io(e.into()))?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(DatasetError::EmptyDirectory(dir.to_path_buf()));
    }
    let mut cat = PanoramaCatalog::default();
    for path in files {
        let rel = path.strip_prefix(dir).expect("walked under dir");
        let id = rel
            .with_extension("")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        match image::image_dimensions(&path) {
            Ok((w, h)) if w == 2 * h => cat.entries.push(CatalogEntry {
                id,
                scene: Scene::from_path(rel),
                path,
                width: w as usize,
                height: h as usize,
            }),
            Ok((w, h)) => cat.warnings.push(format!("{}: {w}x{h} is not 2:1, skipped", path.display())),
            Err(e) => cat.warnings.push(format!("{}: unreadable ({e}), skipped", path.display())),
        }
    }
    cat.entries.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in cat.entries.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(DatasetError::DuplicateId(pair[0].id.clone()));
        }
    }
    Ok(cat)
}

impl PanoramaCatalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// `id<TAB>path<TAB>scene`, one line per entry.
    pub fn to_manifest(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.id, e.path.display(), e.scene))
            .collect()
    }

    /// Reads a manifest; image dimensions are taken from the files.
    pub fn from_manifest(text: &str) -> Result<Self, DatasetError> {
        let mut cat = PanoramaCatalog::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| DatasetError::BadManifest { line: n + 1, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, path, scene] = fields[..] else {
                return Err(bad("expected three tab-separated fields".into()));
            };
            let scene = scene.parse().map_err(bad)?;
            let (w, h) = image::image_dimensions(path).map_err(|e| bad(e.to_string()))?;
            cat.entries.push(CatalogEntry {
                id: id.into(),
                path: path.into(),
                width: w as usize,
                height: h as usize,
                scene,
            });
        }
        cat.entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(cat)
    }

    fn subset(&self, ids: &[String]) -> PanoramaCatalog {
        let mut entries: Vec<CatalogEntry> = self
            .entries
            .iter()
            .filter(|e| ids.contains(&e.id))
            .cloned()
            .collect();
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        PanoramaCatalog {
            entries,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: PanoramaCatalog,
    pub val: PanoramaCatalog,
    pub test: PanoramaCatalog,
}

/// Seeded per-panorama shuffle, then partition by ratio. Test takes the
/// remainder.
pub fn split(catalog: &PanoramaCatalog, spec: &SplitSpec) -> Result<Split, DatasetError> {
    let r = spec.ratios;
    if r.iter().any(|v| !(*v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(r));
    }
    let mut ids = catalog.ids();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n = ids.len();
    let n_train = ((n as f64 * r[0]).round() as usize).min(n);
    let n_val = ((n as f64 * r[1]).round() as usize).min(n - n_train);
    Ok(Split {
        train: catalog.subset(&ids[..n_train]),
        val: catalog.subset(&ids[n_train..n_train + n_val]),
        test: catalog.subset(&ids[n_train + n_val..]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSetConfig {
    pub difficulty: Difficulty,
    pub per_pano: usize,
    pub sampler: SamplerConfig,
    pub corruption: Option<(CorruptionKind, Severity)>,
    pub seed: u64,
}

/// Samples `per_pano` episodes for each id, in id order.
pub fn generate_episode_set(ids: &[String], cfg: &EpisodeSetConfig) -> Result<Vec<EpisodeSpec>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(ids.len() * cfg.per_pano);
    for id in ids {
        for _ in 0..cfg.per_pano {
            let mut spec = sample_episode(cfg.difficulty, id, &cfg.sampler, &mut rng)?;
            spec.corruption = cfg.corruption.map(|(kind, severity)| CorruptionSpec {
                kind,
                severity,
                seed: spec.seed,
            });
            out.push(spec);
        }
    }
    Ok(out)
}

/// Resolves catalog ids from disk and `synth:` ids by generation. Loaded
/// panoramas are cached for the lifetime of the store.
type Slot = Arc<Mutex<Option<Arc<EquirectImage>>>>;

#[derive(Default)]
pub struct PanoramaStore {
    paths: HashMap<String, PathBuf>,
    // One slot per id so concurrent requests for the same panorama wait for
    // a single load instead of racing.
    cache: Mutex<HashMap<String, Slot>>,
}

impl PanoramaStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_catalog(cat: &PanoramaCatalog) -> Self {
        Self {
            paths: cat.entries.iter().map(|e| (e.id.clone(), e.path.clone())).collect(),
            cache: Mutex::default(),
        }
    }

    pub fn insert(&self, id: &str, pano: EquirectImage) {
        self.cache
            .lock()
            .expect("cache lock")
            .insert(id.into(), Arc::new(Mutex::new(Some(Arc::new(pano)))));
    }

    fn load(&self, id: &str) -> Result<EquirectImage, EnvError> {
        let missing = |reason: String| EnvError::MissingPanorama { id: id.into(), reason };
        if let Some(s) = SynthId::parse(id) {
            return s.render().map_err(|e| missing(e.to_string()));
        }
        let path = self
            .paths
            .get(id)
            .cloned()
            .unwrap_or_else(|| PathBuf::from(id));
        let img = RgbImage::load(&path).map_err(|e| missing(format!("{}: {e}", path.display())))?;
        EquirectImage::new(img).map_err(|e| missing(e.to_string()))
    }
}

impl PanoramaSource for PanoramaStore {
    fn panorama(&self, id: &str) -> Result<Arc<EquirectImage>, EnvError> {
        let slot = self.cache.lock().expect("cache lock").entry(id.into()).or_default().clone();
        let mut slot = slot.lock().expect("slot lock");
        if let Some(p) = slot.as_ref() {
            return Ok(p.clone());
        }
        let pano = Arc::new(self.load(id)?);
        *slot = Some(pano.clone());
        Ok(pano)
    }
}

//! The FindView episode state machine.
//!
//! Poses live on an integer-degree grid. Yaw wraps in `(-180, 180]`, pitch
//! clamps to `[-pitch_bound, pitch_bound]`. All distances (error, reward,
//! difficulty) use the wrapped yaw difference.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruptions::{corrupt, CorruptionKind, CorruptionSpec, Severity};
use crate::projection::{
    CameraIntrinsics, EquirectImage, PerspImage, PerspectiveRenderer, ProjectionError,
    ViewRotation,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid episode: {0}")]
    InvalidSpec(String),
    #[error("panorama {id:?} unavailable: {reason}")]
    MissingPanorama { id: String, reason: String },
    #[error("episode is done; call reset")]
    StepAfterDone,
    #[error("no episode loaded; call reset")]
    NotReset,
    #[error("cannot sample a {difficulty} episode at fov {fov} with pitch bound {pitch_bound} after {attempts} attempts")]
    InfeasibleDifficulty {
        difficulty: Difficulty,
        fov: f64,
        pitch_bound: i32,
        attempts: usize,
    },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stop,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stop];
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stop => "stop",
        }
    }

    pub fn is_move(self) -> bool {
        self != Action::Stop
    }

    pub fn opposite(self) -> Option<Action> {
        match self {
            Action::Up => Some(Action::Down),
            Action::Down => Some(Action::Up),
            Action::Left => Some(Action::Right),
            Action::Right => Some(Action::Left),
            Action::Stop => None,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Action::Left | Action::Right)
    }

    /// Index in `ALL`; the wire and policy ordering.
    pub fn index(self) -> usize {
        Action::ALL.iter().position(|a| *a == self).expect("listed")
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

/// Integer-degree viewing direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub pitch: i32,
    pub yaw: i32,
}

impl Pose {
    /// Canonicalizes yaw into `(-180, 180]`.
    pub fn new(pitch: i32, yaw: i32) -> Self {
        Self {
            pitch,
            yaw: wrap_yaw_deg(yaw),
        }
    }

    /// Accepts real degrees when they are integral.
    pub fn from_degrees(pitch: f64, yaw: f64) -> Result<Self, EnvError> {
        let integral = |v: f64| v.is_finite() && v.fract() == 0.0 && v.abs() < 1e6;
        if !integral(pitch) || !integral(yaw) {
            return Err(EnvError::InvalidSpec(format!(
                "rotation ({pitch}, {yaw}) is off the integer-degree grid"
            )));
        }
        Ok(Self::new(pitch as i32, yaw as i32))
    }

    pub fn is_canonical(&self, pitch_bound: i32) -> bool {
        self.pitch.abs() <= pitch_bound && self.yaw > -180 && self.yaw <= 180
    }

    pub fn to_view(self) -> ViewRotation {
        ViewRotation {
            pitch: self.pitch as f64,
            yaw: self.yaw as f64,
        }
    }
}

/// Wraps integer degrees into `(-180, 180]`.
pub fn wrap_yaw_deg(yaw: i32) -> i32 {
    let r = yaw.rem_euclid(360);
    if r > 180 {
        r - 360
    } else {
        r
    }
}

/// Shortest signed yaw difference `to - from`, in `(-180, 180]`.
pub fn yaw_delta(from: i32, to: i32) -> i32 {
    wrap_yaw_deg(to - from)
}

/// `|dpitch| + min(|dyaw|, 360 - |dyaw|)`.
pub fn angular_l1(a: Pose, b: Pose) -> u32 {
    (a.pitch - b.pitch).unsigned_abs() + yaw_delta(a.yaw, b.yaw).unsigned_abs()
}

/// Euclidean counterpart of [`angular_l1`] with the wrapped yaw term.
pub fn angular_l2(a: Pose, b: Pose) -> f64 {
    let dp = (a.pitch - b.pitch) as f64;
    let dy = yaw_delta(a.yaw, b.yaw) as f64;
    (dp * dp + dy * dy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_dist: f64,
    pub slack: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 10.0,
            gamma_dist: 0.1,
            slack: -0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Rotation increment per movement, integer degrees.
    pub step_deg: i32,
    pub pitch_bound: i32,
    pub max_steps: u32,
    pub fov_deg: f64,
    pub obs_width: usize,
    pub obs_height: usize,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            step_deg: 1,
            pitch_bound: 60,
            max_steps: 5000,
            fov_deg: 90.0,
            obs_width: 256,
            obs_height: 256,
            reward: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    /// The 60 degree setup renders 256x192 views.
    pub fn fov60() -> Self {
        Self {
            fov_deg: 60.0,
            obs_height: 192,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.step_deg <= 0 {
            return Err(EnvError::InvalidConfig("step_deg must be positive".into()));
        }
        if self.pitch_bound <= 0 || self.pitch_bound > 90 {
            return Err(EnvError::InvalidConfig("pitch_bound must be in (0, 90]".into()));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !(self.reward.beta > 0.0) {
            return Err(EnvError::InvalidConfig("reward beta must be positive".into()));
        }
        CameraIntrinsics::new(self.fov_deg, self.obs_width, self.obs_height)?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, EnvError> {
        Ok(CameraIntrinsics::new(self.fov_deg, self.obs_width, self.obs_height)?)
    }
}

/// Applies a movement. Pitch clamps at the bound, yaw wraps.
///
/// # Panics
///
/// On [`Action::Stop`]; stopping is handled by the caller.
pub fn apply_action(pose: Pose, action: Action, cfg: &EnvConfig) -> Pose {
    let d = cfg.step_deg;
    let b = cfg.pitch_bound;
    match action {
        Action::Up => Pose::new((pose.pitch + d).clamp(-b, b), pose.yaw),
        Action::Down => Pose::new((pose.pitch - d).clamp(-b, b), pose.yaw),
        Action::Left => Pose::new(pose.pitch, pose.yaw - d),
        Action::Right => Pose::new(pose.pitch, pose.yaw + d),
        Action::Stop => panic!("apply_action called with stop"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub success: f64,
    pub dist: f64,
    pub slack: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.success + self.dist + self.slack
    }
}

/// Success, warmer-colder and slack terms for one transition. A stop step
/// earns only the success term.
pub fn reward_breakdown(
    prev: Pose,
    cur: Pose,
    target: Pose,
    stopped: bool,
    terminated: bool,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    debug_assert!(!(stopped && terminated));
    if stopped {
        return RewardBreakdown {
            success: cfg.alpha / (angular_l1(target, cur) as f64 + cfg.beta),
            dist: 0.0,
            slack: 0.0,
        };
    }
    let before = angular_l1(target, prev) as f64;
    let after = angular_l1(target, cur) as f64;
    RewardBreakdown {
        success: if terminated { -cfg.alpha } else { 0.0 },
        dist: cfg.gamma_dist * (before - after),
        slack: cfg.slack,
    }
}

pub fn compute_reward(
    prev: Pose,
    cur: Pose,
    target: Pose,
    stopped: bool,
    terminated: bool,
    cfg: &RewardConfig,
) -> f64 {
    reward_breakdown(prev, cur, target, stopped, terminated, cfg).total()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Difficulty::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown difficulty {s:?}"))
    }
}

/// Difficulty of an (initial, target) pair, `None` when the pair falls
/// between the bands. Bands overlap; the easiest matching label wins.
pub fn classify_difficulty(
    init: Pose,
    target: Pose,
    fov_deg: f64,
    min_steps: u32,
    step_deg: i32,
) -> Option<Difficulty> {
    let l1 = angular_l1(init, target) as f64;
    let l2 = angular_l2(init, target);
    if l2 <= std::f64::consts::SQRT_2 * fov_deg / 2.0 && l1 >= (min_steps as f64) * step_deg as f64 {
        return Some(Difficulty::Easy);
    }
    if fov_deg / 2.0 < l1 && l1 <= fov_deg {
        return Some(Difficulty::Medium);
    }
    let dp = (target.pitch - init.pitch).unsigned_abs() as f64;
    let dy = yaw_delta(init.yaw, target.yaw).unsigned_abs() as f64;
    if dp > fov_deg && dy > fov_deg {
        return Some(Difficulty::Hard);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub fov_deg: f64,
    pub pitch_bound: i32,
    pub step_deg: i32,
    /// Minimum movement steps of an easy episode.
    pub min_steps: u32,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            fov_deg: 90.0,
            pitch_bound: 60,
            step_deg: 1,
            min_steps: 10,
            max_attempts: 10_000,
        }
    }
}

impl SamplerConfig {
    pub fn for_env(cfg: &EnvConfig) -> Self {
        Self {
            fov_deg: cfg.fov_deg,
            pitch_bound: cfg.pitch_bound,
            step_deg: cfg.step_deg,
            ..Self::default()
        }
    }

    fn random_pose(&self, rng: &mut dyn RngCore) -> Pose {
        let d = self.step_deg;
        let pitch_steps = self.pitch_bound / d;
        let pitch = rng.random_range(-pitch_steps..=pitch_steps) * d;
        // (-180, 180] on the step grid
        let yaw_steps = 360 / d;
        let yaw = 180 - rng.random_range(0..yaw_steps) * d;
        Pose::new(pitch, yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub pano: String,
    pub init: Pose,
    pub target: Pose,
    pub difficulty: Option<Difficulty>,
    /// Horizontal FoV the episode was sampled for, whole degrees.
    pub fov: u32,
    pub corruption: Option<CorruptionSpec>,
    pub seed: u64,
}

/// Rejection-samples a pose pair of the requested difficulty.
pub fn sample_episode(
    difficulty: Difficulty,
    pano: &str,
    cfg: &SamplerConfig,
    rng: &mut dyn RngCore,
) -> Result<EpisodeSpec, EnvError> {
    for _ in 0..cfg.max_attempts {
        let init = cfg.random_pose(rng);
        let target = cfg.random_pose(rng);
        if classify_difficulty(init, target, cfg.fov_deg, cfg.min_steps, cfg.step_deg)
            == Some(difficulty)
        {
            return Ok(EpisodeSpec {
                pano: pano.to_string(),
                init,
                target,
                difficulty: Some(difficulty),
                fov: cfg.fov_deg.round() as u32,
                corruption: None,
                seed: rng.next_u64(),
            });
        }
    }
    Err(EnvError::InfeasibleDifficulty {
        difficulty,
        fov: cfg.fov_deg,
        pitch_bound: cfg.pitch_bound,
        attempts: cfg.max_attempts,
    })
}

/// One line of an episode file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub pano: String,
    pub init_pitch: i32,
    pub init_yaw: i32,
    pub target_pitch: i32,
    pub target_yaw: i32,
    pub difficulty: Option<Difficulty>,
    pub fov: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption_kind: Option<CorruptionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption_severity: Option<Severity>,
    pub seed: u64,
}

impl From<&EpisodeSpec> for EpisodeRecord {
    fn from(s: &EpisodeSpec) -> Self {
        Self {
            pano: s.pano.clone(),
            init_pitch: s.init.pitch,
            init_yaw: s.init.yaw,
            target_pitch: s.target.pitch,
            target_yaw: s.target.yaw,
            difficulty: s.difficulty,
            fov: s.fov,
            corruption_kind: s.corruption.map(|c| c.kind),
            corruption_severity: s.corruption.map(|c| c.severity),
            seed: s.seed,
        }
    }
}

impl TryFrom<EpisodeRecord> for EpisodeSpec {
    type Error = EnvError;

    fn try_from(r: EpisodeRecord) -> Result<Self, EnvError> {
        let corruption = match (r.corruption_kind, r.corruption_severity) {
            (Some(kind), Some(severity)) => Some(CorruptionSpec {
                kind,
                severity,
                seed: r.seed,
            }),
            (None, None) => None,
            _ => {
                return Err(EnvError::InvalidSpec(
                    "corruption_kind and corruption_severity must appear together".into(),
                ))
            }
        };
        Ok(Self {
            pano: r.pano,
            init: Pose::new(r.init_pitch, r.init_yaw),
            target: Pose::new(r.target_pitch, r.target_yaw),
            difficulty: r.difficulty,
            fov: r.fov,
            corruption,
            seed: r.seed,
        })
    }
}

/// Serializes specs as one JSON object per line.
pub fn write_episodes(specs: &[EpisodeSpec]) -> String {
    let mut out = String::new();
    for s in specs {
        out.push_str(&serde_json::to_string(&EpisodeRecord::from(s)).expect("plain record"));
        out.push('\n');
    }
    out
}

pub fn parse_episodes(text: &str) -> Result<Vec<EpisodeSpec>, EnvError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let rec: EpisodeRecord = serde_json::from_str(line)
                .map_err(|e| EnvError::InvalidSpec(format!("line {}: {e}", n + 1)))?;
            EpisodeSpec::try_from(rec)
        })
        .collect()
}

/// Resolves panorama ids to images.
pub trait PanoramaSource: Send + Sync {
    fn panorama(&self, id: &str) -> Result<Arc<EquirectImage>, EnvError>;
}

/// Target and current view, as handed to agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub target: Arc<PerspImage>,
    pub current: Arc<PerspImage>,
}

/// Evaluator-side details of a step. `pose` is hidden from agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub pose: Pose,
    pub target: Pose,
    pub step: u32,
    pub stop_called: bool,
    pub forced_termination: bool,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

struct Episode {
    spec: EpisodeSpec,
    pano: Arc<EquirectImage>,
    pose: Pose,
    step: u32,
    done: bool,
    stop_called: bool,
    forced: bool,
    target_view: Arc<PerspImage>,
    current_view: Arc<PerspImage>,
}

/// A single FindView environment. Not shared between threads; run one
/// instance per worker.
pub struct FindViewEnv {
    cfg: EnvConfig,
    renderer: PerspectiveRenderer,
    source: Arc<dyn PanoramaSource>,
    episode: Option<Episode>,
}

impl FindViewEnv {
    pub fn new(cfg: EnvConfig, source: Arc<dyn PanoramaSource>) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self {
            renderer: PerspectiveRenderer::new(cfg.intrinsics()?),
            cfg,
            source,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn spec(&self) -> Option<&EpisodeSpec> {
        self.episode.as_ref().map(|e| &e.spec)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    /// Starts `spec`. Replays any spec whose poses fit the pitch bound,
    /// including `init == target`.
    pub fn reset(&mut self, spec: &EpisodeSpec) -> Result<StepResult, EnvError> {
        let b = self.cfg.pitch_bound;
        if !spec.init.is_canonical(b) || !spec.target.is_canonical(b) {
            return Err(EnvError::InvalidSpec(format!(
                "poses {:?} -> {:?} outside pitch bound {b}",
                spec.init, spec.target
            )));
        }
        if spec.fov as f64 != self.cfg.fov_deg {
            return Err(EnvError::InvalidSpec(format!(
                "episode fov {} differs from environment fov {}",
                spec.fov, self.cfg.fov_deg
            )));
        }
        let pano = self.source.panorama(&spec.pano)?;
        let clean_target = self.renderer.render(&pano, &spec.target.to_view());
        let target_view = Arc::new(match &spec.corruption {
            Some(c) => corrupt(&clean_target, c),
            None => clean_target,
        });
        let current_view = Arc::new(self.renderer.render(&pano, &spec.init.to_view()));
        self.episode = Some(Episode {
            spec: spec.clone(),
            pano,
            pose: spec.init,
            step: 0,
            done: false,
            stop_called: false,
            forced: false,
            target_view,
            current_view,
        });
        Ok(self.result(0.0, RewardBreakdown::default()))
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        let cfg = self.cfg;
        let ep = self.episode.as_mut().ok_or(EnvError::NotReset)?;
        if ep.done {
            return Err(EnvError::StepAfterDone);
        }
        ep.step += 1;
        let prev = ep.pose;
        let target = ep.spec.target;
        let parts = if action == Action::Stop {
            ep.done = true;
            ep.stop_called = true;
            reward_breakdown(prev, prev, target, true, false, &cfg.reward)
        } else {
            let next = apply_action(prev, action, &cfg);
            if next != prev {
                ep.pose = next;
                ep.current_view = Arc::new(self.renderer.render(&ep.pano, &next.to_view()));
            }
            let terminated = ep.step >= cfg.max_steps;
            if terminated {
                ep.done = true;
                ep.forced = true;
            }
            reward_breakdown(prev, next, target, false, terminated, &cfg.reward)
        };
        Ok(self.result(parts.total(), parts))
    }

    fn result(&self, reward: f64, parts: RewardBreakdown) -> StepResult {
        let ep = self.episode.as_ref().expect("episode loaded");
        StepResult {
            observation: Observation {
                target: ep.target_view.clone(),
                current: ep.current_view.clone(),
            },
            reward,
            done: ep.done,
            info: StepInfo {
                pose: ep.pose,
                target: ep.spec.target,
                step: ep.step,
                stop_called: ep.stop_called,
                forced_termination: ep.forced,
                reward: parts,
            },
        }
    }

    /// Clean render of the target pose, for checks against the cached target.
    pub fn render_pose(&self, pose: Pose) -> Result<PerspImage, EnvError> {
        let ep = self.episode.as_ref().ok_or(EnvError::NotReset)?;
        Ok(self.renderer.render(&ep.pano, &pose.to_view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RgbImage;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    struct OnePano(Arc<EquirectImage>);

    impl PanoramaSource for OnePano {
        fn panorama(&self, id: &str) -> Result<Arc<EquirectImage>, EnvError> {
            if id == "p" {
                Ok(self.0.clone())
            } else {
                Err(EnvError::MissingPanorama {
                    id: id.into(),
                    reason: "unknown".into(),
                })
            }
        }
    }

    fn small_env(max_steps: u32) -> FindViewEnv {
        let pano = RgbImage::from_fn(128, 64, |x, y| {
            [(x * 2) as u8, (y * 4) as u8, ((x * 7 + y * 13) % 256) as u8]
        });
        let cfg = EnvConfig {
            obs_width: 16,
            obs_height: 16,
            max_steps,
            ..EnvConfig::default()
        };
        FindViewEnv::new(cfg, Arc::new(OnePano(Arc::new(EquirectImage::new(pano).unwrap())))).unwrap()
    }

    fn spec(init: Pose, target: Pose) -> EpisodeSpec {
        EpisodeSpec {
            pano: "p".into(),
            init,
            target,
            difficulty: None,
            fov: 90,
            corruption: None,
            seed: 7,
        }
    }

    #[test]
    fn action_examples() {
        let cfg = EnvConfig::default();
        assert_eq!(apply_action(Pose::new(10, 20), Action::Up, &cfg), Pose::new(11, 20));
        assert_eq!(apply_action(Pose::new(60, 0), Action::Up, &cfg), Pose::new(60, 0));
        assert_eq!(apply_action(Pose::new(-60, 0), Action::Down, &cfg), Pose::new(-60, 0));
        assert_eq!(apply_action(Pose::new(0, 180), Action::Right, &cfg), Pose::new(0, -179));
        assert_eq!(apply_action(Pose::new(0, -179), Action::Left, &cfg), Pose::new(0, 180));
    }

    #[test]
    #[should_panic]
    fn apply_action_rejects_stop() {
        apply_action(Pose::new(0, 0), Action::Stop, &EnvConfig::default());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(angular_l1(Pose::new(10, 20), Pose::new(8, 25)), 7);
        assert_eq!(angular_l1(Pose::new(0, 179), Pose::new(0, -179)), 2);
        assert_eq!(angular_l1(Pose::new(3, 3), Pose::new(3, 3)), 0);
        assert_eq!(angular_l1(Pose::new(0, 0), Pose::new(0, 180)), 180);
    }

    /// Minimal number of movement actions between two poses.
    fn bfs_steps(from: Pose, to: Pose, cfg: &EnvConfig) -> u32 {
        let mut seen = std::collections::HashSet::from([from]);
        let mut queue = VecDeque::from([(from, 0u32)]);
        while let Some((p, d)) = queue.pop_front() {
            if p == to {
                return d;
            }
            for a in Action::MOVES {
                let n = apply_action(p, a, cfg);
                if seen.insert(n) {
                    queue.push_back((n, d + 1));
                }
            }
        }
        unreachable!("grid is connected")
    }

    #[test]
    fn wrapped_distance_matches_bfs_examples() {
        let cfg = EnvConfig::default();
        for (a, b) in [
            (Pose::new(0, 179), Pose::new(0, -179)),
            (Pose::new(0, 170), Pose::new(0, -170)),
            (Pose::new(-3, 90), Pose::new(5, -100)),
        ] {
            assert_eq!(angular_l1(a, b), bfs_steps(a, b, &cfg));
        }
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let t = Pose::new(5, 5);
        let r = reward_breakdown(t, t, t, true, false, &cfg);
        assert_eq!(r.success, 10.0);
        assert_eq!(r.total(), 10.0);
        // closer by one degree while looking
        let r = compute_reward(Pose::new(5, 3), Pose::new(5, 4), t, false, false, &cfg);
        assert!((r - 0.09).abs() < 1e-12);
        // unchanged distance
        assert!((compute_reward(t, t, Pose::new(0, 0), false, false, &cfg) + 0.01).abs() < 1e-12);
        // one degree away
        let r = compute_reward(Pose::new(5, 4), Pose::new(5, 3), t, false, false, &cfg);
        assert!((r + 0.11).abs() < 1e-12);
        // stopped ten degrees off
        let r = compute_reward(Pose::new(0, 5), Pose::new(0, 5), Pose::new(10, 5), true, false, &cfg);
        assert_eq!(r, 100.0 / 20.0);
        let r = reward_breakdown(t, Pose::new(5, 6), t, false, true, &cfg);
        assert_eq!(r.success, -100.0);
    }

    #[test]
    fn difficulty_examples() {
        let o = Pose::new(0, 0);
        assert_eq!(classify_difficulty(o, Pose::new(30, 30), 90.0, 10, 1), Some(Difficulty::Easy));
        // l1 = 80, l2 = 70.7 > 63.64
        assert_eq!(classify_difficulty(o, Pose::new(10, 70), 90.0, 10, 1), Some(Difficulty::Medium));
        assert_eq!(
            classify_difficulty(Pose::new(-35, 0), Pose::new(35, 100), 60.0, 10, 1),
            Some(Difficulty::Hard)
        );
        // too short for easy, too close for medium
        assert_eq!(classify_difficulty(o, Pose::new(2, 3), 90.0, 10, 1), None);
        // l1 > f, but only yaw exceeds f
        assert_eq!(classify_difficulty(o, Pose::new(5, 120), 90.0, 10, 1), None);
        // the hard yaw gap wraps
        assert_eq!(
            classify_difficulty(Pose::new(-50, 170), Pose::new(50, -80), 90.0, 10, 1),
            Some(Difficulty::Hard)
        );
    }

    #[test]
    fn sampler_is_seeded_and_labels_hold() {
        let cfg = SamplerConfig::default();
        let a = sample_episode(Difficulty::Easy, "p", &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_episode(Difficulty::Easy, "p", &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in Difficulty::ALL {
            for _ in 0..200 {
                let s = sample_episode(d, "p", &cfg, &mut rng).unwrap();
                assert_eq!(classify_difficulty(s.init, s.target, 90.0, 10, 1), Some(d));
                assert!(s.init.is_canonical(60) && s.target.is_canonical(60));
            }
        }
        let wide = SamplerConfig {
            fov_deg: 130.0,
            ..cfg
        };
        assert!(matches!(
            sample_episode(Difficulty::Hard, "p", &wide, &mut rng),
            Err(EnvError::InfeasibleDifficulty { .. })
        ));
    }

    #[test]
    fn episode_lines_round_trip() {
        let mut s = spec(Pose::new(1, -2), Pose::new(3, 180));
        s.difficulty = Some(Difficulty::Medium);
        let mut c = s.clone();
        c.corruption = Some(CorruptionSpec::new(CorruptionKind::Fog, 3, 7).unwrap());
        let text = write_episodes(&[s.clone(), c.clone()]);
        assert!(!text.lines().next().unwrap().contains("corruption"));
        assert!(text.lines().nth(1).unwrap().contains("\"corruption_kind\":\"fog\""));
        assert_eq!(parse_episodes(&text).unwrap(), vec![s, c]);
        assert!(parse_episodes("{\"pano\":1}").is_err());
    }

    #[test]
    fn reset_is_deterministic_and_replays_degenerate_specs() {
        let mut env = small_env(50);
        let s = spec(Pose::new(4, 4), Pose::new(4, 4));
        let a = env.reset(&s).unwrap();
        let b = env.reset(&s).unwrap();
        assert_eq!(a.observation.current.as_ref(), b.observation.current.as_ref());
        assert_eq!(a.observation.target.as_ref(), b.observation.target.as_ref());
        assert_eq!(a.observation.current, a.observation.target);
        assert_eq!((a.reward, a.done, a.info.step), (0.0, false, 0));
    }

    #[test]
    fn reset_rejects_bad_specs() {
        let mut env = small_env(50);
        assert!(matches!(
            env.reset(&spec(Pose::new(70, 0), Pose::new(0, 0))),
            Err(EnvError::InvalidSpec(_))
        ));
        let mut missing = spec(Pose::new(0, 0), Pose::new(0, 1));
        missing.pano = "nope".into();
        assert!(matches!(env.reset(&missing), Err(EnvError::MissingPanorama { .. })));
        assert!(matches!(env.step(Action::Up), Err(EnvError::NotReset)));
    }

    #[test]
    fn corruption_only_touches_target() {
        let mut env = small_env(50);
        let clean = env.reset(&spec(Pose::new(0, 0), Pose::new(10, 10))).unwrap();
        let mut c = spec(Pose::new(0, 0), Pose::new(10, 10));
        c.corruption = Some(CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 1).unwrap());
        let dirty = env.reset(&c).unwrap();
        assert_ne!(clean.observation.target, dirty.observation.target);
        assert_eq!(clean.observation.current, dirty.observation.current);
    }

    #[test]
    fn stop_and_forced_termination() {
        let mut env = small_env(3);
        env.reset(&spec(Pose::new(0, 0), Pose::new(0, 2))).unwrap();
        let r = env.step(Action::Right).unwrap();
        assert!((r.reward - 0.09).abs() < 1e-12);
        let r = env.step(Action::Right).unwrap();
        assert_eq!(r.info.pose, Pose::new(0, 2));
        let r = env.step(Action::Stop).unwrap();
        assert!(r.done && r.info.stop_called && !r.info.forced_termination);
        assert_eq!(r.info.reward.success, 10.0);
        assert!(matches!(env.step(Action::Up), Err(EnvError::StepAfterDone)));
        assert!(matches!(env.step(Action::Stop), Err(EnvError::StepAfterDone)));

        env.reset(&spec(Pose::new(0, 0), Pose::new(0, 20))).unwrap();
        for _ in 0..2 {
            assert!(!env.step(Action::Left).unwrap().done);
        }
        let r = env.step(Action::Left).unwrap();
        assert!(r.done && r.info.forced_termination && !r.info.stop_called);
        assert_eq!(r.info.step, 3);
        assert_eq!(r.info.reward.success, -100.0);
        assert!(env.step(Action::Right).is_err());
    }

    #[test]
    fn clamped_move_is_a_noop_with_slack() {
        let mut env = small_env(10);
        env.reset(&spec(Pose::new(60, 0), Pose::new(0, 0))).unwrap();
        let r = env.step(Action::Up).unwrap();
        assert_eq!(r.info.pose, Pose::new(60, 0));
        assert!((r.reward + 0.01).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn l1_is_a_metric(a in (-60i32..=60, -179i32..=180), b in (-60i32..=60, -179i32..=180), c in (-60i32..=60, -179i32..=180)) {
            let (a, b, c) = (Pose::new(a.0, a.1), Pose::new(b.0, b.1), Pose::new(c.0, c.1));
            prop_assert_eq!(angular_l1(a, b), angular_l1(b, a));
            prop_assert_eq!(angular_l1(a, a), 0);
            prop_assert!(angular_l1(a, c) <= angular_l1(a, b) + angular_l1(b, c));
            prop_assert_eq!(angular_l1(a, b) == 0, a == b);
        }

        #[test]
        fn reward_telescopes(actions in proptest::collection::vec(0usize..4, 1..200), t in (-60i32..=60, -179i32..=180)) {
            let cfg = EnvConfig::default();
            let target = Pose::new(t.0, t.1);
            let start = Pose::new(0, 0);
            let mut pose = start;
            let mut sum = 0.0;
            for a in actions {
                let next = apply_action(pose, Action::MOVES[a], &cfg);
                sum += reward_breakdown(pose, next, target, false, false, &cfg.reward).dist;
                pose = next;
            }
            let expected = 0.1 * (angular_l1(start, target) as f64 - angular_l1(pose, target) as f64);
            prop_assert!((sum - expected).abs() < 1e-9);
        }
    }
}

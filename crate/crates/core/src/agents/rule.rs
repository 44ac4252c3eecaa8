//! Feature-matching rule agent: detect, ratio-match, vote, and stop on
//! oscillation.

use std::sync::Arc;

use crate::environment::{Action, Observation};
use crate::projection::PerspImage;

use super::consensus::consensus;
use super::matching::knn_ratio_match;
use super::{Agent, AgentError, FeatureDetector, Features, OrbDetector, PrivilegedState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleAgentConfig {
    /// Largest descriptor distance allowed to vote; `None` for no limit.
    pub d_thresh: Option<u32>,
    pub n_kps: usize,
    pub n_matches: usize,
    pub ratio: f64,
    pub zero_px: f64,
    pub sweep_default: Action,
    pub oscillation_window: usize,
}

impl Default for RuleAgentConfig {
    fn default() -> Self {
        Self {
            d_thresh: None,
            n_kps: 500,
            n_matches: 10,
            ratio: 0.7,
            zero_px: 1.0,
            sweep_default: Action::Right,
            oscillation_window: 6,
        }
    }
}

impl RuleAgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if self.n_kps == 0 || self.n_matches == 0 {
            return bad("n_kps and n_matches must be at least 1");
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad("ratio must be in (0, 1)");
        }
        if !(self.zero_px > 0.0) {
            return bad("zero_px must be positive");
        }
        if !self.sweep_default.is_horizontal() {
            return bad("sweep_default must be left or right");
        }
        if self.oscillation_window < 2 {
            return bad("oscillation window must be at least 2");
        }
        Ok(())
    }
}

/// True when the last `window` actions alternate between two opposing
/// movements.
pub fn is_repeated(history: &[Action], window: usize) -> bool {
    if history.len() < window || window < 2 {
        return false;
    }
    let tail = &history[history.len() - window..];
    let (a, b) = (tail[0], tail[1]);
    a.opposite() == Some(b) && tail.iter().enumerate().all(|(i, &x)| x == if i % 2 == 0 { a } else { b })
}

pub struct RuleAgent {
    cfg: RuleAgentConfig,
    detector: Arc<dyn FeatureDetector>,
    name: String,
    target: Option<(Arc<PerspImage>, Arc<Features>)>,
    history: Vec<Action>,
    last_horizontal: Option<Action>,
}

impl RuleAgent {
    pub fn new(cfg: RuleAgentConfig, detector: Arc<dyn FeatureDetector>) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            detector,
            name: "rule".into(),
            target: None,
            history: Vec::new(),
            last_horizontal: None,
        })
    }

    pub fn orb(cfg: RuleAgentConfig) -> Result<Self, AgentError> {
        let mut a = Self::new(cfg, Arc::new(OrbDetector::default()))?;
        a.name = "rule-orb".into();
        Ok(a)
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &RuleAgentConfig {
        &self.cfg
    }

    pub fn history(&self) -> &[Action] {
        &self.history
    }

    fn target_features(&mut self, img: &Arc<PerspImage>) -> Result<Arc<Features>, AgentError> {
        if let Some((cached, f)) = &self.target {
            if Arc::ptr_eq(cached, img) || cached.as_ref() == img.as_ref() {
                return Ok(f.clone());
            }
        }
        let f = Arc::new(self.detector.detect(img)?);
        self.target = Some((img.clone(), f.clone()));
        Ok(f)
    }

    /// Keep sweeping horizontally: vertical moves can stall at the pitch
    /// clamp.
    fn fallback(&self) -> Action {
        self.last_horizontal.unwrap_or(self.cfg.sweep_default)
    }

    fn estimate(&mut self, obs: &Observation) -> Result<Action, AgentError> {
        let target = self.target_features(&obs.target)?;
        if target.len() < self.cfg.n_kps {
            return Ok(self.fallback());
        }
        let current = self.detector.detect(&obs.current)?;
        if current.len() < self.cfg.n_kps {
            return Ok(self.fallback());
        }
        let matches = knn_ratio_match(&current.descriptors, &target.descriptors, self.cfg.ratio);
        if matches.len() < self.cfg.n_matches {
            return Ok(self.fallback());
        }
        let prev = self.history.last().copied().unwrap_or_else(|| self.fallback());
        Ok(consensus(
            &matches,
            &current.keypoints,
            &target.keypoints,
            prev,
            self.cfg.d_thresh,
            self.cfg.zero_px,
        ))
    }
}

impl Agent for RuleAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.target = None;
        self.history.clear();
        self.last_horizontal = None;
    }

    fn act(&mut self, obs: &Observation, _: Option<&PrivilegedState>) -> Result<Action, AgentError> {
        let mut action = self.estimate(obs)?;
        self.history.push(action);
        if is_repeated(&self.history, self.cfg.oscillation_window) {
            action = Action::Stop;
            *self.history.last_mut().expect("just pushed") = action;
        }
        if action.is_horizontal() {
            self.last_horizontal = Some(action);
        }
        Ok(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RgbImage;
    use Action::*;

    #[test]
    fn repetition_detector() {
        assert!(is_repeated(&[Left, Right, Left, Right, Left, Right], 6));
        assert!(is_repeated(&[Up, Up, Down, Up, Down, Up, Down], 6));
        assert!(!is_repeated(&[Left, Right, Left, Right, Left], 6));
        assert!(!is_repeated(&[Left, Right, Left, Right, Left, Left], 6));
        assert!(!is_repeated(&[Left, Up, Left, Up, Left, Up], 6));
    }

    #[test]
    fn repetition_never_fires_early() {
        for n in 0..5 {
            let h: Vec<Action> = (0..n).map(|i| if i % 2 == 0 { Left } else { Right }).collect();
            assert!(!is_repeated(&h, 6));
        }
    }

    #[test]
    fn textureless_views_sweep_right() {
        let mut agent = RuleAgent::orb(RuleAgentConfig::default()).unwrap();
        let flat = Arc::new(RgbImage::filled(64, 64, [120, 120, 120]));
        let obs = Observation {
            target: flat.clone(),
            current: flat,
        };
        for _ in 0..10 {
            assert_eq!(agent.act(&obs, None).unwrap(), Right);
        }
        let mut left = RuleAgent::orb(RuleAgentConfig {
            sweep_default: Left,
            ..RuleAgentConfig::default()
        })
        .unwrap();
        assert_eq!(left.act(&obs, None).unwrap(), Left);
    }

    #[test]
    fn config_validation() {
        let bad = RuleAgentConfig {
            ratio: 1.0,
            ..RuleAgentConfig::default()
        };
        assert!(RuleAgent::orb(bad).is_err());
        let bad = RuleAgentConfig {
            sweep_default: Up,
            ..RuleAgentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

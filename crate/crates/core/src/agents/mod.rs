//! Agents act on a (target, current) observation pair.
//!
//! [`RuleAgent`] is the feature-matching baseline; [`OracleAgent`] reads the
//! true rotation and is for evaluation only.

use thiserror::Error;

use crate::environment::{Action, Observation, Pose};
use crate::raster::RgbImage;

pub mod consensus;
pub mod external;
pub mod matching;
pub mod orb;
pub mod oracle;
mod pattern;
pub mod rule;

pub use external::ExternalDetector;
pub use matching::{knn_ratio_match, Match};
pub use orb::{detect_and_compute, OrbConfig};
pub use oracle::OracleAgent;
pub use rule::{RuleAgent, RuleAgentConfig};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent needs the true rotation, which the caller did not supply")]
    MissingPrivilegedState,
    #[error("detector plug-in failed: {0}")]
    Detector(String),
    #[error("remote agent failed: {0}")]
    Remote(String),
    #[error("invalid agent config: {0}")]
    Config(String),
}

/// Evaluator-only state. Honest agents never receive it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrivilegedState {
    pub pose: Pose,
    pub target: Pose,
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    /// Clears per-episode state.
    fn reset(&mut self);

    fn act(
        &mut self,
        obs: &Observation,
        privileged: Option<&PrivilegedState>,
    ) -> Result<Action, AgentError>;

    fn requires_privileged_state(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Pixel-centre coordinates, x right and y down.
    pub x: f64,
    pub y: f64,
    /// Radians.
    pub angle: f64,
    pub response: f64,
}

/// Fixed-length binary descriptors packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorSet {
    bits: usize,
    words: usize,
    data: Vec<u64>,
}

impl DescriptorSet {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            words: bits.div_ceil(64),
            data: Vec::new(),
        }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        if self.words == 0 {
            0
        } else {
            self.data.len() / self.words
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Panics when `d` is not exactly one descriptor long.
    pub fn push(&mut self, d: &[u64]) {
        assert_eq!(d.len(), self.words, "descriptor word count");
        self.data.extend_from_slice(d);
    }

    #[inline(always)]
    pub fn get(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    #[inline(always)]
    pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
        a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
    }

    /// Parses a lowercase or uppercase hex string, first byte = bits 0..8.
    pub fn words_from_hex(hex: &str, bits: usize) -> Option<Vec<u64>> {
        if hex.len() * 4 != bits.div_ceil(8) * 8 || !hex.is_ascii() {
            return None;
        }
        let mut words = vec![0u64; bits.div_ceil(64)];
        for (i, pair) in hex.as_bytes().chunks(2).enumerate() {
            let byte = u8::from_str_radix(std::str::from_utf8(pair).ok()?, 16).ok()?;
            words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        Some(words)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: DescriptorSet,
}

impl Features {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

pub trait FeatureDetector: Send + Sync {
    fn detect(&self, img: &RgbImage) -> Result<Features, AgentError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OrbDetector {
    pub config: OrbConfig,
}

impl FeatureDetector for OrbDetector {
    fn detect(&self, img: &RgbImage) -> Result<Features, AgentError> {
        Ok(detect_and_compute(&img.to_gray(), &self.config))
    }
}

/// Never stops; moves in one direction forever. Useful for forced
/// termination checks.
#[derive(Debug, Clone)]
pub struct ConstantAgent(pub Action);

impl Agent for ConstantAgent {
    fn name(&self) -> &str {
        "constant"
    }

    fn reset(&mut self) {}

    fn act(&mut self, _: &Observation, _: Option<&PrivilegedState>) -> Result<Action, AgentError> {
        Ok(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_is_symmetric_and_zero_on_equal() {
        let a = [0xdead_beef_u64, 1, 2, u64::MAX];
        let b = [0u64, 1, 3, 0];
        assert_eq!(DescriptorSet::hamming(&a, &a), 0);
        assert_eq!(DescriptorSet::hamming(&a, &b), DescriptorSet::hamming(&b, &a));
        assert_eq!(DescriptorSet::hamming(&a, &b), 24 + 1 + 64);
    }

    #[test]
    fn hex_descriptors() {
        let w = DescriptorSet::words_from_hex("0102", 16).unwrap();
        assert_eq!(w, vec![0x0201]);
        assert!(DescriptorSet::words_from_hex("010", 16).is_none());
        assert!(DescriptorSet::words_from_hex("zz", 8).is_none());
        let w = DescriptorSet::words_from_hex(&"ff".repeat(32), 256).unwrap();
        assert_eq!(w, vec![u64::MAX; 4]);
    }

    #[test]
    fn descriptor_set_indexing() {
        let mut s = DescriptorSet::new(128);
        s.push(&[1, 2]);
        s.push(&[3, 4]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(1), &[3, 4]);
    }
}

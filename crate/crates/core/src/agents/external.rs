//! Detector plug-in running as a subprocess.
//!
//! Per call the image is written to the plug-in's stdin as one PNG; the
//! plug-in prints one keypoint per line, `x y orientation response hex`, and
//! exits. All descriptors of one call must have the same length.

use std::io::{Read, Write};
use std::process::{Command, Stdio};

use crate::raster::RgbImage;

use super::{AgentError, DescriptorSet, FeatureDetector, Features, Keypoint};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalDetector {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalDetector {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

pub fn parse_features(text: &str) -> Result<Features, AgentError> {
    let err = |n: usize, m: &str| AgentError::Detector(format!("line {}: {m}", n + 1));
    let mut keypoints = Vec::new();
    let mut descriptors: Option<DescriptorSet> = None;
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(err(n, "expected 5 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(n, "bad number"));
        let (x, y, angle, response) = (num(fields[0])?, num(fields[1])?, num(fields[2])?, num(fields[3])?);
        let bits = fields[4].len() * 4;
        let set = descriptors.get_or_insert_with(|| DescriptorSet::new(bits));
        if set.bits() != bits {
            return Err(err(n, "descriptor length changed"));
        }
        let words = DescriptorSet::words_from_hex(fields[4], bits).ok_or_else(|| err(n, "bad hex"))?;
        set.push(&words);
        keypoints.push(Keypoint { x, y, angle, response });
    }
    Ok(Features {
        keypoints,
        descriptors: descriptors.unwrap_or_else(|| DescriptorSet::new(256)),
    })
}

impl FeatureDetector for ExternalDetector {
    fn detect(&self, img: &RgbImage) -> Result<Features, AgentError> {
        let png = img.encode_png().map_err(|e| AgentError::Detector(e.to_string()))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AgentError::Detector(format!("spawn {}: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("piped");
        let writer = std::thread::spawn(move || stdin.write_all(&png));
        let mut out = String::new();
        child
            .stdout
            .take()
            .expect("piped")
            .read_to_string(&mut out)
            .map_err(|e| AgentError::Detector(e.to_string()))?;
        let status = child.wait().map_err(|e| AgentError::Detector(e.to_string()))?;
        // a plug-in may exit without draining stdin
        let _ = writer.join();
        if !status.success() {
            return Err(AgentError::Detector(format!("{} exited with {status}", self.program)));
        }
        parse_features(&out)
    }
}

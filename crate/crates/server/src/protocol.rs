//! Wire format shared by the environment server, its clients and remote
//! agents. See `protocol.md` at the crate root.

use std::io::{self, Read, Write};

use findview_core::environment::{Action, Pose, RewardBreakdown};
use findview_core::raster::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: usize = 64 << 20;

pub const OBS_MAGIC: &[u8; 4] = b"FVOB";
pub const OBS_HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("observation images differ in size: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
}

/// Writes one frame: 4-byte big-endian length, then the payload.
pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> Result<(), ProtocolError> {
    if payload.len() > MAX_FRAME {
        return Err(ProtocolError::FrameTooLarge(payload.len()));
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream before the length.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(ProtocolError::FrameTooLarge(n));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn write_json<T: Serialize>(w: &mut impl Write, msg: &T) -> Result<(), ProtocolError> {
    let bytes = serde_json::to_vec(msg).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    write_frame(w, &bytes)
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(frame: &[u8]) -> Result<T, ProtocolError> {
    serde_json::from_slice(frame).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// `FVOB`, width, height (u32 big-endian), then target RGB and current RGB.
pub fn encode_observation(target: &RgbImage, current: &RgbImage) -> Result<Vec<u8>, ProtocolError> {
    if target.dimensions() != current.dimensions() {
        return Err(ProtocolError::SizeMismatch(target.dimensions(), current.dimensions()));
    }
    let (w, h) = target.dimensions();
    let mut out = Vec::with_capacity(OBS_HEADER_LEN + 2 * w * h * 3);
    out.extend_from_slice(OBS_MAGIC);
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(target.as_bytes());
    out.extend_from_slice(current.as_bytes());
    Ok(out)
}

pub fn decode_observation(frame: &[u8]) -> Result<(RgbImage, RgbImage), ProtocolError> {
    let bad = |m: &str| ProtocolError::Malformed(m.to_string());
    if frame.len() < OBS_HEADER_LEN || &frame[..4] != OBS_MAGIC {
        return Err(bad("missing observation header"));
    }
    let w = u32::from_be_bytes(frame[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_be_bytes(frame[8..12].try_into().expect("4 bytes")) as usize;
    let n = w * h * 3;
    if frame.len() != OBS_HEADER_LEN + 2 * n {
        return Err(bad("observation length does not match its header"));
    }
    let img = |bytes: &[u8]| RgbImage::from_raw(w, h, bytes.to_vec()).map_err(|e| bad(&e.to_string()));
    Ok((
        img(&frame[OBS_HEADER_LEN..OBS_HEADER_LEN + n])?,
        img(&frame[OBS_HEADER_LEN + n..])?,
    ))
}

/// Client-to-server control messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Hello {
        version: u32,
    },
    Reset {
        env: usize,
        /// Index into the episode file; the env's cursor when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<usize>,
    },
    Step {
        env: usize,
        action: Action,
    },
    Seek {
        env: usize,
        cursor: usize,
    },
    Close,
}

impl Request {
    pub fn env(&self) -> Option<usize> {
        match self {
            Request::Reset { env, .. } | Request::Step { env, .. } | Request::Seek { env, .. } => Some(*env),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloReply {
    pub ok: bool,
    pub op: String,
    pub version: u32,
    pub n_envs: usize,
    /// `[2, height, width, 3]`: target then current, RGB8.
    pub obs_shape: [usize; 4],
    pub actions: Vec<Action>,
    pub max_steps: u32,
    pub fov: f64,
    pub hide_state: bool,
    /// Episode count of a file source; absent for a sampler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_episodes: Option<usize>,
}

/// Reply to `reset` and `step`; always followed by one observation frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReply {
    pub ok: bool,
    pub op: String,
    pub env: usize,
    /// Index in the episode source.
    pub episode: usize,
    pub step: u32,
    pub reward: f64,
    pub reward_terms: RewardBreakdown,
    pub done: bool,
    pub stop_called: bool,
    pub forced_termination: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeekReply {
    pub ok: bool,
    pub op: String,
    pub env: usize,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<usize>,
    /// One of the codes in [`ErrorCode`].
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    /// Step on a finished episode.
    EnvDone,
    /// Step before the first reset.
    NotReset,
    BadEpisode,
    MissingPanorama,
    InvalidSpec,
    /// Fatal; the server closes the connection after sending it.
    Protocol,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::EnvDone => "env-done",
            ErrorCode::NotReset => "not-reset",
            ErrorCode::BadEpisode => "bad-episode",
            ErrorCode::MissingPanorama => "missing-panorama",
            ErrorCode::InvalidSpec => "invalid-spec",
            ErrorCode::Protocol => "protocol",
        }
    }
}

impl ErrorReply {
    pub fn new(code: ErrorCode, op: Option<&str>, env: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            ok: false,
            op: op.map(str::to_string),
            env,
            error: code.as_str().into(),
            message: message.into(),
        }
    }
}

/// Any server reply, for clients that dispatch on `ok` and `op`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Error(ErrorReply),
    Hello(HelloReply),
    Step(StepReply),
    Seek(SeekReply),
    Closed { ok: bool, op: String },
}

impl Reply {
    pub fn parse(frame: &[u8]) -> Result<Reply, ProtocolError> {
        let v: serde_json::Value = parse_json(frame)?;
        let ok = v.get("ok").and_then(|o| o.as_bool());
        let op = v.get("op").and_then(|o| o.as_str()).map(str::to_string);
        match (ok, op.as_deref()) {
            (Some(false), _) => Ok(Reply::Error(serde_json::from_value(v).map_err(m)?)),
            (Some(true), Some("hello")) => Ok(Reply::Hello(serde_json::from_value(v).map_err(m)?)),
            (Some(true), Some("reset" | "step")) => Ok(Reply::Step(serde_json::from_value(v).map_err(m)?)),
            (Some(true), Some("seek")) => Ok(Reply::Seek(serde_json::from_value(v).map_err(m)?)),
            (Some(true), Some("close")) => Ok(Reply::Closed {
                ok: true,
                op: "close".into(),
            }),
            _ => Err(ProtocolError::Malformed("unrecognised reply".into())),
        }
    }
}

fn m(e: serde_json::Error) -> ProtocolError {
    ProtocolError::Malformed(e.to_string())
}

/// Agent protocol: the harness sends one of these, then an observation frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum AgentRequest {
    /// Start of a new episode; no reply.
    Reset,
    /// Followed by an observation frame; the agent answers with [`AgentReply`].
    Act { step: u32 },
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReply {
    pub action: Action,
}

//! Agent selection from the command line, and the subprocess agent bridge.

use std::collections::HashMap;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use findview_core::agents::{
    Agent, AgentError, ConstantAgent, FeatureDetector, Features, OracleAgent, OrbDetector, PrivilegedState,
    RuleAgent, RuleAgentConfig,
};
use findview_core::environment::{Action, Observation};
use findview_core::raster::RgbImage;
use findview_server::protocol::{
    decode_observation, encode_observation, parse_json, read_frame, write_frame, write_json, AgentReply,
    AgentRequest, ProtocolError,
};

/// `oracle`, `rule-orb[:<d_thresh>|:inf]`, `constant:<action>` or
/// `remote:<program> [args...]`.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    Oracle,
    RuleOrb(RuleAgentConfig),
    Constant(Action),
    Remote { program: String, args: Vec<String> },
}

impl FromStr for AgentSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        match (head, rest) {
            ("oracle", None) => Ok(AgentSpec::Oracle),
            ("rule-orb", None) => Ok(AgentSpec::RuleOrb(RuleAgentConfig::default())),
            ("rule-orb", Some(t)) => Ok(AgentSpec::RuleOrb(RuleAgentConfig {
                d_thresh: parse_threshold(t)?,
                ..RuleAgentConfig::default()
            })),
            ("constant", Some(a)) => Ok(AgentSpec::Constant(a.parse()?)),
            ("remote", Some(cmd)) => {
                let mut words = cmd.split_whitespace().map(str::to_string);
                let program = words.next().ok_or("remote agent needs a command")?;
                Ok(AgentSpec::Remote {
                    program,
                    args: words.collect(),
                })
            }
            _ => Err(format!(
                "unknown agent {s:?}; expected oracle, rule-orb[:D], constant:<action> or remote:<command>"
            )),
        }
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentSpec::Oracle => f.write_str("oracle"),
            AgentSpec::RuleOrb(c) => match c.d_thresh {
                Some(d) => write!(f, "rule-orb:{d}"),
                None => f.write_str("rule-orb"),
            },
            AgentSpec::Constant(a) => write!(f, "constant:{a}"),
            AgentSpec::Remote { program, args } => {
                write!(f, "remote:{program}")?;
                args.iter().try_for_each(|a| write!(f, " {a}"))
            }
        }
    }
}

/// A descriptor threshold: a non-negative integer, or `inf` for no limit.
pub fn parse_threshold(s: &str) -> Result<Option<u32>, String> {
    match s.trim() {
        "inf" | "∞" => Ok(None),
        t => t.parse().map(Some).map_err(|_| format!("bad threshold {t:?}")),
    }
}

impl AgentSpec {
    pub fn build(&self) -> Result<Box<dyn Agent>, AgentError> {
        Ok(match self {
            AgentSpec::Oracle => Box::new(OracleAgent),
            AgentSpec::RuleOrb(cfg) => Box::new(RuleAgent::orb(*cfg)?),
            AgentSpec::Constant(a) => Box::new(ConstantAgent(*a)),
            AgentSpec::Remote { program, args } => Box::new(RemoteAgent::new(program, args.clone())),
        })
    }
}

/// Wraps a detector and remembers its output per image content. The rule
/// agent sees the same views again and again during a threshold sweep.
pub struct MemoDetector<D> {
    inner: D,
    cache: Mutex<HashMap<u64, Features>>,
}

impl<D: FeatureDetector> MemoDetector<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            cache: Mutex::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("memo lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for MemoDetector<OrbDetector> {
    fn default() -> Self {
        Self::new(OrbDetector::default())
    }
}

impl<D: FeatureDetector> FeatureDetector for MemoDetector<D> {
    fn detect(&self, img: &RgbImage) -> Result<Features, AgentError> {
        let mut h = DefaultHasher::new();
        img.dimensions().hash(&mut h);
        img.as_bytes().hash(&mut h);
        let key = h.finish();
        if let Some(f) = self.cache.lock().expect("memo lock").get(&key) {
            return Ok(f.clone());
        }
        let f = self.inner.detect(img)?;
        self.cache.lock().expect("memo lock").insert(key, f.clone());
        Ok(f)
    }
}

/// Rule agents sharing one memoising detector.
pub fn memo_rule_agent(cfg: RuleAgentConfig, detector: Arc<MemoDetector<OrbDetector>>) -> Result<RuleAgent, AgentError> {
    Ok(RuleAgent::new(cfg, detector)?.with_name("rule-orb"))
}

struct Pipe {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

/// An agent living in a child process that speaks the agent protocol on its
/// stdin/stdout. The process starts on first use; once it fails, every later
/// call fails too.
pub struct RemoteAgent {
    program: String,
    args: Vec<String>,
    name: String,
    pipe: Option<Pipe>,
    broken: Option<String>,
    pending_reset: bool,
    step: u32,
}

impl RemoteAgent {
    pub fn new(program: &str, args: Vec<String>) -> Self {
        Self {
            name: format!("remote:{program}"),
            program: program.into(),
            args,
            pipe: None,
            broken: None,
            pending_reset: false,
            step: 0,
        }
    }

    fn pipe(&mut self) -> Result<&mut Pipe, String> {
        if self.pipe.is_none() {
            let mut child = Command::new(&self.program)
                .args(&self.args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| format!("cannot start {}: {e}", self.program))?;
            let stdin = BufWriter::new(child.stdin.take().expect("piped"));
            let stdout = BufReader::new(child.stdout.take().expect("piped"));
            self.pipe = Some(Pipe { child, stdin, stdout });
        }
        Ok(self.pipe.as_mut().expect("just set"))
    }

    fn exchange(&mut self, obs: &Observation, step: u32) -> Result<Action, String> {
        let reset = std::mem::take(&mut self.pending_reset);
        let frame = encode_observation(&obs.target, &obs.current).map_err(|e| e.to_string())?;
        let p = self.pipe()?;
        let io = |e: ProtocolError| e.to_string();
        if reset {
            write_json(&mut p.stdin, &AgentRequest::Reset).map_err(io)?;
        }
        write_json(&mut p.stdin, &AgentRequest::Act { step }).map_err(io)?;
        write_frame(&mut p.stdin, &frame).map_err(io)?;
        p.stdin.flush().map_err(|e| e.to_string())?;
        let reply = read_frame(&mut p.stdout)
            .map_err(io)?
            .ok_or("agent closed its output")?;
        let reply: AgentReply = parse_json(&reply).map_err(io)?;
        Ok(reply.action)
    }
}

impl Agent for RemoteAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.pending_reset = true;
        self.step = 0;
    }

    fn act(&mut self, obs: &Observation, _: Option<&PrivilegedState>) -> Result<Action, AgentError> {
        if let Some(e) = &self.broken {
            return Err(AgentError::Remote(e.clone()));
        }
        let step = self.step;
        self.step += 1;
        self.exchange(obs, step).map_err(|e| {
            self.broken = Some(e.clone());
            if let Some(mut p) = self.pipe.take() {
                let _ = p.child.kill();
                let _ = p.child.wait();
            }
            AgentError::Remote(e)
        })
    }
}

impl Drop for RemoteAgent {
    fn drop(&mut self) {
        if let Some(mut p) = self.pipe.take() {
            let _ = write_json(&mut p.stdin, &AgentRequest::Close);
            let _ = p.stdin.flush();
            drop(p.stdin);
            let _ = p.child.wait();
        }
    }
}

/// Serves `agent` over the agent protocol until close or end of input.
pub fn serve_agent(agent: &mut dyn Agent, reader: impl Read, writer: impl Write) -> Result<(), ProtocolError> {
    if agent.requires_privileged_state() {
        return Err(ProtocolError::Malformed(format!(
            "{} needs the true rotation and cannot run remotely",
            agent.name()
        )));
    }
    let mut r = BufReader::new(reader);
    let mut w = BufWriter::new(writer);
    while let Some(frame) = read_frame(&mut r)? {
        match parse_json::<AgentRequest>(&frame)? {
            AgentRequest::Reset => agent.reset(),
            AgentRequest::Act { .. } => {
                let obs = read_frame(&mut r)?.ok_or_else(|| ProtocolError::Malformed("missing observation".into()))?;
                let (target, current) = decode_observation(&obs)?;
                let obs = Observation {
                    target: Arc::new(target),
                    current: Arc::new(current),
                };
                let action = agent
                    .act(&obs, None)
                    .map_err(|e| ProtocolError::Malformed(format!("agent failed: {e}")))?;
                write_json(&mut w, &AgentReply { action })?;
                w.flush()?;
            }
            AgentRequest::Close => break,
        }
    }
    Ok(())
}

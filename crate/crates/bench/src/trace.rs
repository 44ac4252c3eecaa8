//! Per-step trace records: `episode,t,action,reward,pitch,yaw`.
//!
//! Each episode starts with a `reset` line at `t = 0` holding the initial
//! rotation. Every later line is one action and the rotation after it. An
//! agent failure ends the episode with an `abort` line.

use std::fmt;
use std::str::FromStr;

use findview_core::environment::{Action, EpisodeSpec, Pose};
use findview_core::metrics::EpisodeOutcome;

use crate::BenchError;

pub const TRACE_HEADER: &str = "episode,t,action,reward,pitch,yaw";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceAction {
    Reset,
    Act(Action),
    Abort,
}

impl fmt::Display for TraceAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceAction::Reset => f.write_str("reset"),
            TraceAction::Act(a) => f.write_str(a.name()),
            TraceAction::Abort => f.write_str("abort"),
        }
    }
}

impl FromStr for TraceAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reset" => Ok(TraceAction::Reset),
            "abort" => Ok(TraceAction::Abort),
            a => a.parse().map(TraceAction::Act),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceLine {
    /// Index in the cell's episode list.
    pub episode: usize,
    pub t: u32,
    pub action: TraceAction,
    pub reward: f64,
    pub pose: Pose,
}

impl fmt::Display for TraceLine {
    // `{}` on f64 prints the shortest exact round trip, so traces are
    // byte-stable.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.episode, self.t, self.action, self.reward, self.pose.pitch, self.pose.yaw
        )
    }
}

impl FromStr for TraceLine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let f: Vec<&str> = s.trim_end().split(',').collect();
        let [episode, t, action, reward, pitch, yaw] = f[..] else {
            return Err(format!("expected 6 fields, found {}", f.len()));
        };
        let num = |name: &str, v: &str| format!("bad {name} {v:?}");
        Ok(TraceLine {
            episode: episode.parse().map_err(|_| num("episode", episode))?,
            t: t.parse().map_err(|_| num("step", t))?,
            action: action.parse()?,
            reward: reward.parse().map_err(|_| num("reward", reward))?,
            pose: Pose {
                pitch: pitch.parse().map_err(|_| num("pitch", pitch))?,
                yaw: yaw.parse().map_err(|_| num("yaw", yaw))?,
            },
        })
    }
}

/// True when `lines` hold a whole episode: it stopped, aborted or ran out of
/// steps.
pub fn is_complete(lines: &[TraceLine], max_steps: u32) -> bool {
    match lines.last() {
        Some(l) => matches!(l.action, TraceAction::Act(Action::Stop) | TraceAction::Abort) || l.t >= max_steps,
        None => false,
    }
}

/// Rebuilds an episode outcome from its trace lines.
pub fn outcome_from_trace(spec: &EpisodeSpec, lines: &[TraceLine]) -> Result<EpisodeOutcome, BenchError> {
    let bad = |reason: String| BenchError::Trace { line: 0, reason };
    let first = lines.first().ok_or_else(|| bad("empty episode".into()))?;
    if first.action != TraceAction::Reset || first.t != 0 {
        return Err(bad(format!("episode {} does not start with a reset", first.episode)));
    }
    if first.pose != spec.init {
        return Err(bad(format!(
            "episode {} starts at {:?}, but its spec says {:?}",
            first.episode, first.pose, spec.init
        )));
    }
    let last = lines.last().expect("non-empty");
    let stop_called = last.action == TraceAction::Act(Action::Stop);
    Ok(EpisodeOutcome {
        episode: first.episode.to_string(),
        init: spec.init,
        final_pose: last.pose,
        target: spec.target,
        path_length: lines
            .iter()
            .filter(|l| matches!(l.action, TraceAction::Act(a) if a.is_move()))
            .count() as u32,
        stop_called,
        forced: !stop_called,
    })
}

/// Splits trace text into whole episodes, numbered `0, 1, ...` in order.
/// Returns the episodes and the byte length of the text they occupy; a
/// trailing partial episode or torn line is left out.
pub fn parse_trace(text: &str, max_steps: u32) -> Result<(Vec<Vec<TraceLine>>, usize), BenchError> {
    let mut done = Vec::new();
    let mut current: Vec<TraceLine> = Vec::new();
    let mut offset = 0;
    let mut kept = 0;
    for (n, raw) in text.split_inclusive('\n').enumerate() {
        offset += raw.len();
        if n == 0 && raw.trim_end() == TRACE_HEADER {
            kept = offset;
            continue;
        }
        if !raw.ends_with('\n') {
            break; // torn final write
        }
        let line: TraceLine = raw
            .parse()
            .map_err(|reason| BenchError::Trace { line: n + 1, reason })?;
        if line.episode != done.len() {
            return Err(BenchError::Trace {
                line: n + 1,
                reason: format!("expected episode {}, found {}", done.len(), line.episode),
            });
        }
        if line.action == TraceAction::Reset && !current.is_empty() {
            return Err(BenchError::Trace {
                line: n + 1,
                reason: "reset inside an unfinished episode".into(),
            });
        }
        current.push(line);
        if is_complete(&current, max_steps) {
            let ep = std::mem::take(&mut current);
            done.push(ep);
            kept = offset;
        }
    }
    Ok((done, kept))
}

pub fn format_episode(lines: &[TraceLine]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(episode: usize, t: u32, action: TraceAction, yaw: i32) -> TraceLine {
        TraceLine {
            episode,
            t,
            action,
            reward: 0.1,
            pose: Pose::new(0, yaw),
        }
    }

    fn spec() -> EpisodeSpec {
        EpisodeSpec {
            pano: "p".into(),
            init: Pose::new(0, 0),
            target: Pose::new(0, 2),
            difficulty: None,
            fov: 90,
            corruption: None,
            seed: 0,
        }
    }

    #[test]
    fn lines_round_trip() {
        let l = TraceLine {
            episode: 3,
            t: 7,
            action: TraceAction::Act(Action::Left),
            reward: -0.010000000000000009,
            pose: Pose::new(-4, 179),
        };
        assert_eq!(l.to_string(), "3,7,left,-0.010000000000000009,-4,179");
        assert_eq!(l.to_string().parse::<TraceLine>().unwrap(), l);
        assert!("1,2,jump,0,0,0".parse::<TraceLine>().is_err());
        assert!("1,2,up,0,0".parse::<TraceLine>().is_err());
    }

    #[test]
    fn outcome_counts_moves_only() {
        let lines = [
            line(0, 0, TraceAction::Reset, 0),
            line(0, 1, TraceAction::Act(Action::Right), 1),
            line(0, 2, TraceAction::Act(Action::Right), 2),
            line(0, 3, TraceAction::Act(Action::Stop), 2),
        ];
        let o = outcome_from_trace(&spec(), &lines).unwrap();
        assert_eq!((o.path_length, o.stop_called, o.forced), (2, true, false));
        assert_eq!(o.final_pose, Pose::new(0, 2));
        let aborted = [line(0, 0, TraceAction::Reset, 0), line(0, 1, TraceAction::Abort, 0)];
        let o = outcome_from_trace(&spec(), &aborted).unwrap();
        assert_eq!((o.path_length, o.stop_called, o.forced), (0, false, true));
        assert!(outcome_from_trace(&spec(), &aborted[1..]).is_err());
    }

    #[test]
    fn partial_trailing_episode_is_dropped() {
        let mut text = format!("{TRACE_HEADER}\n");
        text += &format_episode(&[line(0, 0, TraceAction::Reset, 0), line(0, 1, TraceAction::Act(Action::Stop), 0)]);
        let whole = text.len();
        text += &format_episode(&[line(1, 0, TraceAction::Reset, 0), line(1, 1, TraceAction::Act(Action::Up), 0)]);
        text += "1,2,u";
        let (eps, kept) = parse_trace(&text, 100).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(kept, whole);
        // max_steps completes an episode too
        let (eps, _) = parse_trace(&text, 1).unwrap();
        assert_eq!(eps.len(), 2);
    }

    #[test]
    fn out_of_order_episodes_are_rejected() {
        let text = format_episode(&[line(1, 0, TraceAction::Reset, 0)]);
        assert!(parse_trace(&text, 10).is_err());
    }
}

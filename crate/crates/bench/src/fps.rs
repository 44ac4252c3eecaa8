//! Agent speed: wall-clock over `act` calls only, rendering excluded.

use std::sync::Arc;
use std::time::{Duration, Instant};

use findview_core::agents::{Agent, PrivilegedState};
use findview_core::environment::{EpisodeSpec, FindViewEnv, PanoramaSource};

use crate::runner::env_for_fov;
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsReport {
    pub fps: f64,
    /// Timed calls, warmup excluded.
    pub calls: usize,
    pub elapsed: Duration,
}

impl FpsReport {
    pub fn formatted(&self) -> String {
        format!("{:.2}", self.fps)
    }
}

/// Plays `episodes` in order, cycling until `calls` timed `act` calls have
/// been made after the first `warmup` calls. Episodes that end early (stop,
/// step limit or agent error) move on to the next one.
pub fn measure_fps(
    agent: &mut dyn Agent,
    episodes: &[EpisodeSpec],
    panoramas: Arc<dyn PanoramaSource>,
    max_steps: u32,
    warmup: usize,
    calls: usize,
) -> Result<FpsReport, BenchError> {
    let first = episodes.first().ok_or(BenchError::NoEpisodes)?;
    let mut env = FindViewEnv::new(env_for_fov(first.fov, max_steps), panoramas)?;
    let privileged = agent.requires_privileged_state();
    let mut made = 0usize;
    let mut timed = Duration::ZERO;
    'outer: for spec in episodes.iter().cycle() {
        agent.reset();
        let mut r = env.reset(spec)?;
        let mut progressed = false;
        while !r.done {
            let state = PrivilegedState {
                pose: r.info.pose,
                target: r.info.target,
            };
            let t0 = Instant::now();
            let res = agent.act(&r.observation, privileged.then_some(&state));
            let dt = t0.elapsed();
            let Ok(action) = res else { break };
            progressed = true;
            if made >= warmup {
                timed += dt;
            }
            made += 1;
            if made >= warmup + calls {
                break 'outer;
            }
            r = env.step(action)?;
        }
        if !progressed && episodes.len() == 1 {
            return Err(BenchError::Config(format!("{} never produced an action", agent.name())));
        }
    }
    let n = made.saturating_sub(warmup);
    let secs = timed.as_secs_f64();
    Ok(FpsReport {
        fps: if secs > 0.0 { n as f64 / secs } else { f64::INFINITY },
        calls: n,
        elapsed: timed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use findview_core::agents::{ConstantAgent, OracleAgent};
    use findview_core::dataset::PanoramaStore;
    use findview_core::environment::{Action, Pose};

    fn spec() -> EpisodeSpec {
        EpisodeSpec {
            pano: "synth:voronoi:2:64x32".into(),
            init: Pose::new(0, 0),
            target: Pose::new(3, 4),
            difficulty: None,
            fov: 90,
            corruption: None,
            seed: 1,
        }
    }

    #[test]
    fn counts_exactly_the_requested_calls() {
        let r = measure_fps(
            &mut ConstantAgent(Action::Left),
            &[spec()],
            Arc::new(PanoramaStore::new()),
            20,
            5,
            50,
        )
        .unwrap();
        assert_eq!(r.calls, 50);
        assert!(r.fps > 0.0);
        assert_eq!(r.formatted().split('.').nth(1).unwrap().len(), 2);
    }

    #[test]
    fn oracle_cycles_short_episodes() {
        let r = measure_fps(&mut OracleAgent, &[spec()], Arc::new(PanoramaStore::new()), 100, 0, 30).unwrap();
        assert_eq!(r.calls, 30);
    }

    #[test]
    fn no_episodes_is_an_error() {
        let r = measure_fps(&mut OracleAgent, &[], Arc::new(PanoramaStore::new()), 10, 0, 1);
        assert!(matches!(r, Err(BenchError::NoEpisodes)));
    }
}

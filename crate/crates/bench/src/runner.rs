//! Runs agents over episode sets and writes traces and result tables.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use findview_core::agents::{Agent, PrivilegedState};
use findview_core::corruptions::{CorruptionKind, CorruptionSpec, Severity};
use findview_core::environment::{EnvConfig, EpisodeSpec, FindViewEnv, PanoramaSource};
use findview_core::metrics::{aggregate, rows_to_csv, rows_to_table, BenchmarkRow, EpisodeOutcome};
use rayon::prelude::*;

use crate::agents::AgentSpec;
use crate::trace::{format_episode, outcome_from_trace, parse_trace, TraceAction, TraceLine, TRACE_HEADER};
use crate::BenchError;

/// Environment settings matching an episode set's field of view.
pub fn env_for_fov(fov: u32, max_steps: u32) -> EnvConfig {
    let base = if fov == 60 { EnvConfig::fov60() } else { EnvConfig::default() };
    EnvConfig {
        fov_deg: fov as f64,
        max_steps,
        ..base
    }
}

/// Runs one episode to its end and returns its trace lines.
///
/// An agent error ends the episode with an `abort` line carrying the forced
/// termination penalty; environment errors are returned.
pub fn run_episode(
    env: &mut FindViewEnv,
    agent: &mut dyn Agent,
    index: usize,
    spec: &EpisodeSpec,
) -> Result<Vec<TraceLine>, BenchError> {
    agent.reset();
    let mut r = env.reset(spec)?;
    let mut lines = vec![TraceLine {
        episode: index,
        t: 0,
        action: TraceAction::Reset,
        reward: r.reward,
        pose: r.info.pose,
    }];
    let privileged = agent.requires_privileged_state();
    while !r.done {
        let state = PrivilegedState {
            pose: r.info.pose,
            target: r.info.target,
        };
        let action = match agent.act(&r.observation, privileged.then_some(&state)) {
            Ok(a) => a,
            Err(_) => {
                lines.push(TraceLine {
                    episode: index,
                    t: r.info.step + 1,
                    action: TraceAction::Abort,
                    reward: -env.config().reward.alpha,
                    pose: r.info.pose,
                });
                return Ok(lines);
            }
        };
        r = env.step(action)?;
        lines.push(TraceLine {
            episode: index,
            t: r.info.step,
            action: TraceAction::Act(action),
            reward: r.reward,
            pose: r.info.pose,
        });
    }
    Ok(lines)
}

/// One (difficulty, corruption) combination.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub episodes: Vec<EpisodeSpec>,
}

impl Cell {
    /// `difficulty` alone when clean, `difficulty/kind:severity` otherwise.
    /// Episodes get the corruption with their own seed.
    pub fn new(difficulty: &str, episodes: &[EpisodeSpec], corruption: Option<(CorruptionKind, Severity)>) -> Self {
        let label = match corruption {
            None => difficulty.to_string(),
            Some((k, s)) => format!("{difficulty}/{k}:{}", s.get()),
        };
        let episodes = episodes
            .iter()
            .map(|e| EpisodeSpec {
                corruption: corruption
                    .map(|(kind, severity)| CorruptionSpec {
                        kind,
                        severity,
                        seed: e.seed,
                    })
                    .or(e.corruption),
                ..e.clone()
            })
            .collect();
        Self { label, episodes }
    }

    pub fn trace_file_name(&self) -> String {
        let safe: String = self
            .label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        format!("{safe}.csv")
    }

    pub fn fov(&self) -> Result<u32, BenchError> {
        let fov = self.episodes.first().ok_or(BenchError::NoEpisodes)?.fov;
        if self.episodes.iter().any(|e| e.fov != fov) {
            return Err(BenchError::Config(format!("cell {} mixes fields of view", self.label)));
        }
        Ok(fov)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub agent: AgentSpec,
    pub max_steps: u32,
    /// Episodes run in parallel per flushed chunk.
    pub chunk: usize,
}

impl RunConfig {
    pub fn new(agent: AgentSpec) -> Self {
        Self {
            agent,
            max_steps: EnvConfig::default().max_steps,
            chunk: 4 * rayon::current_num_threads().max(1),
        }
    }
}

/// Runs a cell, appending to `trace_path`. Whole episodes already in the
/// trace are kept and not rerun; a torn tail is truncated first.
pub fn run_cell(
    cell: &Cell,
    cfg: &RunConfig,
    panoramas: Arc<dyn PanoramaSource>,
    trace_path: &Path,
) -> Result<Vec<EpisodeOutcome>, BenchError> {
    let env_cfg = env_for_fov(cell.fov()?, cfg.max_steps);
    cfg.agent.build()?;

    let io = |e: std::io::Error| BenchError::Io(trace_path.to_path_buf(), e);
    let mut outcomes = Vec::with_capacity(cell.episodes.len());
    let existing = match fs::read_to_string(trace_path) {
        Ok(t) => Some(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io(e)),
    };
    let mut file = match existing {
        Some(text) if !text.is_empty() => {
            let (done, kept) = parse_trace(&text, cfg.max_steps)?;
            if done.len() > cell.episodes.len() {
                return Err(BenchError::Trace {
                    line: 0,
                    reason: format!("{} has more episodes than the cell", trace_path.display()),
                });
            }
            for (spec, lines) in cell.episodes.iter().zip(&done) {
                outcomes.push(outcome_from_trace(spec, lines)?);
            }
            let f = OpenOptions::new().write(true).open(trace_path).map_err(io)?;
            f.set_len(kept as u64).map_err(io)?;
            let mut f = OpenOptions::new().append(true).open(trace_path).map_err(io)?;
            if kept == 0 {
                writeln!(f, "{TRACE_HEADER}").map_err(io)?;
            }
            f
        }
        _ => {
            if let Some(dir) = trace_path.parent() {
                fs::create_dir_all(dir).map_err(|e| BenchError::Io(dir.to_path_buf(), e))?;
            }
            let mut f = fs::File::create(trace_path).map_err(io)?;
            writeln!(f, "{TRACE_HEADER}").map_err(io)?;
            f
        }
    };

    let todo: Vec<(usize, &EpisodeSpec)> = cell.episodes.iter().enumerate().skip(outcomes.len()).collect();
    for chunk in todo.chunks(cfg.chunk.max(1)) {
        let runs: Vec<Result<Vec<TraceLine>, BenchError>> = chunk
            .par_iter()
            .map_init(
                || {
                    (
                        cfg.agent.build().expect("agent spec validated above"),
                        FindViewEnv::new(env_cfg, panoramas.clone()),
                    )
                },
                |(agent, env), (i, spec)| {
                    let env = env.as_mut().map_err(|e| BenchError::Config(e.to_string()))?;
                    run_episode(env, agent.as_mut(), *i, spec)
                },
            )
            .collect();
        for ((_, spec), run) in chunk.iter().zip(runs) {
            let lines = run?;
            file.write_all(format_episode(&lines).as_bytes()).map_err(io)?;
            outcomes.push(outcome_from_trace(spec, &lines)?);
        }
        file.flush().map_err(io)?;
    }
    Ok(outcomes)
}

/// Recomputes a cell's outcomes from a finished trace file.
pub fn outcomes_from_trace_file(
    cell: &Cell,
    trace_path: &Path,
    max_steps: u32,
) -> Result<Vec<EpisodeOutcome>, BenchError> {
    let text = fs::read_to_string(trace_path).map_err(|e| BenchError::Io(trace_path.to_path_buf(), e))?;
    let (done, _) = parse_trace(&text, max_steps)?;
    if done.len() != cell.episodes.len() {
        return Err(BenchError::Trace {
            line: 0,
            reason: format!(
                "{} holds {} whole episodes, expected {}",
                trace_path.display(),
                done.len(),
                cell.episodes.len()
            ),
        });
    }
    cell.episodes
        .iter()
        .zip(&done)
        .map(|(spec, lines)| outcome_from_trace(spec, lines))
        .collect()
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub run: RunConfig,
    /// (difficulty label, episodes) per episode file.
    pub sets: Vec<(String, Vec<EpisodeSpec>)>,
    /// `None` is the clean setting.
    pub corruptions: Vec<Option<(CorruptionKind, Severity)>>,
    pub out_dir: PathBuf,
    pub step_deg: i32,
}

pub fn cells(cfg: &BenchConfig) -> Vec<Cell> {
    let corruptions: Vec<_> = if cfg.corruptions.is_empty() {
        vec![None]
    } else {
        cfg.corruptions.clone()
    };
    cfg.sets
        .iter()
        .flat_map(|(label, eps)| corruptions.iter().map(move |c| Cell::new(label, eps, *c)))
        .collect()
}

/// Runs every cell, then writes `results.csv`, `results.txt` and
/// `traces/<cell>.csv` under the output directory.
pub fn run_benchmark(cfg: &BenchConfig, panoramas: Arc<dyn PanoramaSource>) -> Result<Vec<BenchmarkRow>, BenchError> {
    let traces = cfg.out_dir.join("traces");
    let mut rows = Vec::new();
    for cell in cells(cfg) {
        let outcomes = run_cell(&cell, &cfg.run, panoramas.clone(), &traces.join(cell.trace_file_name()))?;
        rows.push(aggregate(&cell.label, &outcomes, cfg.step_deg)?);
    }
    write_results(&cfg.out_dir, &format!("agent: {}", cfg.run.agent), &rows)?;
    Ok(rows)
}

pub fn write_results(out_dir: &Path, title: &str, rows: &[BenchmarkRow]) -> Result<(), BenchError> {
    let io = |p: PathBuf| move |e| BenchError::Io(p, e);
    fs::create_dir_all(out_dir).map_err(io(out_dir.to_path_buf()))?;
    let csv = out_dir.join("results.csv");
    fs::write(&csv, rows_to_csv(rows)).map_err(io(csv.clone()))?;
    let txt = out_dir.join("results.txt");
    fs::write(&txt, rows_to_table(title, rows)).map_err(io(txt.clone()))?;
    Ok(())
}

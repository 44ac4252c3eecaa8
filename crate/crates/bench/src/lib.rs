//! Benchmark harness for FindView agents: episode runs with resumable
//! traces, result tables, a descriptor-threshold sweep and agent timing.

use std::path::PathBuf;

use findview_core::agents::AgentError;
use findview_core::environment::EnvError;
use findview_core::metrics::MetricsError;
use thiserror::Error;

pub mod agents;
pub mod fps;
pub mod grid;
pub mod runner;
pub mod trace;

pub use agents::{serve_agent, AgentSpec, MemoDetector, RemoteAgent};
pub use fps::{measure_fps, FpsReport};
pub use grid::{default_grid, grid_search, parse_grid, GridSearchResult};
pub use runner::{run_benchmark, run_cell, run_episode, BenchConfig, Cell, RunConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("no episodes")]
    NoEpisodes,
    #[error("{0}")]
    Config(String),
}

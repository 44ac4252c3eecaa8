use std::fs;
use std::sync::Arc;

use findview_bench::runner::{cells, outcomes_from_trace_file};
use findview_bench::{
    grid_search, measure_fps, run_benchmark, run_cell, AgentSpec, BenchConfig, Cell, RunConfig,
};
use findview_core::agents::{ConstantAgent, RuleAgentConfig};
use findview_core::dataset::{generate_episode_set, EpisodeSetConfig, PanoramaStore};
use findview_core::environment::{Action, Difficulty, EnvConfig, EpisodeSpec, SamplerConfig};
use findview_core::metrics::aggregate;
use findview_core::projection::EquirectImage;
use findview_core::raster::RgbImage;

fn episodes(difficulty: Difficulty, n: usize, seed: u64) -> Vec<EpisodeSpec> {
    let ids: Vec<String> = (0..n).map(|i| format!("synth:grid-tags:{i}:256x128")).collect();
    generate_episode_set(
        &ids,
        &EpisodeSetConfig {
            difficulty,
            per_pano: 1,
            sampler: SamplerConfig::for_env(&EnvConfig::default()),
            corruption: None,
            seed,
        },
    )
    .unwrap()
}

fn store() -> Arc<PanoramaStore> {
    Arc::new(PanoramaStore::new())
}

fn config(agent: AgentSpec, out: &std::path::Path, max_steps: u32) -> BenchConfig {
    BenchConfig {
        run: RunConfig {
            max_steps,
            ..RunConfig::new(agent)
        },
        sets: vec![
            ("easy".into(), episodes(Difficulty::Easy, 4, 1)),
            ("hard".into(), episodes(Difficulty::Hard, 2, 2)),
        ],
        corruptions: vec![None, Some(("gaussian-noise".parse().unwrap(), 3.try_into().unwrap()))],
        out_dir: out.to_path_buf(),
        step_deg: 1,
    }
}

#[test]
fn oracle_rows_are_perfect_and_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(AgentSpec::Oracle, dir.path(), 5000);
    let rows = run_benchmark(&cfg, store()).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!((r.eps, r.omega_stop, r.omega_perf, r.spl), (0.0, 100.0, 100.0, 100.0), "{r:?}");
    }
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("difficulty,eps,"));
    assert!(csv.contains("easy/gaussian-noise:3,0.0000,100.0000"));
    assert!(dir.path().join("results.txt").exists());
    // Tables equal aggregation over the traces alone.
    for (cell, row) in cells(&cfg).iter().zip(&rows) {
        let path = dir.path().join("traces").join(cell.trace_file_name());
        let outcomes = outcomes_from_trace_file(cell, &path, 5000).unwrap();
        assert_eq!(&aggregate(&cell.label, &outcomes, 1).unwrap(), row);
    }
}

#[test]
fn never_stopping_agent_is_forced_out() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(AgentSpec::Constant(Action::Up), dir.path(), 30);
    cfg.corruptions = vec![None];
    let rows = run_benchmark(&cfg, store()).unwrap();
    for r in &rows {
        assert_eq!(r.omega_stop, 0.0);
        assert_eq!(r.n_stop, 0);
    }
    let cell = &cells(&cfg)[0];
    let outcomes =
        outcomes_from_trace_file(cell, &dir.path().join("traces").join(cell.trace_file_name()), 30).unwrap();
    assert!(outcomes.iter().all(|o| o.path_length == 30 && o.forced));
}

#[test]
fn reruns_and_resumes_give_identical_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = AgentSpec::RuleOrb(RuleAgentConfig::default());
    let cell = Cell::new("easy", &episodes(Difficulty::Easy, 3, 7), None);
    let cfg = RunConfig {
        max_steps: 60,
        chunk: 1,
        ..RunConfig::new(spec)
    };
    let full_a = run_cell(&cell, &cfg, store(), &a.path().join("t.csv")).unwrap();
    let text_a = fs::read_to_string(a.path().join("t.csv")).unwrap();

    // Interrupted run: keep the first episode and a torn slice of the next.
    let lines: Vec<&str> = text_a.lines().collect();
    let first_end = lines.iter().position(|l| l.starts_with("1,0,reset")).unwrap();
    let mut torn = lines[..first_end + 3].join("\n");
    torn.push_str("\n1,3,le");
    fs::write(b.path().join("t.csv"), torn).unwrap();
    let full_b = run_cell(&cell, &cfg, store(), &b.path().join("t.csv")).unwrap();
    assert_eq!(full_a, full_b);
    assert_eq!(text_a, fs::read_to_string(b.path().join("t.csv")).unwrap());

    // A finished trace is not rerun.
    let again = run_cell(&cell, &cfg, store(), &b.path().join("t.csv")).unwrap();
    assert_eq!(again, full_a);
    assert_eq!(text_a, fs::read_to_string(b.path().join("t.csv")).unwrap());
}

#[test]
fn crashing_remote_agent_counts_as_forced_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cell = Cell::new("easy", &episodes(Difficulty::Easy, 2, 3), None);
    let spec: AgentSpec = "remote:/nonexistent/agent-binary".parse().unwrap();
    let outcomes = run_cell(&cell, &RunConfig::new(spec), store(), &dir.path().join("t.csv")).unwrap();
    assert_eq!(outcomes.len(), 2);
    assert!(outcomes.iter().all(|o| o.forced && !o.stop_called && o.path_length == 0));
    let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",abort,")).count(), 2);
}

#[test]
fn remote_agent_through_the_cli_matches_in_process() {
    let exe = env!("CARGO_BIN_EXE_findview");
    let cell = Cell::new("easy", &episodes(Difficulty::Easy, 2, 5), None);
    let local = tempfile::tempdir().unwrap();
    let remote = tempfile::tempdir().unwrap();
    let cfg = |s: AgentSpec| RunConfig {
        max_steps: 40,
        ..RunConfig::new(s)
    };
    run_cell(&cell, &cfg("rule-orb:60".parse().unwrap()), store(), &local.path().join("t.csv")).unwrap();
    let spec: AgentSpec = format!("remote:{exe} agent --agent rule-orb:60").parse().unwrap();
    run_cell(&cell, &cfg(spec), store(), &remote.path().join("t.csv")).unwrap();
    assert_eq!(
        fs::read_to_string(local.path().join("t.csv")).unwrap(),
        fs::read_to_string(remote.path().join("t.csv")).unwrap()
    );
}

#[test]
fn grid_search_is_deterministic_and_breaks_ties_low() {
    let sets = vec![("easy".to_string(), episodes(Difficulty::Easy, 2, 9))];
    let grid = [None, Some(40), Some(10)];
    let run = || grid_search(&sets, &grid, RuleAgentConfig::default(), 60, 1, store()).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.grid, vec![Some(10), Some(40), None]);
    let row = &a.rows[0];
    let best = row.eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let first = a.grid[row.eps.iter().position(|e| *e == best).unwrap()];
    assert_eq!(row.argmin, first);

    let single = grid_search(&sets, &[Some(70)], RuleAgentConfig::default(), 60, 1, store()).unwrap();
    assert_eq!(single.rows[0].argmin, Some(70));
}

#[test]
fn insensitive_agent_ties_to_the_smallest_threshold() {
    // A featureless panorama yields zero matches at every threshold.
    let flat = store();
    flat.insert(
        "flat",
        EquirectImage::new(RgbImage::filled(256, 128, [90, 90, 90])).unwrap(),
    );
    let eps: Vec<EpisodeSpec> = episodes(Difficulty::Easy, 2, 4)
        .into_iter()
        .map(|e| EpisodeSpec { pano: "flat".into(), ..e })
        .collect();
    let r = grid_search(
        &[("easy".to_string(), eps)],
        &findview_bench::default_grid(),
        RuleAgentConfig::default(),
        25,
        1,
        flat,
    )
    .unwrap();
    assert!(r.rows[0].eps.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(r.rows[0].argmin, Some(10));
}

#[test]
fn no_op_agent_timing_is_dominated_by_harness_overhead() {
    let eps = episodes(Difficulty::Easy, 1, 1);
    let r = measure_fps(&mut ConstantAgent(Action::Left), &eps, store(), 5000, 10, 500).unwrap();
    assert_eq!(r.calls, 500);
    assert!(r.fps > 10_000.0, "{}", r.formatted());
}

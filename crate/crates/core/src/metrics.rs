//! Localization error, stopping rates and SPL over finished episodes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{angular_l1, Pose};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no episodes to aggregate")]
    EmptyInput,
    #[error("rotation {0:?} is not on the {1} degree grid")]
    OffGrid(Pose, i32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: String,
    pub init: Pose,
    pub final_pose: Pose,
    pub target: Pose,
    /// Movement actions taken; the stop action is not counted.
    pub path_length: u32,
    pub stop_called: bool,
    pub forced: bool,
}

pub fn localization_error(o: &EpisodeOutcome) -> u32 {
    angular_l1(o.target, o.final_pose)
}

/// Shortest movement-step count between two grid rotations.
pub fn oracle_path_length(init: Pose, target: Pose, step_deg: i32) -> Result<u32, MetricsError> {
    for p in [init, target] {
        if p.pitch % step_deg != 0 || p.yaw % step_deg != 0 {
            return Err(MetricsError::OffGrid(p, step_deg));
        }
    }
    Ok(angular_l1(init, target) / step_deg as u32)
}

fn spl_term(o: &EpisodeOutcome, step_deg: i32) -> f64 {
    if localization_error(o) != 0 {
        return 0.0;
    }
    let oracle = angular_l1(o.init, o.target) as f64 / step_deg as f64;
    let taken = o.path_length as f64;
    if oracle == 0.0 {
        return 1.0;
    }
    oracle / taken.max(oracle)
}

/// Success weighted by path length, in percent.
pub fn spl(outcomes: &[EpisodeOutcome], step_deg: i32) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = outcomes.iter().map(|o| spl_term(o, step_deg)).sum();
    Ok(100.0 * total / outcomes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub label: String,
    /// Mean localization error, degrees.
    pub eps: f64,
    pub omega_stop: f64,
    pub omega_perf: f64,
    pub spl: f64,
    pub n: usize,
    pub n_stop: usize,
    pub n_perf: usize,
}

pub fn aggregate(
    label: &str,
    outcomes: &[EpisodeOutcome],
    step_deg: i32,
) -> Result<BenchmarkRow, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = outcomes.len();
    let err_sum: u64 = outcomes.iter().map(|o| localization_error(o) as u64).sum();
    let n_stop = outcomes.iter().filter(|o| o.stop_called).count();
    let n_perf = outcomes
        .iter()
        .filter(|o| o.stop_called && localization_error(o) == 0)
        .count();
    Ok(BenchmarkRow {
        label: label.to_string(),
        eps: err_sum as f64 / n as f64,
        omega_stop: 100.0 * n_stop as f64 / n as f64,
        omega_perf: if n_stop == 0 {
            0.0
        } else {
            100.0 * n_perf as f64 / n_stop as f64
        },
        spl: spl(outcomes, step_deg)?,
        n,
        n_stop,
        n_perf,
    })
}

pub const CSV_HEADER: &str = "difficulty,eps,omega_stop,omega_perf,spl,n,n_stop,n_perf";

impl BenchmarkRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{},{},{}",
            self.label, self.eps, self.omega_stop, self.omega_perf, self.spl, self.n, self.n_stop, self.n_perf
        )
    }
}

pub fn rows_to_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Aligned text table with one row per cell.
pub fn rows_to_table(title: &str, rows: &[BenchmarkRow]) -> String {
    let label_w = rows
        .iter()
        .map(|r| r.label.len())
        .chain([10])
        .max()
        .unwrap_or(10);
    let mut out = String::new();
    writeln!(out, "{title}").unwrap();
    writeln!(
        out,
        "{:<label_w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}",
        "difficulty", "eps", "w_stop%", "w_perf%", "SPL%", "N"
    )
    .unwrap();
    writeln!(out, "{}", "-".repeat(label_w + 48)).unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<label_w$}  {:>8.2}  {:>8.1}  {:>8.1}  {:>8.1}  {:>6}",
            r.label, r.eps, r.omega_stop, r.omega_perf, r.spl, r.n
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(init: Pose, fin: Pose, target: Pose, l: u32, stopped: bool) -> EpisodeOutcome {
        EpisodeOutcome {
            episode: "e".into(),
            init,
            final_pose: fin,
            target,
            path_length: l,
            stop_called: stopped,
            forced: !stopped,
        }
    }

    #[test]
    fn error_examples() {
        let t = Pose::new(10, 20);
        assert_eq!(localization_error(&outcome(t, t, t, 0, true)), 0);
        assert_eq!(localization_error(&outcome(t, Pose::new(8, 25), t, 0, true)), 7);
        let t = Pose::new(0, 179);
        assert_eq!(localization_error(&outcome(t, Pose::new(0, -179), t, 0, true)), 2);
    }

    #[test]
    fn oracle_length_examples() {
        let o = Pose::new(0, 0);
        assert_eq!(oracle_path_length(o, o, 1), Ok(0));
        assert_eq!(oracle_path_length(o, Pose::new(3, 4), 1), Ok(7));
        assert_eq!(oracle_path_length(Pose::new(0, 170), Pose::new(0, -170), 1), Ok(20));
        assert_eq!(oracle_path_length(o, Pose::new(4, 6), 2), Ok(5));
        assert!(oracle_path_length(o, Pose::new(3, 0), 2).is_err());
    }

    #[test]
    fn spl_examples() {
        let (a, b) = (Pose::new(0, 0), Pose::new(3, 4));
        assert_eq!(spl(&[outcome(a, b, b, 7, true)], 1), Ok(100.0));
        assert_eq!(spl(&[outcome(a, b, b, 14, true)], 1), Ok(50.0));
        assert_eq!(spl(&[outcome(a, Pose::new(3, 5), b, 7, true)], 1), Ok(0.0));
        assert_eq!(spl(&[outcome(a, a, a, 0, true)], 1), Ok(100.0));
        assert_eq!(spl(&[], 1), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn aggregate_examples() {
        let (a, b) = (Pose::new(0, 0), Pose::new(3, 4));
        let perfect = vec![outcome(a, b, b, 7, true); 3];
        let r = aggregate("easy", &perfect, 1).unwrap();
        assert_eq!((r.eps, r.omega_stop, r.omega_perf, r.spl), (0.0, 100.0, 100.0, 100.0));

        let two = [outcome(a, Pose::new(3, 8), b, 11, true), outcome(a, b, b, 7, true)];
        let r = aggregate("easy", &two, 1).unwrap();
        assert_eq!(r.eps, 2.0);
        assert_eq!(r.omega_perf, 50.0);
        assert_eq!((r.n, r.n_stop, r.n_perf), (2, 2, 1));

        // forced finals still count toward eps and SPL
        let none = [outcome(a, b, b, 5000, false), outcome(a, a, b, 5000, false)];
        let r = aggregate("hard", &none, 1).unwrap();
        assert_eq!((r.omega_stop, r.omega_perf), (0.0, 0.0));
        assert_eq!(r.eps, 3.5);
        assert!((r.spl - 100.0 * (7.0 / 5000.0) / 2.0).abs() < 1e-12);
        assert!(aggregate("x", &[], 1).is_err());
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let (a, b) = (Pose::new(0, 0), Pose::new(3, 4));
        let mut v = vec![
            outcome(a, Pose::new(3, 8), b, 11, true),
            outcome(a, b, b, 9, true),
            outcome(a, a, b, 20, false),
        ];
        let r1 = aggregate("m", &v, 1).unwrap();
        v.reverse();
        assert_eq!(r1, aggregate("m", &v, 1).unwrap());
    }

    #[test]
    fn csv_and_table_layout() {
        let (a, b) = (Pose::new(0, 0), Pose::new(3, 4));
        let r = aggregate("easy", &[outcome(a, b, b, 7, true)], 1).unwrap();
        let csv = rows_to_csv(std::slice::from_ref(&r));
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        assert_eq!(csv.lines().nth(1), Some("easy,0.0000,100.0000,100.0000,100.0000,1,1,1"));
        let table = rows_to_table("orb", &[r]);
        assert!(table.lines().any(|l| l.starts_with("easy") && l.contains("100.0")));
    }
}

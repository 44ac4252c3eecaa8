//! Descriptor-threshold sweep for the rule agent.

use std::fmt::Write as _;
use std::sync::Arc;

use findview_core::agents::RuleAgentConfig;
use findview_core::environment::{EpisodeSpec, FindViewEnv, PanoramaSource};
use findview_core::metrics::aggregate;
use rayon::prelude::*;

use crate::agents::{memo_rule_agent, parse_threshold, MemoDetector};
use crate::runner::{env_for_fov, Cell};
use crate::trace::outcome_from_trace;
use crate::BenchError;

/// The default sweep: 10, 20, ..., 100 and no limit.
pub fn default_grid() -> Vec<Option<u32>> {
    (1..=10).map(|k| Some(10 * k)).chain([None]).collect()
}

/// Parses `10,20,...,100,inf`. An ellipsis continues the step between the
/// two values before it up to the value after it.
pub fn parse_grid(s: &str) -> Result<Vec<Option<u32>>, BenchError> {
    let bad = |m: String| BenchError::BadGrid(m);
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let mut out: Vec<Option<u32>> = Vec::new();
    let mut i = 0;
    while i < parts.len() {
        if parts[i] == "..." {
            let (Some(Some(a)), Some(Some(b))) = (out.len().checked_sub(2).map(|k| out[k]), out.last().copied()) else {
                return Err(bad("'...' needs two finite values before it".into()));
            };
            let end = parts
                .get(i + 1)
                .ok_or_else(|| bad("'...' needs a value after it".into()))
                .and_then(|p| parse_threshold(p).map_err(bad))?
                .ok_or_else(|| bad("'...' cannot run to inf".into()))?;
            if b <= a || end < b || (end - b) % (b - a) != 0 {
                return Err(bad(format!("cannot continue {a},{b} to {end}")));
            }
            out.extend((1..=(end - b) / (b - a)).map(|k| Some(b + k * (b - a))));
            i += 2;
        } else {
            out.push(parse_threshold(parts[i]).map_err(bad)?);
            i += 1;
        }
    }
    Ok(out)
}

/// Sorted ascending with `inf` last, duplicates removed. This is the
/// tie-break order.
fn canonical(grid: &[Option<u32>]) -> Vec<Option<u32>> {
    let mut g = grid.to_vec();
    g.sort_by_key(|v| v.map_or(u64::MAX, u64::from));
    g.dedup();
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub label: String,
    /// Mean localization error per grid value, in grid order.
    pub eps: Vec<f64>,
    pub argmin: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub grid: Vec<Option<u32>>,
    pub rows: Vec<GridRow>,
}

fn fmt_threshold(v: Option<u32>) -> String {
    v.map_or("inf".into(), |d| d.to_string())
}

impl GridSearchResult {
    /// `difficulty,d_thresh,eps,argmin` with one line per grid cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("difficulty,d_thresh,eps,argmin\n");
        for r in &self.rows {
            for (g, e) in self.grid.iter().zip(&r.eps) {
                writeln!(out, "{},{},{:.4},{}", r.label, fmt_threshold(*g), e, *g == r.argmin).unwrap();
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12}", "difficulty");
        for g in &self.grid {
            write!(out, "{:>8}", fmt_threshold(*g)).unwrap();
        }
        out.push_str("    best\n");
        for r in &self.rows {
            write!(out, "{:<12}", r.label).unwrap();
            for e in &r.eps {
                write!(out, "{e:>8.2}").unwrap();
            }
            writeln!(out, "{:>8}", fmt_threshold(r.argmin)).unwrap();
        }
        out
    }
}

/// Evaluates the rule agent at every grid value on each validation set and
/// picks the value with the lowest mean localization error per set. Ties go
/// to the smallest threshold, with `inf` largest.
pub fn grid_search(
    sets: &[(String, Vec<EpisodeSpec>)],
    grid: &[Option<u32>],
    base: RuleAgentConfig,
    max_steps: u32,
    step_deg: i32,
    panoramas: Arc<dyn PanoramaSource>,
) -> Result<GridSearchResult, BenchError> {
    if grid.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    let grid = canonical(grid);
    let detector = Arc::new(MemoDetector::default());
    let mut rows = Vec::new();
    for (label, episodes) in sets {
        let cell = Cell::new(label, episodes, None);
        let env_cfg = env_for_fov(cell.fov()?, max_steps);
        let mut eps = Vec::with_capacity(grid.len());
        for &d in &grid {
            let cfg = RuleAgentConfig { d_thresh: d, ..base };
            memo_rule_agent(cfg, detector.clone())?;
            let outcomes = cell
                .episodes
                .par_iter()
                .enumerate()
                .map_init(
                    || {
                        (
                            memo_rule_agent(cfg, detector.clone()).expect("validated above"),
                            FindViewEnv::new(env_cfg, panoramas.clone()),
                        )
                    },
                    |(agent, env), (i, spec)| {
                        let env = env.as_mut().map_err(|e| BenchError::Config(e.to_string()))?;
                        let lines = crate::runner::run_episode(env, agent, i, spec)?;
                        outcome_from_trace(spec, &lines)
                    },
                )
                .collect::<Result<Vec<_>, _>>()?;
            eps.push(aggregate(label, &outcomes, step_deg)?.eps);
        }
        let best = eps
            .iter()
            .enumerate()
            .fold(0, |b, (i, e)| if *e < eps[b] { i } else { b });
        rows.push(GridRow {
            label: label.clone(),
            argmin: grid[best],
            eps,
        });
    }
    Ok(GridSearchResult { grid, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ellipsis_grids() {
        assert_eq!(parse_grid("10,20,...,100,inf").unwrap(), default_grid());
        assert_eq!(parse_grid("5").unwrap(), vec![Some(5)]);
        assert_eq!(parse_grid("inf,3").unwrap(), vec![None, Some(3)]);
        assert_eq!(parse_grid("0,25,...,100").unwrap().len(), 5);
        assert!(parse_grid("10,...,100").is_err());
        assert!(parse_grid("10,20,...,95").is_err());
        assert!(parse_grid("10,20,...").is_err());
        assert!(parse_grid("10,20,...,inf").is_err());
        assert!(parse_grid("ten").is_err());
    }

    #[test]
    fn canonical_order_puts_inf_last() {
        assert_eq!(canonical(&[None, Some(30), Some(10), Some(30)]), vec![Some(10), Some(30), None]);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let r = grid_search(
            &[],
            &[],
            RuleAgentConfig::default(),
            10,
            1,
            Arc::new(findview_core::dataset::PanoramaStore::new()),
        );
        assert!(matches!(r, Err(BenchError::EmptyGrid)));
    }

    #[test]
    fn tables_render() {
        let r = GridSearchResult {
            grid: vec![Some(10), None],
            rows: vec![GridRow {
                label: "easy".into(),
                eps: vec![1.0, 1.0],
                argmin: Some(10),
            }],
        };
        assert_eq!(
            r.to_csv(),
            "difficulty,d_thresh,eps,argmin\neasy,10,1.0000,true\neasy,inf,1.0000,false\n"
        );
        assert!(r.to_table().contains("inf"));
    }
}

//! End-to-end runs: configuration, training, evaluation and on-disk reports.

mod bench;
mod validate;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use bench::{bench, write_bench_csv, BenchConfig, BenchRow, BENCH_RATIO_LIMIT};
pub use validate::{validate, SuiteResult, ValidateOptions};

use crate::caputo::Grid;
use crate::error::{Error, Result};
use crate::metrics::{compute_errors, evaluation_points, ErrorReport, DEFAULT_EVAL_POINTS};
use crate::optimize::{train_with, Schedule, StopReason, TraceEntry};
use crate::polynet::Network;
use crate::residual::{builtin_problem, HistoryPolicy, LossConfig, PinnObjective, Problem};

pub const REPORT_FORMAT: &str = "fracpinn-report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSource {
    Example(u32),
    File(PathBuf),
}

impl ProblemSource {
    pub fn load(&self) -> Result<Problem> {
        match self {
            ProblemSource::Example(id) => builtin_problem(*id),
            ProblemSource::File(path) => Problem::from_file(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSource,
    /// Collocation nodes, endpoints included.
    pub nodes: usize,
    /// Grading exponent; `None` for a uniform grid.
    pub graded: Option<f64>,
    /// Replaces the derivative order of every differential state.
    pub order: Option<f64>,
    pub loss: LossConfig,
    pub schedule: Schedule,
    /// `None` draws a seed from the clock (not allowed when deterministic).
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub eval_points: usize,
    pub history: HistoryPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSource::Example(3),
            nodes: 101,
            graded: None,
            order: None,
            loss: LossConfig::default(),
            schedule: Schedule::default(),
            seed: Some(0),
            deterministic: false,
            eval_points: DEFAULT_EVAL_POINTS,
            history: HistoryPolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(3..=100_000).contains(&self.nodes) {
            return bad(format!(
                "node count must lie in [3, 100000], got {}",
                self.nodes
            ));
        }
        if let Some(r) = self.graded {
            if !(1.0..=10.0).contains(&r) {
                return bad(format!("grading exponent must lie in [1, 10], got {r}"));
            }
        }
        if let Some(q) = self.order {
            if !(q > 0.0 && q < 3.0) {
                return bad(format!("derivative order must lie in (0, 3), got {q}"));
            }
        }
        if self.eval_points < 2 {
            return bad(format!(
                "need at least 2 evaluation points, got {}",
                self.eval_points
            ));
        }
        if self.deterministic && self.seed.is_none() {
            return bad("deterministic mode requires an explicit seed".into());
        }
        if self.schedule.memory == 0 {
            return bad("L-BFGS memory must be at least 1".into());
        }
        self.schedule.adam.validate()?;
        self.loss.validate()
    }

    fn problem(&self) -> Result<Problem> {
        let mut p = self.problem.load()?.with_history_policy(self.history);
        if let Some(q) = self.order {
            p = p.with_order(q)?;
        }
        Ok(p)
    }

    fn grid(&self, domain: [f64; 2]) -> Result<Grid> {
        let [a, b] = domain;
        match self.graded {
            Some(r) => Grid::graded(a, b, self.nodes - 1, r),
            None => Grid::uniform(a, b, self.nodes - 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolutionRow {
    pub x: f64,
    pub predicted: f64,
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub name: String,
    /// Absent when the problem has no closed-form solution for this state.
    pub errors: Option<ErrorReport>,
    pub solution: Vec<SolutionRow>,
}

/// Wall-clock seconds; excluded from determinism comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub assembly: f64,
    pub adam: f64,
    pub lbfgs: f64,
    pub per_iteration_mean: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub library_version: String,
    pub config: RunConfig,
    pub problem: String,
    pub seed: u64,
    pub parameter_count: usize,
    pub final_loss: f64,
    pub stop: StopReason,
    pub memory_resets: usize,
    pub steepest_descent_steps: usize,
    pub rejected_pairs: usize,
    pub history_lookups: usize,
    pub states: Vec<StateReport>,
    pub trace: Vec<TraceEntry>,
    pub timings: Timings,
}

impl RunReport {
    /// Largest per-state MAE, if every state has an exact solution.
    pub fn worst_mae(&self) -> Option<f64> {
        self.states
            .iter()
            .map(|s| s.errors.as_ref().map(|e| e.mae))
            .try_fold(0.0f64, |acc, m| m.map(|m| acc.max(m)))
    }

    /// Writes `report.json`, `solution.csv`, `trace.csv` and `timings.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;

        let mut w = csv::Writer::from_path(dir.join("solution.csv"))?;
        w.write_record(["state", "x", "predicted", "exact", "abs_error"])?;
        for s in &self.states {
            for row in &s.solution {
                let (exact, err) = match row.exact {
                    Some(e) => (e.to_string(), (row.predicted - e).abs().to_string()),
                    None => (String::new(), String::new()),
                };
                w.write_record([
                    s.name.clone(),
                    row.x.to_string(),
                    row.predicted.to_string(),
                    exact,
                    err,
                ])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
        for e in &self.trace {
            w.serialize(e)?;
        }
        w.flush()?;

        let t = &self.timings;
        let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
        w.write_record(["stage", "seconds"])?;
        for (stage, secs) in [
            ("assembly", t.assembly),
            ("adam", t.adam),
            ("lbfgs", t.lbfgs),
            ("per_iteration_mean", t.per_iteration_mean),
            ("total", t.total),
        ] {
            w.write_record([stage, &secs.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A finished run: the report plus the trained network of every state.
pub struct Solution {
    pub report: RunReport,
    pub networks: Vec<Network>,
}

impl Solution {
    /// Report files plus one `network_<state>.json` checkpoint per state.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.report.write(dir)?;
        for (net, st) in self.networks.iter().zip(&self.report.states) {
            net.save(dir.join(format!("network_{}.json", st.name)))?;
        }
        Ok(())
    }
}

fn clock_seed() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

pub fn solve(cfg: &RunConfig) -> Result<Solution> {
    solve_with(cfg, |_| {})
}

/// [`solve`] with a per-iteration progress callback.
pub fn solve_with(cfg: &RunConfig, observe: impl FnMut(&TraceEntry)) -> Result<Solution> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = cfg.problem()?;
    let grid = cfg.grid(problem.domain)?;
    let seed = cfg.seed.unwrap_or_else(clock_seed);

    let t = Instant::now();
    let obj = PinnObjective::from_problem(problem.clone(), grid, cfg.loss)?;
    let assembly = t.elapsed().as_secs_f64();

    let x0 = obj.init_parameters(seed);
    let out = train_with(&obj, x0, &cfg.schedule, observe)?;
    let networks = obj.networks(&out.params)?;

    let [a, b] = problem.domain;
    let xs = evaluation_points(a, b, cfg.eval_points);
    let mut states = Vec::with_capacity(networks.len());
    for (s, net) in networks.iter().enumerate() {
        let predicted = net.forward_many(&xs)?;
        let exact: Option<Vec<f64>> = xs.iter().map(|&x| problem.exact(s, x)).collect();
        let errors = exact
            .as_ref()
            .map(|e| compute_errors(&predicted, e))
            .transpose()?;
        let solution = xs
            .iter()
            .zip(&predicted)
            .enumerate()
            .map(|(i, (&x, &p))| SolutionRow {
                x,
                predicted: p,
                exact: exact.as_ref().map(|e| e[i]),
            })
            .collect();
        states.push(StateReport {
            name: problem.states[s].name.clone(),
            errors,
            solution,
        });
    }

    let iterations = out.trace.len().max(1) as f64;
    let (adam, lbfgs) = (out.adam_time.as_secs_f64(), out.lbfgs_time.as_secs_f64());
    let report = RunReport {
        format: REPORT_FORMAT.into(),
        library_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        problem: problem.name.clone(),
        seed,
        parameter_count: obj.dim(),
        final_loss: out.final_loss,
        stop: out.stop,
        memory_resets: out.memory_resets,
        steepest_descent_steps: out.steepest_descent_steps,
        rejected_pairs: out.rejected_pairs,
        history_lookups: obj.collocation().history_lookups(),
        states,
        trace: out.trace,
        timings: Timings {
            assembly,
            adam,
            lbfgs,
            per_iteration_mean: (adam + lbfgs) / iterations,
            total: start.elapsed().as_secs_f64(),
        },
    };
    Ok(Solution { report, networks })
}

//! Per-epoch training cost of a fractional problem against its integer-order
//! counterpart on the same network.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::caputo::Grid;
use crate::error::Result;
use crate::optimize::{train, Schedule};
use crate::residual::{builtin_problem, LossConfig, PinnObjective, Problem};

/// Largest acceptable fractional / integer per-epoch cost ratio.
pub const BENCH_RATIO_LIMIT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub example: u32,
    pub fractional_order: f64,
    pub nodes: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            example: 3,
            fractional_order: 0.5,
            nodes: vec![51, 101, 201, 401],
            epochs: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub nodes: usize,
    /// One-off cost of building the collocation data, operational matrix included.
    pub assembly_seconds: f64,
    pub integer_epoch_seconds: f64,
    pub fractional_epoch_seconds: f64,
    pub ratio: f64,
    pub within_limit: bool,
}

fn epoch_seconds(problem: &Problem, grid: &Grid, epochs: usize, seed: u64) -> Result<(f64, f64)> {
    let t = Instant::now();
    let obj = PinnObjective::from_problem(problem.clone(), grid.clone(), LossConfig::default())?;
    let assembly = t.elapsed().as_secs_f64();
    let schedule = Schedule {
        adam_epochs: epochs,
        lbfgs_iterations: 0,
        loss_floor: f64::NEG_INFINITY,
        gradient_floor: 0.0,
        divergence_factor: f64::INFINITY,
        ..Default::default()
    };
    let x0 = obj.init_parameters(seed);
    let t = Instant::now();
    train(&obj, x0, &schedule)?;
    Ok((assembly, t.elapsed().as_secs_f64() / epochs.max(1) as f64))
}

/// Times Adam epochs for the builtin problem as given and with its order
/// replaced by `fractional_order`, at every node count.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let integer = builtin_problem(cfg.example)?;
    let fractional = integer.clone().with_order(cfg.fractional_order)?;
    let [a, b] = integer.domain;
    cfg.nodes
        .iter()
        .map(|&n| {
            let grid = Grid::uniform(a, b, n.saturating_sub(1))?;
            let (_, int_epoch) = epoch_seconds(&integer, &grid, cfg.epochs, cfg.seed)?;
            let (assembly, frac_epoch) = epoch_seconds(&fractional, &grid, cfg.epochs, cfg.seed)?;
            let ratio = frac_epoch / int_epoch;
            Ok(BenchRow {
                nodes: n,
                assembly_seconds: assembly,
                integer_epoch_seconds: int_epoch,
                fractional_epoch_seconds: frac_epoch,
                ratio,
                within_limit: ratio <= BENCH_RATIO_LIMIT,
            })
        })
        .collect()
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_bench_produces_rows() {
        let cfg = BenchConfig {
            nodes: vec![11, 21],
            epochs: 3,
            ..Default::default()
        };
        let rows = bench(&cfg).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.nodes).collect::<Vec<_>>(),
            vec![11, 21]
        );
        assert!(rows
            .iter()
            .all(|r| r.ratio > 0.0 && r.assembly_seconds >= 0.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        write_bench_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("nodes,assembly_seconds,integer_epoch_seconds,fractional_epoch_seconds,ratio,within_limit"));
    }
}

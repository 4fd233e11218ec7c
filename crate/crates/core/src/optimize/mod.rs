//! Adam and L-BFGS minimizers over a flat parameter vector.

mod adam;
mod lbfgs;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lbfgs::{
    dense_inverse_hessian, lbfgs_direction, line_search, CurvaturePair, LbfgsState,
    LineSearchConfig, LineSearchStep,
};

use crate::error::{Error, Result};
use crate::residual::PinnObjective;

/// A differentiable scalar function of a parameter vector.
///
/// Implementations must be safe to call from several threads at once.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(x)?.0)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl Objective for PinnObjective {
    fn dim(&self) -> usize {
        PinnObjective::dim(self)
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        PinnObjective::value(self, x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        PinnObjective::value_and_gradient(self, x)
    }
}

/// Wraps a closure returning `(value, gradient)`.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.f)(x))
    }
}

/// Adam for a number of epochs, then L-BFGS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub adam_epochs: usize,
    pub lbfgs_iterations: usize,
    pub adam: AdamConfig,
    pub memory: usize,
    pub line_search: LineSearchConfig,
    /// Stop once the loss drops below this.
    pub loss_floor: f64,
    /// Stop once the gradient norm drops below this.
    pub gradient_floor: f64,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            adam_epochs: 2000,
            lbfgs_iterations: 500,
            adam: AdamConfig::default(),
            memory: 10,
            line_search: LineSearchConfig::default(),
            loss_floor: 1e-14,
            gradient_floor: 1e-12,
            divergence_factor: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub loss: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Both phases ran to their iteration budget.
    Budget,
    LossFloor,
    GradientFloor,
    /// The line search failed twice in a row, once with fresh memory.
    LineSearch,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub final_loss: f64,
    pub trace: Vec<TraceEntry>,
    pub stop: StopReason,
    /// Times the L-BFGS memory was discarded after a failed line search.
    pub memory_resets: usize,
    /// L-BFGS steps taken along the plain negative gradient because the
    /// memory held no usable pair.
    pub steepest_descent_steps: usize,
    pub rejected_pairs: usize,
    pub adam_time: Duration,
    pub lbfgs_time: Duration,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Guard {
    limit: f64,
}

impl Guard {
    fn check(&self, iteration: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() || loss > self.limit {
            return Err(Error::Divergence {
                iteration,
                loss,
                limit: self.limit,
            });
        }
        Ok(())
    }
}

/// A steepest-descent step carries no scale information, so the accepted
/// Wolfe point is replaced by the minimizer of the quadratic through
/// `f(0)`, `f'(0)` and `f(a)` when that point is better and still satisfies
/// the strong Wolfe conditions.
fn refine_steepest(
    obj: &dyn Objective,
    x: &[f64],
    f0: f64,
    slope: f64,
    d: &[f64],
    step: LineSearchStep,
    cfg: &LineSearchConfig,
) -> Result<LineSearchStep> {
    let a = step.step;
    let curvature = (step.value - f0 - slope * a) / (a * a);
    if !(curvature > 0.0) {
        return Ok(step);
    }
    let a_star = -slope / (2.0 * curvature);
    if !a_star.is_finite() || (a_star - a).abs() <= 1e-3 * a || a_star > cfg.max_step {
        return Ok(step);
    }
    let params: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a_star * di).collect();
    let (value, gradient) = match obj.value_and_gradient(&params) {
        Ok(r) => r,
        Err(Error::NonFiniteLayer { .. } | Error::NonFiniteGradient { .. }) => return Ok(step),
        Err(e) => return Err(e),
    };
    let df: f64 = gradient.iter().zip(d).map(|(u, v)| u * v).sum();
    let wolfe = value <= f0 + cfg.c1 * a_star * slope && df.abs() <= -cfg.c2 * slope;
    if value.is_finite() && value < step.value && wolfe {
        Ok(LineSearchStep {
            step: a_star,
            params,
            value,
            gradient,
            probes: step.probes + 1,
        })
    } else {
        Ok(step)
    }
}

/// Runs the schedule from `x0`; the loss is recorded at every iteration.
pub fn train(obj: &dyn Objective, x0: Vec<f64>, schedule: &Schedule) -> Result<TrainOutcome> {
    if x0.len() != obj.dim() {
        return Err(Error::Shape {
            expected: obj.dim(),
            got: x0.len(),
            context: "initial parameters",
        });
    }
    train_with(obj, x0, schedule, |_| {})
}

/// [`train`] with a callback invoked after every recorded iteration.
pub fn train_with(
    obj: &dyn Objective,
    mut x: Vec<f64>,
    schedule: &Schedule,
    mut observe: impl FnMut(&TraceEntry),
) -> Result<TrainOutcome> {
    let mut trace = Vec::with_capacity(schedule.adam_epochs + schedule.lbfgs_iterations + 1);
    let mut record = |e: TraceEntry, trace: &mut Vec<TraceEntry>| {
        observe(&e);
        trace.push(e);
    };
    let outcome = |x: Vec<f64>, final_loss: f64, trace: Vec<TraceEntry>, stop| TrainOutcome {
        params: x,
        final_loss,
        trace,
        stop,
        memory_resets: 0,
        steepest_descent_steps: 0,
        rejected_pairs: 0,
        adam_time: Duration::ZERO,
        lbfgs_time: Duration::ZERO,
    };
    if schedule.adam_epochs == 0 && schedule.lbfgs_iterations == 0 {
        let f = obj.value(&x)?;
        return Ok(outcome(x, f, trace, StopReason::Budget));
    }

    let (mut f, mut g) = obj.value_and_gradient(&x)?;
    let guard = Guard {
        limit: schedule.divergence_factor * f.abs().max(f64::MIN_POSITIVE),
    };
    guard.check(0, f)?;
    let floor_hit = |f: f64, gn: f64| {
        if f < schedule.loss_floor {
            Some(StopReason::LossFloor)
        } else if gn <= schedule.gradient_floor {
            Some(StopReason::GradientFloor)
        } else {
            None
        }
    };

    let t0 = Instant::now();
    let mut adam = AdamState::new(x.len(), schedule.adam)?;
    let mut iteration = 0;
    for _ in 0..schedule.adam_epochs {
        let gn = norm(&g);
        record(
            TraceEntry {
                iteration,
                phase: Phase::Adam,
                loss: f,
                gradient_norm: gn,
            },
            &mut trace,
        );
        if let Some(stop) = floor_hit(f, gn) {
            let mut o = outcome(x, f, trace, stop);
            o.adam_time = t0.elapsed();
            return Ok(o);
        }
        adam.step(&mut x, &g)?;
        iteration += 1;
        (f, g) = obj.value_and_gradient(&x)?;
        guard.check(iteration, f)?;
    }
    let adam_time = t0.elapsed();

    let t1 = Instant::now();
    let mut memory = LbfgsState::new(schedule.memory)?;
    let mut resets = 0;
    let mut steepest = 0;
    let mut stop = StopReason::Budget;
    let mut failed_once = false;
    let mut k = 0;
    while k < schedule.lbfgs_iterations {
        let gn = norm(&g);
        if let Some(s) = floor_hit(f, gn) {
            stop = s;
            break;
        }
        let mut d = memory.direction(&g);
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let no_curvature = memory.is_empty();
        let initial = if no_curvature {
            steepest += 1;
            // Without curvature information, start with a unit-length move.
            (1.0 / norm(&d)).min(1.0)
        } else {
            1.0
        };
        let found = line_search(obj, &x, f, &g, &d, initial, &schedule.line_search)?;
        let found = match found {
            Some(step) if no_curvature => Some(refine_steepest(
                obj,
                &x,
                f,
                slope,
                &d,
                step,
                &schedule.line_search,
            )?),
            other => other,
        };
        match found {
            Some(step) => {
                failed_once = false;
                let s: Vec<f64> = step.params.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = step.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
                memory.push(s, y);
                x = step.params;
                f = step.value;
                g = step.gradient;
                k += 1;
                iteration += 1;
                guard.check(iteration, f)?;
                record(
                    TraceEntry {
                        iteration,
                        phase: Phase::Lbfgs,
                        loss: f,
                        gradient_norm: norm(&g),
                    },
                    &mut trace,
                );
            }
            None if failed_once || memory.is_empty() => {
                stop = StopReason::LineSearch;
                break;
            }
            None => {
                failed_once = true;
                resets += 1;
                memory.clear();
            }
        }
    }
    if stop == StopReason::Budget {
        if let Some(s) = floor_hit(f, norm(&g)) {
            stop = s;
        }
    }
    let rejected = memory.rejected();
    let mut o = outcome(x, f, trace, stop);
    o.memory_resets = resets;
    o.steepest_descent_steps = steepest;
    o.rejected_pairs = rejected;
    o.adam_time = adam_time;
    o.lbfgs_time = t1.elapsed();
    Ok(o)
}

//! Collocation residuals, initial-value residuals and the training loss.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expr::{Slot, Taylor2};
use super::problem::{HistoryPolicy, Problem};
use crate::caputo::{CaputoMatrix, Grid};
use crate::error::{Error, Result};
use crate::polynet::{Architecture, ForwardPass, Jets, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// `lambda * ||R||_2`, per equation. Not differentiable at a zero
    /// residual and noticeably harder to train.
    L2Norm,
    /// `lambda * mean(R^2)`, per equation.
    #[default]
    MeanSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            reduction: Reduction::MeanSquare,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    fn residual_term(&self, r: &[f64]) -> f64 {
        let ss: f64 = r.iter().map(|x| x * x).sum();
        match self.reduction {
            Reduction::L2Norm => ss.sqrt(),
            Reduction::MeanSquare if r.is_empty() => 0.0,
            Reduction::MeanSquare => ss / r.len() as f64,
        }
    }

    /// `d(residual_term)/dR`, scaled by `scale`, written into `out`.
    fn residual_term_adjoint(&self, r: &[f64], scale: f64, out: &mut [f64]) {
        match self.reduction {
            Reduction::L2Norm => {
                let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                // The norm is not differentiable at zero; zero is a valid subgradient.
                let k = if norm > 0.0 { scale / norm } else { 0.0 };
                out.iter_mut().zip(r).for_each(|(o, x)| *o = k * x);
            }
            Reduction::MeanSquare => {
                let k = 2.0 * scale / r.len().max(1) as f64;
                out.iter_mut().zip(r).for_each(|(o, x)| *o = k * x);
            }
        }
    }
}

/// `lambda * ||R|| + sum B^2` (or the mean-square variant).
pub fn fdde_loss(r: &[f64], b: &[f64], cfg: &LossConfig) -> f64 {
    cfg.lambda * cfg.residual_term(r) + b.iter().map(|x| x * x).sum::<f64>()
}

/// `lambda / m * sum_j ||R_j|| + sum B^2` over `m` residual vectors.
pub fn dae_loss(rs: &[Vec<f64>], b: &[f64], cfg: &LossConfig) -> f64 {
    let m = rs.len().max(1) as f64;
    let res: f64 = rs.iter().map(|r| cfg.residual_term(r)).sum();
    cfg.lambda * res / m + b.iter().map(|x| x * x).sum::<f64>()
}

/// Something that can be sampled as the solution of every state.
pub trait Trial {
    /// Value and input derivatives up to `order` of state `s` at `points`,
    /// as a single-column batch.
    fn jets(&self, s: usize, points: &[f64], order: usize) -> Result<Jets>;
}

/// One network per state.
impl Trial for Vec<Network> {
    fn jets(&self, s: usize, points: &[f64], order: usize) -> Result<Jets> {
        let net = &self[s];
        let pass = net
            .architecture()
            .forward_batch(net.parameters(), points, order)?;
        Ok(pass.output().clone())
    }
}

/// The problem's exact solution, where every state has one.
pub struct ExactTrial<'a>(pub &'a Problem);

impl Trial for ExactTrial<'_> {
    fn jets(&self, s: usize, points: &[f64], order: usize) -> Result<Jets> {
        let st = &self.0.states[s];
        let exact = st
            .exact
            .as_ref()
            .ok_or_else(|| Error::Problem(format!("state `{}` has no exact solution", st.name)))?;
        Ok(taylor_jets(points, order, |t| exact.eval_taylor(t)))
    }
}

/// The identically zero function.
pub struct ZeroTrial;

impl Trial for ZeroTrial {
    fn jets(&self, _s: usize, points: &[f64], order: usize) -> Result<Jets> {
        Ok(Jets::zeros(points.len(), 1, order))
    }
}

/// Any closure returning `(value, d1, d2)`; handy for tests and oracles.
pub struct FnTrial<F>(pub F);

impl<F: Fn(usize, f64) -> Taylor2> Trial for FnTrial<F> {
    fn jets(&self, s: usize, points: &[f64], order: usize) -> Result<Jets> {
        Ok(taylor_jets(points, order, |t| (self.0)(s, t)))
    }
}

fn taylor_jets(points: &[f64], order: usize, f: impl Fn(f64) -> Taylor2) -> Jets {
    let mut j = Jets::zeros(points.len(), 1, order);
    for (i, &t) in points.iter().enumerate() {
        let v = f(t);
        for r in 0..=order {
            j.component_mut(r)[i] = v.get(r);
        }
    }
    j
}

#[derive(Debug, Clone, Copy)]
enum Source {
    /// Row of the state's sample batch.
    Net(usize),
    History(Taylor2),
}

#[derive(Debug, Clone)]
struct StateLayout {
    order: usize,
    /// Grid nodes first, then delayed arguments that need the network.
    points: Vec<f64>,
    delayed: BTreeMap<usize, Vec<Source>>,
}

/// Residuals of one trial on one grid.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Per equation, one entry per grid node (row 0 included).
    pub residuals: Vec<Vec<f64>>,
    /// Per state, `B_p` for every initial value.
    pub boundary: Vec<Vec<f64>>,
    leading: Vec<Option<Vec<f64>>>,
}

impl Evaluation {
    pub fn boundary_flat(&self) -> Vec<f64> {
        self.boundary.iter().flatten().copied().collect()
    }

    /// Residual rows that enter the loss; row 0 is left out.
    pub fn interior(&self) -> Vec<Vec<f64>> {
        self.residuals.iter().map(|r| r[1..].to_vec()).collect()
    }

    pub fn loss(&self, cfg: &LossConfig) -> f64 {
        dae_loss(&self.interior(), &self.boundary_flat(), cfg)
    }
}

/// A problem bound to a collocation grid, with its operational matrices
/// and delayed-argument bookkeeping precomputed.
#[derive(Debug, Clone)]
pub struct Collocation {
    problem: Problem,
    grid: Grid,
    matrices: Vec<Option<CaputoMatrix>>,
    layouts: Vec<StateLayout>,
    history_lookups: usize,
}

impl Collocation {
    pub fn new(problem: Problem, grid: Grid) -> Result<Self> {
        let [a, b] = problem.domain;
        let span = b - a;
        if (grid.origin() - a).abs() > 1e-12 * span || (grid.end() - b).abs() > 1e-12 * span {
            return Err(Error::Grid(format!(
                "grid [{}, {}] does not cover the problem domain [{a}, {b}]",
                grid.origin(),
                grid.end()
            )));
        }
        let nodes = grid.nodes();
        let mut used: Vec<Slot> = Vec::new();
        for eq in &problem.equations {
            used.extend_from_slice(eq.tape.slots());
        }

        let mut matrices = Vec::with_capacity(problem.states.len());
        for (s, st) in problem.states.iter().enumerate() {
            let leads = used.contains(&Slot::Leading { state: s });
            matrices.push(match st.order {
                Some(o) if leads && o.is_fractional() => {
                    Some(CaputoMatrix::assemble(&grid, o.alpha())?)
                }
                _ => None,
            });
        }

        let mut history_lookups = 0;
        let mut layouts = Vec::with_capacity(problem.states.len());
        for (s, st) in problem.states.iter().enumerate() {
            let mut points = nodes.to_vec();
            let mut delayed = BTreeMap::new();
            for slot in &used {
                let Slot::State {
                    state,
                    delay: Some(k),
                    ..
                } = *slot
                else {
                    continue;
                };
                if state != s || delayed.contains_key(&k) {
                    continue;
                }
                let delay = &problem.delays[k];
                let mut sources = Vec::with_capacity(nodes.len());
                for &t in nodes {
                    let d = delay.eval(t);
                    if !d.is_finite() {
                        return Err(Error::Problem(format!(
                            "delayed argument is not finite at {t}"
                        )));
                    }
                    let before = d < a;
                    let source = match (before, problem.history_policy, &st.history) {
                        (true, HistoryPolicy::Prefer | HistoryPolicy::Strict, Some(h)) => {
                            history_lookups += 1;
                            Source::History(h.eval_taylor(d))
                        }
                        (true, HistoryPolicy::Strict, None) => {
                            return Err(Error::MissingHistory {
                                state: st.name.clone(),
                                point: d,
                                start: a,
                            })
                        }
                        _ => {
                            points.push(d);
                            Source::Net(points.len() - 1)
                        }
                    };
                    sources.push(source);
                }
                delayed.insert(k, sources);
            }
            layouts.push(StateLayout {
                order: problem.network_order(s)?,
                points,
                delayed,
            });
        }
        Ok(Self {
            problem,
            grid,
            matrices,
            layouts,
            history_lookups,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// The operational matrix used for state `s`, if its leading derivative
    /// is fractional.
    pub fn matrix(&self, s: usize) -> Option<&CaputoMatrix> {
        self.matrices[s].as_ref()
    }

    /// Points at which state `s` is sampled: grid nodes, then delayed
    /// arguments resolved by the network.
    pub fn sample_points(&self, s: usize) -> &[f64] {
        &self.layouts[s].points
    }

    pub fn sample_order(&self, s: usize) -> usize {
        self.layouts[s].order
    }

    /// How many (node, delay) pairs were resolved from a history function.
    pub fn history_lookups(&self) -> usize {
        self.history_lookups
    }

    pub fn samples(&self, trial: &dyn Trial) -> Result<Vec<Jets>> {
        (0..self.layouts.len())
            .map(|s| trial.jets(s, &self.layouts[s].points, self.layouts[s].order))
            .collect()
    }

    pub fn evaluate(&self, trial: &dyn Trial) -> Result<Evaluation> {
        let samples = self.samples(trial)?;
        Ok(self.evaluate_samples(&samples))
    }

    /// Residual vectors of every equation, row 0 included.
    pub fn residuals(&self, trial: &dyn Trial) -> Result<Vec<Vec<f64>>> {
        Ok(self.evaluate(trial)?.residuals)
    }

    /// Residual vector of a single-equation problem.
    pub fn residual_vector(&self, trial: &dyn Trial) -> Result<Vec<f64>> {
        if self.problem.equations.len() != 1 {
            return Err(Error::Problem(format!(
                "residual_vector needs a single equation; this problem has {}",
                self.problem.equations.len()
            )));
        }
        Ok(self.residuals(trial)?.swap_remove(0))
    }

    /// `B_p = phi^(p)(a) - k_p` for every state.
    pub fn boundary_residuals(&self, trial: &dyn Trial) -> Result<Vec<Vec<f64>>> {
        let samples = self.samples(trial)?;
        Ok(self.boundary_of(&samples))
    }

    pub fn loss(&self, trial: &dyn Trial, cfg: &LossConfig) -> Result<f64> {
        Ok(self.evaluate(trial)?.loss(cfg))
    }

    fn boundary_of(&self, samples: &[Jets]) -> Vec<Vec<f64>> {
        self.problem
            .states
            .iter()
            .zip(samples)
            .map(|(st, j)| {
                st.initial
                    .iter()
                    .enumerate()
                    .map(|(p, k)| j.component(p)[0] - k)
                    .collect()
            })
            .collect()
    }

    fn leading_of(&self, samples: &[Jets]) -> Vec<Option<Vec<f64>>> {
        let dim = self.grid.len();
        self.problem
            .states
            .iter()
            .enumerate()
            .map(|(s, st)| {
                let o = st.order?;
                let n_int = o.integer_part() as usize;
                Some(match &self.matrices[s] {
                    Some(m) => {
                        let mut out = vec![0.0; dim];
                        m.apply_into(&samples[s].component(n_int)[..dim], &mut out);
                        out
                    }
                    None => samples[s].component(o.q().round() as usize)[..dim].to_vec(),
                })
            })
            .collect()
    }

    fn slot_value(
        &self,
        samples: &[Jets],
        leading: &[Option<Vec<f64>>],
        slot: Slot,
        i: usize,
    ) -> f64 {
        match slot {
            Slot::Leading { state } => leading[state].as_ref().map_or(f64::NAN, |v| v[i]),
            Slot::State {
                state,
                deriv,
                delay: None,
            } => samples[state].component(deriv)[i],
            Slot::State {
                state,
                deriv,
                delay: Some(k),
            } => match self.layouts[state].delayed[&k][i] {
                Source::Net(r) => samples[state].component(deriv)[r],
                Source::History(h) => h.get(deriv),
            },
        }
    }

    fn evaluate_samples(&self, samples: &[Jets]) -> Evaluation {
        let leading = self.leading_of(samples);
        let nodes = self.grid.nodes();
        let mut vals = Vec::new();
        let mut slot_vals = Vec::new();
        let residuals = self
            .problem
            .equations
            .iter()
            .map(|eq| {
                nodes
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| {
                        slot_vals.clear();
                        slot_vals.extend(
                            eq.tape
                                .slots()
                                .iter()
                                .map(|&s| self.slot_value(samples, &leading, s, i)),
                        );
                        eq.tape.forward(t, &slot_vals, &mut vals)
                    })
                    .collect()
            })
            .collect();
        Evaluation {
            residuals,
            boundary: self.boundary_of(samples),
            leading,
        }
    }

    /// Adjoint of the loss with respect to every sample jet.
    fn loss_adjoint(&self, samples: &[Jets], ev: &Evaluation, cfg: &LossConfig) -> Vec<Jets> {
        let mut adj: Vec<Jets> = samples
            .iter()
            .map(|j| Jets::zeros(j.rows, 1, j.order))
            .collect();
        let dim = self.grid.len();
        let mut lead_adj: Vec<Vec<f64>> = vec![vec![0.0; dim]; samples.len()];
        let m = self.problem.equations.len() as f64;
        let nodes = self.grid.nodes();
        let (mut vals, mut tape_adj, mut slot_vals, mut slot_adj) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut seeds = vec![0.0; dim];
        for (eq, r) in self.problem.equations.iter().zip(&ev.residuals) {
            seeds[0] = 0.0;
            cfg.residual_term_adjoint(&r[1..], cfg.lambda / m, &mut seeds[1..]);
            let slots = eq.tape.slots();
            for i in 1..dim {
                if seeds[i] == 0.0 {
                    continue;
                }
                slot_vals.clear();
                slot_vals.extend(
                    slots
                        .iter()
                        .map(|&s| self.slot_value(samples, &ev.leading, s, i)),
                );
                eq.tape.forward(nodes[i], &slot_vals, &mut vals);
                slot_adj.clear();
                slot_adj.resize(slots.len(), 0.0);
                eq.tape
                    .backward(&vals, seeds[i], &mut tape_adj, &mut slot_adj);
                for (&slot, &g) in slots.iter().zip(&slot_adj) {
                    match slot {
                        Slot::Leading { state } => lead_adj[state][i] += g,
                        Slot::State {
                            state,
                            deriv,
                            delay: None,
                        } => adj[state].component_mut(deriv)[i] += g,
                        Slot::State {
                            state,
                            deriv,
                            delay: Some(k),
                        } => {
                            if let Source::Net(row) = self.layouts[state].delayed[&k][i] {
                                adj[state].component_mut(deriv)[row] += g;
                            }
                        }
                    }
                }
            }
        }
        for (s, st) in self.problem.states.iter().enumerate() {
            for (p, b) in ev.boundary[s].iter().enumerate() {
                adj[s].component_mut(p)[0] += 2.0 * b;
            }
            let Some(o) = st.order else { continue };
            match &self.matrices[s] {
                Some(mat) => {
                    let comp = adj[s].component_mut(o.integer_part() as usize);
                    mat.apply_transpose_add(&lead_adj[s], &mut comp[..dim]);
                }
                None => {
                    if lead_adj[s].iter().any(|g| *g != 0.0) {
                        let comp = adj[s].component_mut(o.q().round() as usize);
                        comp[..dim]
                            .iter_mut()
                            .zip(&lead_adj[s])
                            .for_each(|(c, g)| *c += g);
                    }
                }
            }
        }
        adj
    }
}

/// The training objective: loss of one network per state as a function of
/// all their parameters, concatenated in state order.
#[derive(Debug, Clone)]
pub struct PinnObjective {
    colloc: Collocation,
    archs: Vec<Architecture>,
    offsets: Vec<usize>,
    cfg: LossConfig,
}

impl PinnObjective {
    pub fn new(colloc: Collocation, archs: Vec<Architecture>, cfg: LossConfig) -> Result<Self> {
        cfg.validate()?;
        let m = colloc.problem.states.len();
        if archs.len() != m {
            return Err(Error::Shape {
                expected: m,
                got: archs.len(),
                context: "one network per state",
            });
        }
        for a in &archs {
            if a.output_dim() != 1 {
                return Err(Error::Architecture(
                    "state networks must have a single output".into(),
                ));
            }
        }
        let mut offsets = vec![0];
        for a in &archs {
            offsets.push(offsets.last().unwrap() + a.param_count());
        }
        Ok(Self {
            colloc,
            archs,
            offsets,
            cfg,
        })
    }

    /// Uses the problem's own network template for every state.
    pub fn from_problem(problem: Problem, grid: Grid, cfg: LossConfig) -> Result<Self> {
        let arch = problem.architecture()?;
        let m = problem.states.len();
        Self::new(Collocation::new(problem, grid)?, vec![arch; m], cfg)
    }

    pub fn collocation(&self) -> &Collocation {
        &self.colloc
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    pub fn architectures(&self) -> &[Architecture] {
        &self.archs
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Parameters of state `s` within the concatenated vector.
    pub fn state_range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    /// Deterministic initialization; each state's network gets its own stream.
    pub fn init_parameters(&self, seed: u64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (s, a) in self.archs.iter().enumerate() {
            out.extend(a.init_parameters(
                seed.wrapping_add((s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ));
        }
        out
    }

    pub fn networks(&self, params: &[f64]) -> Result<Vec<Network>> {
        self.check(params)?;
        self.archs
            .iter()
            .enumerate()
            .map(|(s, a)| Network::with_parameters(a.clone(), params[self.state_range(s)].to_vec()))
            .collect()
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: params.len(),
                context: "parameter vector length",
            });
        }
        Ok(())
    }

    fn forward(&self, params: &[f64]) -> Result<Vec<ForwardPass>> {
        self.check(params)?;
        (0..self.archs.len())
            .into_par_iter()
            .map(|s| {
                let l = &self.colloc.layouts[s];
                self.archs[s].forward_batch(&params[self.state_range(s)], &l.points, l.order)
            })
            .collect()
    }

    pub fn evaluate(&self, params: &[f64]) -> Result<Evaluation> {
        let passes = self.forward(params)?;
        let samples: Vec<Jets> = passes.iter().map(|p| p.output().clone()).collect();
        Ok(self.colloc.evaluate_samples(&samples))
    }

    pub fn value(&self, params: &[f64]) -> Result<f64> {
        Ok(self.evaluate(params)?.loss(&self.cfg))
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let passes = self.forward(params)?;
        let samples: Vec<Jets> = passes.iter().map(|p| p.output().clone()).collect();
        let ev = self.colloc.evaluate_samples(&samples);
        let loss = ev.loss(&self.cfg);
        let adj = self.colloc.loss_adjoint(&samples, &ev, &self.cfg);
        let grads: Vec<Vec<f64>> = (0..self.archs.len())
            .into_par_iter()
            .map(|s| passes[s].backward(&self.archs[s], &params[self.state_range(s)], &adj[s]))
            .collect::<Result<_>>()?;
        Ok((loss, grads.concat()))
    }
}

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A stored curvature pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub rho: f64,
}

/// Limited memory of the inverse-Hessian approximation.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    memory: VecDeque<CurvaturePair>,
    capacity: usize,
    rejected: usize,
}

impl LbfgsState {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config(
                "L-BFGS memory must hold at least one pair".into(),
            ));
        }
        Ok(Self {
            memory: VecDeque::with_capacity(capacity),
            capacity,
            rejected: 0,
        })
    }

    /// Stores `(s, y)` unless `y.s <= 1e-12 |y| |s|`; returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let ys = dot(&y, &s);
        if !(ys > 1e-12 * norm(&y) * norm(&s)) || !ys.is_finite() {
            self.rejected += 1;
            return false;
        }
        if self.memory.len() == self.capacity {
            self.memory.pop_front();
        }
        self.memory.push_back(CurvaturePair {
            s,
            y,
            rho: 1.0 / ys,
        });
        true
    }

    pub fn clear(&mut self) {
        self.memory.clear();
    }

    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }

    /// Pairs turned away by the curvature check so far.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = &CurvaturePair> {
        self.memory.iter()
    }

    /// Scale `gamma = s.y / y.y` of the newest pair, or 1.
    pub fn initial_scale(&self) -> f64 {
        self.memory
            .back()
            .map_or(1.0, |p| dot(&p.s, &p.y) / dot(&p.y, &p.y))
    }

    /// `-H g` by the two-loop recursion with `H_0 = gamma I`.
    pub fn direction(&self, gradient: &[f64]) -> Vec<f64> {
        let mut q = gradient.to_vec();
        let mut alphas = Vec::with_capacity(self.memory.len());
        for p in self.memory.iter().rev() {
            let a = p.rho * dot(&p.s, &q);
            q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = self.initial_scale();
        q.iter_mut().for_each(|v| *v *= gamma);
        for (p, a) in self.memory.iter().zip(alphas.iter().rev()) {
            let b = p.rho * dot(&p.y, &q);
            q.iter_mut()
                .zip(&p.s)
                .for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Functional form of [`LbfgsState::direction`].
pub fn lbfgs_direction(state: &LbfgsState, gradient: &[f64]) -> Vec<f64> {
    state.direction(gradient)
}

/// The inverse-Hessian approximation assembled densely, pair by pair:
/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`, from `H_0 = gamma I`.
/// Only meant as an oracle for small dimensions.
pub fn dense_inverse_hessian(state: &LbfgsState, dim: usize) -> Vec<Vec<f64>> {
    let gamma = state.initial_scale();
    let mut h: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { gamma } else { 0.0 }).collect())
        .collect();
    for p in state.pairs() {
        // V = I - rho y s^T, so H' = V^T H V + rho s s^T.
        let v: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| (i == j) as u8 as f64 - p.rho * p.y[i] * p.s[j])
                    .collect()
            })
            .collect();
        let mut hv = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for j in 0..dim {
                hv[i][j] = (0..dim).map(|k| h[i][k] * v[k][j]).sum();
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                h[i][j] =
                    (0..dim).map(|k| v[k][i] * hv[k][j]).sum::<f64>() + p.rho * p.s[i] * p.s[j];
            }
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub c1: f64,
    pub c2: f64,
    pub max_probes: usize,
    pub max_step: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            max_probes: 25,
            max_step: 1e10,
        }
    }
}

/// An accepted step.
#[derive(Debug, Clone)]
pub struct LineSearchStep {
    pub step: f64,
    pub params: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub probes: usize,
}

#[derive(Debug, Clone)]
struct Probe {
    a: f64,
    f: f64,
    df: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

fn probe(obj: &dyn Objective, x: &[f64], d: &[f64], a: f64) -> Result<Probe> {
    let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
    match obj.value_and_gradient(&xa) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
            let df = dot(&g, d);
            Ok(Probe { a, f, df, x: xa, g })
        }
        // Overflow along the ray: treat as an infinitely bad point.
        Ok(_) | Err(Error::NonFiniteGradient { .. }) | Err(Error::NonFiniteLayer { .. }) => {
            Ok(Probe {
                a,
                f: f64::INFINITY,
                df: f64::NAN,
                x: xa,
                g: Vec::new(),
            })
        }
        Err(e) => Err(e),
    }
}

/// Minimizer of the cubic (or quadratic) interpolant on `[lo, hi]`,
/// kept away from the ends; bisection when the data are unusable.
fn interpolate(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.a.min(hi.a), lo.a.max(hi.a));
    let width = b - a;
    let guard = |t: f64| {
        if t.is_finite() && t > a + 0.1 * width && t < b - 0.1 * width {
            t
        } else {
            0.5 * (a + b)
        }
    };
    if !hi.f.is_finite() {
        return 0.5 * (a + b);
    }
    let h = hi.a - lo.a;
    if hi.df.is_finite() {
        let d1 = lo.df + hi.df - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
        let disc = d1 * d1 - lo.df * hi.df;
        if disc >= 0.0 {
            let d2 = h.signum() * disc.sqrt();
            let t = hi.a - h * (hi.df + d2 - d1) / (hi.df - lo.df + 2.0 * d2);
            return guard(t);
        }
    }
    // Quadratic through f(lo), f'(lo), f(hi).
    let denom = 2.0 * (hi.f - lo.f - lo.df * h);
    guard(lo.a - lo.df * h * h / denom)
}

/// Strong-Wolfe line search along `d` from `x`.
///
/// Errors when `d` is not a descent direction; `Ok(None)` when no
/// acceptable step was found within the probe budget.
pub fn line_search(
    obj: &dyn Objective,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    initial_step: f64,
    cfg: &LineSearchConfig,
) -> Result<Option<LineSearchStep>> {
    let df0 = dot(g0, d);
    if !(df0 < 0.0) {
        return Err(Error::Optimization(format!(
            "line search needs a descent direction, got slope {df0:e}"
        )));
    }
    let start = Probe {
        a: 0.0,
        f: f0,
        df: df0,
        x: x.to_vec(),
        g: g0.to_vec(),
    };
    let armijo = |p: &Probe| p.f <= f0 + cfg.c1 * p.a * df0 && p.f < f0;
    let curvature = |p: &Probe| p.df.abs() <= -cfg.c2 * df0;
    // Near a minimizer the decrease demanded by Armijo drops below the
    // rounding noise of f; then a value within that noise and a flat enough
    // slope is accepted instead.
    let noise = 8.0 * f64::EPSILON * f0.abs();
    let settled = |p: &Probe| {
        -cfg.c1 * p.a * df0 <= noise
            && p.f <= f0 + noise
            && p.df <= (2.0 * cfg.c1 - 1.0) * df0
            && curvature(p)
    };
    let accept = |p: Probe, probes: usize| {
        Some(LineSearchStep {
            step: p.a,
            params: p.x,
            value: p.f,
            gradient: p.g,
            probes,
        })
    };

    let mut probes = 0;
    let mut prev = start.clone();
    let mut a = initial_step.min(cfg.max_step);
    let (mut lo, mut hi);
    loop {
        if probes >= cfg.max_probes {
            return Ok(None);
        }
        let p = probe(obj, x, d, a)?;
        probes += 1;
        if settled(&p) {
            return Ok(accept(p, probes));
        }
        if !armijo(&p) || (probes > 1 && p.f >= prev.f) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature(&p) {
            return Ok(accept(p, probes));
        }
        if p.df >= 0.0 {
            lo = p;
            hi = prev;
            break;
        }
        if a >= cfg.max_step {
            return Ok(None);
        }
        a = (2.0 * a).min(cfg.max_step);
        prev = p;
    }

    // Zoom: `lo` satisfies sufficient decrease and has the lowest value so far.
    while probes < cfg.max_probes {
        let a = interpolate(&lo, &hi);
        if (hi.a - lo.a).abs() <= 1e-16 * lo.a.abs().max(1.0) {
            break;
        }
        let p = probe(obj, x, d, a)?;
        probes += 1;
        if settled(&p) {
            return Ok(accept(p, probes));
        }
        if (p.f - f0).abs() <= noise && p.df.is_finite() {
            // Values carry no information here; bisect on the slope sign.
            if p.df * (hi.a - lo.a) >= 0.0 {
                hi = p;
            } else {
                lo = p;
            }
        } else if !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return Ok(accept(p, probes));
            }
            if p.df * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    Ok(None)
}

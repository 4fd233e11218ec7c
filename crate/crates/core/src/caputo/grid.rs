use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing collocation nodes `t_0 < t_1 < ... < t_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nodes: Vec<f64>,
}

impl Grid {
    /// Validates and wraps an explicit node list (at least two nodes).
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Grid(format!(
                "need at least two nodes, got {}",
                nodes.len()
            )));
        }
        if let Some(bad) = nodes.iter().find(|t| !t.is_finite()) {
            return Err(Error::Grid(format!("non-finite node {bad}")));
        }
        let span = nodes[nodes.len() - 1] - nodes[0];
        if span <= 0.0 {
            return Err(Error::Grid("nodes are not increasing".into()));
        }
        let min_gap = 1e-12 * span;
        for (k, w) in nodes.windows(2).enumerate() {
            if w[1] - w[0] <= min_gap {
                return Err(Error::Grid(format!(
                    "nodes {k} and {} are not strictly increasing ({} then {})",
                    k + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Self { nodes })
    }

    /// `intervals + 1` equally spaced nodes on `[a, b]`.
    pub fn uniform(a: f64, b: f64, intervals: usize) -> Result<Self> {
        Self::graded(a, b, intervals, 1.0)
    }

    /// Graded mesh `t_k = a + (b - a) (k / n)^r` with `r >= 1`, clustering
    /// nodes near `a`.
    pub fn graded(a: f64, b: f64, intervals: usize, exponent: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::Grid("need at least one interval".into()));
        }
        if !(exponent >= 1.0) || !exponent.is_finite() {
            return Err(Error::Grid(format!(
                "grading exponent must be >= 1, got {exponent}"
            )));
        }
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::Grid(format!("invalid interval [{a}, {b}]")));
        }
        let n = intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals)
            .map(|k| a + (b - a) * (k as f64 / n).powf(exponent))
            .collect();
        // Pin the endpoint so that round-off never moves it.
        nodes[intervals] = b;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn origin(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Number of nodes, `n + 1`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of intervals, `n`.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// A total derivative order `q = n_int + alpha` with `alpha` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalOrder {
    q: f64,
    n_int: u32,
    alpha: f64,
}

impl FractionalOrder {
    pub fn new(q: f64) -> Result<Self> {
        if !q.is_finite() || q <= 0.0 {
            return Err(Error::Domain(format!(
                "derivative order must be positive, got {q}"
            )));
        }
        let n_int = q.floor();
        let mut alpha = q - n_int;
        // Orders like 0.9999999999999999 come out of arithmetic, not intent.
        if alpha < 1e-12 {
            alpha = 0.0;
        }
        Ok(Self {
            q,
            n_int: n_int as u32,
            alpha,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Integer part of the order.
    pub fn integer_part(&self) -> u32 {
        self.n_int
    }

    /// Fractional part of the order.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_fractional(&self) -> bool {
        self.alpha > 0.0
    }

    /// Number of initial values the order calls for, `ceil(q)`.
    pub fn initial_value_count(&self) -> usize {
        self.q.ceil() as usize
    }
}

//! The non-uniform L1 operational matrix for the Caputo derivative.
//!
//! On a grid `t_0 < ... < t_n` the Caputo derivative of order `alpha` in
//! `(0, 1)` at node `t_i` is approximated by replacing `f'` on every interval
//! `[t_k, t_{k+1}]` with its forward difference quotient and integrating the
//! kernel `(t_i - x)^(-alpha)` exactly:
//!
//! ```text
//! D^alpha f(t_i) ~ 1/Gamma(2 - alpha) * sum_{k<i} mu_k (f(t_{k+1}) - f(t_k))
//! mu_k = [(t_i - t_k)^(1-alpha) - (t_i - t_{k+1})^(1-alpha)] / (t_{k+1} - t_k)
//! ```
//!
//! Collecting coefficients of `f(t_k)` gives the row weights
//! `w_k = (mu_{k-1} - mu_k) / Gamma(2 - alpha)` with `mu_{-1} = mu_i = 0`.
//! Stacking the rows gives a lower-triangular matrix whose first row is zero.

use rayon::prelude::*;

use super::gamma::gamma_unchecked;
use super::grid::Grid;
use crate::error::{Error, Result};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "the L1 matrix needs a fractional order in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Weights `w_0..=w_i` such that `sum_k w_k f(t_k)` approximates the Caputo
/// derivative of order `alpha` at `t_i`. Row 0 is `[0.0]`.
pub fn l1_row_weights(grid: &Grid, alpha: f64, i: usize) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if i > grid.intervals() {
        return Err(Error::Shape {
            expected: grid.intervals(),
            got: i,
            context: "row index exceeds the last grid node",
        });
    }
    Ok(row_weights_unchecked(
        grid.nodes(),
        alpha,
        1.0 / gamma_unchecked(2.0 - alpha),
        i,
    ))
}

fn row_weights_unchecked(t: &[f64], alpha: f64, inv_gamma: f64, i: usize) -> Vec<f64> {
    let mut w = vec![0.0; i + 1];
    if i == 0 {
        return w;
    }
    let beta = 1.0 - alpha;
    let ti = t[i];
    // (t_i - t_k)^(1 - alpha) for the left end of the current interval.
    let mut left = (ti - t[0]).powf(beta);
    let mut prev_mu = 0.0;
    for k in 0..i {
        let right = if k + 1 == i {
            0.0
        } else {
            (ti - t[k + 1]).powf(beta)
        };
        let mu = (left - right) / (t[k + 1] - t[k]);
        w[k] = (prev_mu - mu) * inv_gamma;
        prev_mu = mu;
        left = right;
    }
    w[i] = prev_mu * inv_gamma;
    w
}

/// Dense lower-triangular L1 operational matrix for one order on one grid.
///
/// Immutable once assembled; share it freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct CaputoMatrix {
    alpha: f64,
    grid: Grid,
    dim: usize,
    // Row-major (n+1) x (n+1); entries above the diagonal are zero.
    weights: Vec<f64>,
}

impl CaputoMatrix {
    /// Assembles every row of the matrix for `grid` and `alpha`.
    pub fn assemble(grid: &Grid, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let dim = grid.len();
        let inv_gamma = 1.0 / gamma_unchecked(2.0 - alpha);
        let nodes = grid.nodes();
        let mut weights = vec![0.0; dim * dim];
        weights
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, row)| {
                let w = row_weights_unchecked(nodes, alpha, inv_gamma, i);
                row[..=i].copy_from_slice(&w);
            });
        Ok(Self {
            alpha,
            grid: grid.clone(),
            dim,
            weights,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Matrix dimension, `n + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry `(i, k)`; zero above the diagonal.
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.weights[i * self.dim + k]
    }

    /// The nonzero prefix `w_0..=w_i` of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.dim..i * self.dim + i + 1]
    }

    /// Rows as owned vectors, e.g. for external checks.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    /// `A f`: entry `i` approximates the Caputo derivative at `t_i`, given
    /// `values[k] = f(t_k)`.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_into(values, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, values: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(values).map(|(w, f)| w * f).sum();
        }
    }

    /// `A^T g`, the adjoint used to push gradients back through `apply`.
    pub fn apply_transpose(&self, adjoint: &[f64]) -> Result<Vec<f64>> {
        self.check_len(adjoint.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_transpose_add(adjoint, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_transpose_add(&self, adjoint: &[f64], out: &mut [f64]) {
        for (i, &g) in adjoint.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += g * w;
            }
        }
    }

    /// Caputo derivative of total order `n_int + alpha` via
    /// `D^(n_int + alpha) f = D^alpha (D^n_int f)`: the caller samples the
    /// `n_int`-th integer derivative at the nodes and this applies the
    /// order-`alpha` matrix to those samples.
    pub fn compose_higher_order(&self, integer_derivative_values: &[f64]) -> Result<Vec<f64>> {
        self.apply(integer_derivative_values)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: len,
                context: "vector length must equal the number of grid nodes",
            });
        }
        Ok(())
    }
}

/// Closed-form Caputo derivative of `t^p`:
/// `Gamma(p + 1) / Gamma(p + 1 - alpha) * t^(p - alpha)`.
/// `p = 0` yields 0 since constants have zero Caputo derivative.
pub fn caputo_monomial(p: f64, alpha: f64, t: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if p == 0.0 {
        return Ok(0.0);
    }
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Domain(format!(
            "monomial power must be positive, got {p}"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "monomial oracle needs t >= 0, got {t}"
        )));
    }
    let coeff = gamma_unchecked(p + 1.0) / gamma_unchecked(p + 1.0 - alpha);
    Ok(coeff * t.powf(p - alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(w: &[f64], f: &[f64]) -> f64 {
        w.iter().zip(f).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn three_node_rows_on_identity_function() {
        let g = Grid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let f = [0.0, 0.5, 1.0];
        let w2 = l1_row_weights(&g, 0.5, 2).unwrap();
        assert!((dot(&w2, &f) - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-12);
        let w1 = l1_row_weights(&g, 0.5, 1).unwrap();
        assert!((dot(&w1, &f[..2]) - 0.797_884_560_802_865_4).abs() < 1e-12);
        assert_eq!(l1_row_weights(&g, 0.5, 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn three_node_mu_values() {
        // Weights are (mu_{k-1} - mu_k) / Gamma(1.5); recover mu from them.
        let g = Grid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let w = l1_row_weights(&g, 0.5, 2).unwrap();
        let scale = gamma_unchecked(1.5);
        let mu0 = -w[0] * scale;
        let mu1 = w[2] * scale;
        assert!((mu0 - (2.0 - std::f64::consts::SQRT_2)).abs() < 1e-12);
        assert!((mu1 - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn single_interval_matrix() {
        let g = Grid::new(vec![0.0, 1.0]).unwrap();
        for alpha in [0.2, 0.5, 0.9] {
            let m = CaputoMatrix::assemble(&g, alpha).unwrap();
            let c = 1.0 / gamma_unchecked(2.0 - alpha);
            assert_eq!(m.get(0, 0), 0.0);
            assert_eq!(m.get(0, 1), 0.0);
            assert!((m.get(1, 0) + c).abs() < 1e-15);
            assert!((m.get(1, 1) - c).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_grid_matches_equidistant_form() {
        let n = 12;
        let h = 1.0 / n as f64;
        let alpha = 0.4;
        let g = Grid::uniform(0.0, 1.0, n).unwrap();
        let w = l1_row_weights(&g, alpha, n).unwrap();
        let beta = 1.0 - alpha;
        let mu = |k: usize| -> f64 {
            if k >= n {
                return 0.0;
            }
            (((n - k) as f64 * h).powf(beta) - ((n - k - 1) as f64 * h).powf(beta)) / h
        };
        let inv_g = 1.0 / gamma_unchecked(2.0 - alpha);
        for (k, wk) in w.iter().enumerate() {
            let prev = if k == 0 { 0.0 } else { mu(k - 1) };
            let want = (prev - mu(k)) * inv_g;
            assert!((wk - want).abs() < 1e-12 * want.abs().max(1.0), "k = {k}");
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let g = Grid::graded(0.0, 2.0, 40, 1.7).unwrap();
        let m = CaputoMatrix::assemble(&g, 0.35).unwrap();
        let out = m.apply(&vec![5.0; g.len()]).unwrap();
        for (i, v) in out.iter().enumerate() {
            let max_w = m.row(i).iter().fold(0.0f64, |a, w| a.max(w.abs()));
            assert!(v.abs() <= 1e-12 * 5.0 * max_w.max(1.0), "row {i}: {v}");
        }
    }

    #[test]
    fn squared_function_at_one() {
        let g = Grid::uniform(0.0, 1.0, 100).unwrap();
        let m = CaputoMatrix::assemble(&g, 0.5).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|t| t * t).collect();
        let out = m.apply(&f).unwrap();
        assert!((out[100] - 1.504_505_556_127_350_1).abs() < 2e-2);
    }

    #[test]
    fn cubic_converges_to_forcing_coefficient() {
        let want = 1.438_624_059_508_059_8;
        let mut last = f64::INFINITY;
        for n in [50, 100, 200, 400] {
            let g = Grid::uniform(0.0, 1.0, n).unwrap();
            let m = CaputoMatrix::assemble(&g, 0.3).unwrap();
            let f: Vec<f64> = g.nodes().iter().map(|t| t.powi(3)).collect();
            let err = (m.apply(&f).unwrap()[n] - want).abs();
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn monomial_oracle_values() {
        let v = caputo_monomial(3.0, 0.3, 1.0).unwrap();
        assert!((v - 1.438_624_059_508_059_8).abs() < 1e-13);
        let v = caputo_monomial(2.0, 0.5, 1.0).unwrap();
        assert!((v - 1.504_505_556_127_350_1).abs() < 1e-13);
        let v = caputo_monomial(1.0, 0.5, 1.0).unwrap();
        assert!((v - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-13);
        assert_eq!(caputo_monomial(0.0, 0.5, 0.7).unwrap(), 0.0);
        assert!(caputo_monomial(-1.0, 0.5, 0.7).is_err());
        assert!(caputo_monomial(1.0, 1.0, 0.7).is_err());
    }

    #[test]
    fn composition_for_order_one_and_a_half() {
        let g = Grid::uniform(0.0, 1.0, 200).unwrap();
        let m = CaputoMatrix::assemble(&g, 0.5).unwrap();
        // f = t^2, so f' = 2t and L1 is exact on affine samples.
        let df: Vec<f64> = g.nodes().iter().map(|t| 2.0 * t).collect();
        let out = m.compose_higher_order(&df).unwrap();
        assert!((out[200] - 2.256_758_334_191_025).abs() < 1e-10);
        // Affine f has zero second derivative: f' is constant.
        let out = m.compose_higher_order(&vec![3.0; g.len()]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn composition_for_order_one_point_three() {
        let want = 3.884_284_960_671_761_3;
        let g = Grid::uniform(0.0, 1.0, 400).unwrap();
        let m = CaputoMatrix::assemble(&g, 0.3).unwrap();
        let df: Vec<f64> = g.nodes().iter().map(|t| 3.0 * t * t).collect();
        let out = m.compose_higher_order(&df).unwrap();
        assert!((out[400] - want).abs() < 1e-3);
    }

    #[test]
    fn transpose_is_adjoint() {
        let g = Grid::graded(0.0, 1.0, 9, 1.5).unwrap();
        let m = CaputoMatrix::assemble(&g, 0.6).unwrap();
        let f: Vec<f64> = (0..10).map(|k| (k as f64 * 0.7).sin()).collect();
        let a: Vec<f64> = (0..10).map(|k| (k as f64 * 1.3).cos()).collect();
        let lhs = dot(&a, &m.apply(&f).unwrap());
        let rhs = dot(&m.apply_transpose(&a).unwrap(), &f);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let g = Grid::uniform(0.0, 1.0, 4).unwrap();
        assert!(CaputoMatrix::assemble(&g, 0.0).is_err());
        assert!(CaputoMatrix::assemble(&g, 1.0).is_err());
        assert!(l1_row_weights(&g, 0.5, 5).is_err());
        let m = CaputoMatrix::assemble(&g, 0.5).unwrap();
        assert!(m.apply(&[1.0; 4]).is_err());
    }
}

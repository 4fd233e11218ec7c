//! Caputo fractional derivatives on collocation grids.

mod gamma;
mod grid;
mod matrix;

pub use gamma::gamma;
pub use grid::{FractionalOrder, Grid};
pub use matrix::{caputo_monomial, l1_row_weights, CaputoMatrix};

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn empirical_order(steps: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    // Rounding bound for row `i` of `m` applied to `f`.
    fn rounding(m: &CaputoMatrix, i: usize, f: &[f64]) -> f64 {
        64.0 * f64::EPSILON
            * m.row(i)
                .iter()
                .zip(f)
                .map(|(w, x)| (w * x).abs())
                .sum::<f64>()
    }

    fn grid_strategy() -> impl Strategy<Value = Grid> {
        (2usize..60, 0.1f64..5.0, -2.0f64..2.0, 1.0f64..3.0)
            .prop_map(|(n, span, a, r)| Grid::graded(a, a + span, n, r).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn structure_and_row_sums(grid in grid_strategy(), alpha in 0.01f64..0.99) {
            let m = CaputoMatrix::assemble(&grid, alpha).unwrap();
            prop_assert!((0..m.dim()).all(|k| m.get(0, k) == 0.0));
            for i in 0..m.dim() {
                for k in i + 1..m.dim() {
                    prop_assert_eq!(m.get(i, k), 0.0);
                }
            }
            for i in 1..m.dim() {
                let row = m.row(i);
                let max = row.iter().fold(0.0f64, |a, w| a.max(w.abs()));
                let sum: f64 = row.iter().sum();
                prop_assert!(sum.abs() <= 1e-12 * max, "row {} sum {} max {}", i, sum, max);
            }
        }

        #[test]
        fn exact_on_affine(grid in grid_strategy(), alpha in 0.01f64..0.99, slope in -3.0f64..3.0, icpt in -3.0f64..3.0) {
            let m = CaputoMatrix::assemble(&grid, alpha).unwrap();
            let a = grid.origin();
            let f: Vec<f64> = grid.nodes().iter().map(|t| slope * t + icpt).collect();
            let out = m.apply(&f).unwrap();
            for (i, t) in grid.nodes().iter().enumerate().skip(1) {
                let want = slope * caputo_monomial(1.0, alpha, t - a).unwrap();
                prop_assert!((out[i] - want).abs() <= 1e-10 * want.abs() + rounding(&m, i, &f),
                    "node {}: {} vs {}", i, out[i], want);
            }
        }

        #[test]
        fn apply_is_linear(grid in grid_strategy(), alpha in 0.01f64..0.99, ca in -2.0f64..2.0, cb in -2.0f64..2.0) {
            let m = CaputoMatrix::assemble(&grid, alpha).unwrap();
            let f: Vec<f64> = grid.nodes().iter().map(|t| t.sin()).collect();
            let g: Vec<f64> = grid.nodes().iter().map(|t| (2.0 * t).exp()).collect();
            let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| ca * x + cb * y).collect();
            let lhs = m.apply(&mix).unwrap();
            let af = m.apply(&f).unwrap();
            let ag = m.apply(&g).unwrap();
            for i in 0..m.dim() {
                let rhs = ca * af[i] + cb * ag[i];
                let bound = rounding(&m, i, &mix) + (ca.abs() + 1.0) * rounding(&m, i, &f) + (cb.abs() + 1.0) * rounding(&m, i, &g);
                prop_assert!((lhs[i] - rhs).abs() <= bound + 1e-300, "row {}: {} vs {}", i, lhs[i], rhs);
            }
        }
    }

    #[test]
    fn convergence_order_on_square() {
        for alpha in [0.3, 0.5, 0.7] {
            let ns = [25usize, 50, 100, 200];
            let mut errs = Vec::new();
            for &n in &ns {
                let g = Grid::uniform(0.0, 1.0, n).unwrap();
                let m = CaputoMatrix::assemble(&g, alpha).unwrap();
                let f: Vec<f64> = g.nodes().iter().map(|t| t * t).collect();
                let out = m.apply(&f).unwrap();
                let err = g
                    .nodes()
                    .iter()
                    .zip(&out)
                    .map(|(t, v)| (v - caputo_monomial(2.0, alpha, *t).unwrap()).abs())
                    .fold(0.0, f64::max);
                errs.push(err);
            }
            let hs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
            let p = empirical_order(&hs, &errs);
            let theory = 2.0 - alpha;
            assert!((p - theory).abs() <= 0.35, "alpha {alpha}: order {p}");
        }
    }

    #[test]
    fn near_unit_order_recovers_backward_difference() {
        let g = Grid::graded(0.0, 1.0, 30, 1.3).unwrap();
        let m = CaputoMatrix::assemble(&g, 1.0 - 1e-6).unwrap();
        let t = g.nodes();
        let f: Vec<f64> = t.iter().map(|x| (1.5 * x).sin()).collect();
        let n = g.intervals();
        let out = m.apply(&f).unwrap();
        let bd = (f[n] - f[n - 1]) / (t[n] - t[n - 1]);
        assert!((out[n] - bd).abs() < 1e-3);
    }
}

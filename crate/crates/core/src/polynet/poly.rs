//! Legendre and Chebyshev polynomial families and their derivatives.

use serde::{Deserialize, Serialize};

/// Orthogonal family used by a polynomial block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyFamily {
    Legendre,
    Chebyshev,
}

const BOUNDARY_SLACK: f64 = 1e-12;

fn clamp_unit(x: f64) -> f64 {
    if x.abs() <= 1.0 + BOUNDARY_SLACK {
        x.clamp(-1.0, 1.0)
    } else {
        x
    }
}

/// `[P_0(x), ..., P_{n_max}(x)]` by the three-term recurrence
/// `(n+1) P_{n+1} = (2n+1) x P_n - n P_{n-1}`.
pub fn legendre_eval(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    let mut d = [vec![], vec![], vec![]];
    fill_legendre(clamp_unit(x), &mut out, &mut d, 0);
    out
}

/// `[T_0(x), ..., T_{n_max}(x)]` by `T_{n+1} = 2 x T_n - T_{n-1}`.
pub fn chebyshev_eval(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    let mut d = [vec![], vec![], vec![]];
    fill_chebyshev(clamp_unit(x), &mut out, &mut d, 0);
    out
}

/// Values and the first `derivs` derivatives (at most 3) of a family at `x`.
///
/// `out[0]` receives values, `out[r]` the r-th derivative; every slice has
/// length `n_max + 1`.
pub fn eval_with_derivatives(
    family: PolyFamily,
    n_max: usize,
    x: f64,
    derivs: usize,
) -> [Vec<f64>; 4] {
    let mut v = vec![0.0; n_max + 1];
    let mut d = [
        vec![0.0; n_max + 1],
        vec![0.0; n_max + 1],
        vec![0.0; n_max + 1],
    ];
    let x = clamp_unit(x);
    match family {
        PolyFamily::Legendre => fill_legendre(x, &mut v, &mut d, derivs),
        PolyFamily::Chebyshev => fill_chebyshev(x, &mut v, &mut d, derivs),
    }
    let [d1, d2, d3] = d;
    [v, d1, d2, d3]
}

// Differentiating the recurrence r times gives
// (n+1) P^(r)_{n+1} = (2n+1) (r P^(r-1)_n + x P^(r)_n) - n P^(r)_{n-1}.
pub(crate) fn fill_legendre(x: f64, v: &mut [f64], d: &mut [Vec<f64>; 3], derivs: usize) {
    let len = v.len();
    v[0] = 1.0;
    if len > 1 {
        v[1] = x;
    }
    for r in 0..derivs {
        d[r][0] = 0.0;
        if len > 1 {
            d[r][1] = if r == 0 { 1.0 } else { 0.0 };
        }
    }
    for n in 1..len.saturating_sub(1) {
        let nf = n as f64;
        let a = 2.0 * nf + 1.0;
        let inv = 1.0 / (nf + 1.0);
        v[n + 1] = (a * x * v[n] - nf * v[n - 1]) * inv;
        for r in 0..derivs {
            let lower = if r == 0 { v[n] } else { d[r - 1][n] };
            let dr = &mut d[r];
            dr[n + 1] = (a * ((r + 1) as f64 * lower + x * dr[n]) - nf * dr[n - 1]) * inv;
        }
    }
}

// T^(r)_{n+1} = 2 (r T^(r-1)_n + x T^(r)_n) - T^(r)_{n-1}.
pub(crate) fn fill_chebyshev(x: f64, v: &mut [f64], d: &mut [Vec<f64>; 3], derivs: usize) {
    let len = v.len();
    v[0] = 1.0;
    if len > 1 {
        v[1] = x;
    }
    for r in 0..derivs {
        d[r][0] = 0.0;
        if len > 1 {
            d[r][1] = if r == 0 { 1.0 } else { 0.0 };
        }
    }
    for n in 1..len.saturating_sub(1) {
        v[n + 1] = 2.0 * x * v[n] - v[n - 1];
        for r in 0..derivs {
            let lower = if r == 0 { v[n] } else { d[r - 1][n] };
            let dr = &mut d[r];
            dr[n + 1] = 2.0 * ((r + 1) as f64 * lower + x * dr[n]) - dr[n - 1];
        }
    }
}

/// Operational matrix of Legendre differentiation: `V'(x) = A V(x)` where
/// `V = [P_0, ..., P_m]^T`. Entry `(i, j)` is `2j + 1` when `i - j` is a
/// positive odd offset and zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreDerivMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl LegendreDerivMatrix {
    pub fn new(m: usize) -> Self {
        let dim = m + 1;
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            let mut k = 1;
            while k <= i {
                let j = i - k;
                entries[i * dim + j] = (2 * j + 1) as f64;
                k += 2;
            }
        }
        Self { order: m, entries }
    }

    /// Highest polynomial degree covered.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * (self.order + 1) + j]
    }

    /// `A v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let dim = self.order + 1;
        assert_eq!(v.len(), dim, "vector length must be order + 1");
        (0..dim)
            .map(|i| (0..i).map(|j| self.entries[i * dim + j] * v[j]).sum())
            .collect()
    }
}

/// Shorthand for [`LegendreDerivMatrix::new`].
pub fn legendre_derivative_matrix(m: usize) -> LegendreDerivMatrix {
    LegendreDerivMatrix::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn closed_form(x: f64) -> [f64; 6] {
        let x2 = x * x;
        [
            1.0,
            x,
            (3.0 * x2 - 1.0) / 2.0,
            (5.0 * x2 * x - 3.0 * x) / 2.0,
            (35.0 * x2 * x2 - 30.0 * x2 + 3.0) / 8.0,
            (63.0 * x2 * x2 * x - 70.0 * x2 * x + 15.0 * x) / 8.0,
        ]
    }

    #[test]
    fn legendre_small_cases() {
        assert_eq!(legendre_eval(3, 0.5), vec![1.0, 0.5, -0.125, -0.4375]);
        assert!(legendre_eval(7, 1.0)
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-15));
        assert_eq!(legendre_eval(4, -1.0), vec![1.0, -1.0, 1.0, -1.0, 1.0]);
        assert_eq!(legendre_eval(0, 0.3), vec![1.0]);
    }

    #[test]
    fn chebyshev_small_cases() {
        assert_eq!(chebyshev_eval(2, 0.5), vec![1.0, 0.5, -0.5]);
        assert_eq!(chebyshev_eval(3, 1.0), vec![1.0; 4]);
        let theta = std::f64::consts::PI / 3.0;
        let t = chebyshev_eval(3, theta.cos());
        assert!((t[3] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn recurrence_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: f64 = rng.gen_range(-1.0..=1.0);
            let got = legendre_eval(5, x);
            for (g, w) in got.iter().zip(closed_form(x)) {
                assert!((g - w).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn slight_overshoot_is_clamped() {
        let v = legendre_eval(3, 1.0 + 1e-13);
        assert!(v.iter().all(|p| (p - 1.0).abs() < 1e-15));
    }

    #[test]
    fn derivative_matrix_entries() {
        let a = legendre_derivative_matrix(3);
        let mut nonzero = vec![];
        for i in 0..4 {
            for j in 0..4 {
                if a.get(i, j) != 0.0 {
                    nonzero.push((i, j, a.get(i, j)));
                }
            }
        }
        assert_eq!(
            nonzero,
            vec![(1, 0, 1.0), (2, 1, 3.0), (3, 0, 1.0), (3, 2, 5.0)]
        );
        assert!((0..4).all(|j| a.get(0, j) == 0.0));
    }

    #[test]
    fn derivative_matrix_identity_matches_finite_difference() {
        let a = legendre_derivative_matrix(6);
        let x = 0.3;
        let h = 1e-5;
        let lhs = a.apply(&legendre_eval(6, x));
        let hi = legendre_eval(6, x + h);
        let lo = legendre_eval(6, x - h);
        for i in 0..7 {
            let fd = (hi[i] - lo[i]) / (2.0 * h);
            assert!((lhs[i] - fd).abs() < 1e-7, "degree {i}");
        }
    }

    #[test]
    fn derivative_matrix_identity_matches_analytic_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 1..=10 {
            let a = legendre_derivative_matrix(m);
            for _ in 0..50 {
                let x: f64 = rng.gen_range(-1.0..=1.0);
                let [v, d1, _, _] = eval_with_derivatives(PolyFamily::Legendre, m, x, 1);
                let av = a.apply(&v);
                for i in 0..=m {
                    assert!((av[i] - d1[i]).abs() < 1e-10, "m {m} degree {i}");
                }
            }
        }
    }

    #[test]
    fn higher_derivatives_match_finite_differences() {
        for family in [PolyFamily::Legendre, PolyFamily::Chebyshev] {
            let x = 0.37;
            let h = 1e-4;
            let [_, _, d2, d3] = eval_with_derivatives(family, 8, x, 3);
            let [_, d1p, d2p, _] = eval_with_derivatives(family, 8, x + h, 2);
            let [_, d1m, d2m, _] = eval_with_derivatives(family, 8, x - h, 2);
            for i in 0..=8 {
                let fd2 = (d1p[i] - d1m[i]) / (2.0 * h);
                let fd3 = (d2p[i] - d2m[i]) / (2.0 * h);
                assert!(
                    (d2[i] - fd2).abs() < 1e-5 * (1.0 + d2[i].abs()),
                    "{family:?} d2 {i}"
                );
                assert!(
                    (d3[i] - fd3).abs() < 1e-5 * (1.0 + d3[i].abs()),
                    "{family:?} d3 {i}"
                );
            }
        }
    }
}

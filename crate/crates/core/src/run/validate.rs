//! Self-checks of every numerical kernel against independent oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caputo::{caputo_monomial, empirical_order, gamma, CaputoMatrix, Grid};
use crate::optimize::{dense_inverse_hessian, LbfgsState};
use crate::polynet::{
    eval_with_derivatives, legendre_derivative_matrix, legendre_eval, PolyFamily,
};
use crate::residual::{builtin_problem, Collocation, ExactTrial, LossConfig, PinnObjective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ValidateOptions {
    /// Perturbs one operational-matrix weight before the row-sum check, to
    /// show the check is able to fail.
    pub perturb_weight: Option<f64>,
}

type Outcome = std::result::Result<String, String>;
type Suite = Box<dyn Fn() -> Outcome>;

fn check(cond: bool, ok: String, fail: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail())
    }
}

fn gamma_values() -> Outcome {
    let pi_sqrt = std::f64::consts::PI.sqrt();
    let known = [
        (0.1, 9.513_507_698_668_732),
        (0.5, pi_sqrt),
        (1.0, 1.0),
        (1.5, 0.5 * pi_sqrt),
        (2.5, 0.75 * pi_sqrt),
        (5.0, 24.0),
        (10.0, 362_880.0),
        (20.0, 1.216_451_004_088_32e17),
    ];
    let mut worst = 0.0f64;
    for (z, want) in known {
        let got = gamma(z).map_err(|e| e.to_string())?;
        worst = worst.max(((got - want) / want).abs());
    }
    check(
        worst <= 1e-13,
        format!("max relative error {worst:.2e}"),
        || format!("max relative error {worst:.2e} exceeds 1e-13"),
    )
}

fn l1_convergence() -> Outcome {
    let ns = [25usize, 50, 100, 200];
    let mut parts = Vec::new();
    let mut ok = true;
    for alpha in [0.3, 0.5, 0.7] {
        let mut errs = Vec::new();
        for &n in &ns {
            let g = Grid::uniform(0.0, 1.0, n).map_err(|e| e.to_string())?;
            let m = CaputoMatrix::assemble(&g, alpha).map_err(|e| e.to_string())?;
            let f: Vec<f64> = g.nodes().iter().map(|t| t * t).collect();
            let out = m.apply(&f).map_err(|e| e.to_string())?;
            let mut err = 0.0f64;
            for (t, v) in g.nodes().iter().zip(&out) {
                err = err
                    .max((v - caputo_monomial(2.0, alpha, *t).map_err(|e| e.to_string())?).abs());
            }
            errs.push(err);
        }
        let hs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
        let order = empirical_order(&hs, &errs);
        let band = (2.0 - alpha - 0.35)..=(2.0 - alpha + 0.35);
        ok &= band.contains(&order) && errs[2] <= 2e-2;
        parts.push(format!(
            "alpha {alpha}: order {order:.3}, error(n=100) {:.2e}",
            errs[2]
        ));
    }
    let detail = parts.join("; ");
    check(ok, detail.clone(), || detail)
}

fn row_sums(perturb: Option<f64>) -> Outcome {
    let grids = [
        Grid::uniform(0.0, 1.0, 100).map_err(|e| e.to_string())?,
        Grid::graded(0.0, 2.0, 60, 2.0).map_err(|e| e.to_string())?,
    ];
    let mut worst = 0.0f64;
    for grid in &grids {
        for alpha in [0.1, 0.5, 0.9] {
            let m = CaputoMatrix::assemble(grid, alpha).map_err(|e| e.to_string())?;
            let mut rows = m.rows();
            if let Some(delta) = perturb {
                rows[5][2] += delta;
            }
            if rows[0].iter().any(|&w| w != 0.0) {
                return Err("row 0 is not zero".into());
            }
            for (i, row) in rows.iter().enumerate().skip(1) {
                if row.len() != i + 1 {
                    return Err(format!("row {i} is not lower-triangular"));
                }
                let max = row.iter().fold(0.0f64, |a, w| a.max(w.abs()));
                worst = worst.max(row.iter().sum::<f64>().abs() / max);
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("max relative row sum {worst:.2e}"),
        || format!("max relative row sum {worst:.2e} exceeds 1e-12"),
    )
}

fn legendre_identities() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..=20 {
        let x = -1.0 + 0.1 * k as f64;
        let p = legendre_eval(5, x);
        let closed = [
            1.0,
            x,
            0.5 * (3.0 * x * x - 1.0),
            0.5 * (5.0 * x.powi(3) - 3.0 * x),
            (35.0 * x.powi(4) - 30.0 * x * x + 3.0) / 8.0,
            (63.0 * x.powi(5) - 70.0 * x.powi(3) + 15.0 * x) / 8.0,
        ];
        for (a, b) in p.iter().zip(closed) {
            worst = worst.max((a - b).abs());
        }
        // P_n(1) = 1 and P_n(-1) = (-1)^n are covered by the endpoints.
    }
    check(
        worst <= 1e-13,
        format!("max deviation from closed forms {worst:.2e}"),
        || format!("closed-form deviation {worst:.2e} exceeds 1e-13"),
    )
}

fn derivative_matrix() -> Outcome {
    let m = 12;
    let a = legendre_derivative_matrix(m);
    let mut worst = 0.0f64;
    for k in 0..=16 {
        let x = -1.0 + 0.125 * k as f64;
        let [v, d1, _, _] = eval_with_derivatives(PolyFamily::Legendre, m, x, 1);
        for (lhs, rhs) in d1.iter().zip(a.apply(&v)) {
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
    }
    check(
        worst <= 1e-12,
        format!("max deviation of V' - A V {worst:.2e}"),
        || format!("derivative matrix deviation {worst:.2e} exceeds 1e-12"),
    )
}

fn gradients() -> Outcome {
    let mut checked = 0;
    for id in [3u32, 7] {
        let p = builtin_problem(id).map_err(|e| e.to_string())?;
        let grid = Grid::uniform(0.0, 1.0, 20).map_err(|e| e.to_string())?;
        let obj = PinnObjective::from_problem(p, grid, LossConfig::default())
            .map_err(|e| e.to_string())?;
        let x = obj.init_parameters(11);
        let (_, g) = obj.value_and_gradient(&x).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
        for _ in 0..8 {
            let k = rng.gen_range(0..x.len());
            let f = |h: f64| {
                let mut y = x.clone();
                y[k] += h;
                obj.value(&y)
            };
            let d = |h: f64| -> crate::Result<f64> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
            let fd = (4.0 * d(5e-4).map_err(|e| e.to_string())?
                - d(1e-3).map_err(|e| e.to_string())?)
                / 3.0;
            let err = (g[k] - fd).abs();
            if err > 1e-9 && err > 1e-6 * g[k].abs().max(fd.abs()) {
                return Err(format!(
                    "example {id}, parameter {k}: analytic {} vs finite difference {fd}",
                    g[k]
                ));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} loss-gradient entries match finite differences"
    ))
}

fn two_loop() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dim = rng.gen_range(1..=5);
        let cap = rng.gen_range(1..=3);
        let mut st = LbfgsState::new(cap).map_err(|e| e.to_string())?;
        while st.len() < cap {
            let s: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = s.iter().map(|v| v * rng.gen_range(0.5..2.0)).collect();
            st.push(s, y);
        }
        let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = st.direction(&g);
        let h = dense_inverse_hessian(&st, dim);
        for i in 0..dim {
            let want: f64 = -(0..dim).map(|j| h[i][j] * g[j]).sum::<f64>();
            worst = worst.max((d[i] - want).abs());
        }
    }
    check(
        worst <= 1e-10,
        format!("max deviation {worst:.2e} over 50 instances"),
        || format!("two-loop deviates from the dense recursion by {worst:.2e}"),
    )
}

fn residual_decay() -> Outcome {
    let mut parts = Vec::new();
    for id in [1u32, 2, 3, 4, 7] {
        let p = builtin_problem(id).map_err(|e| e.to_string())?;
        let c = Collocation::new(
            p.clone(),
            Grid::uniform(0.0, 1.0, 100).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let r = c.residuals(&ExactTrial(&p)).map_err(|e| e.to_string())?;
        let worst = r
            .iter()
            .flat_map(|v| v[1..].iter())
            .fold(0.0f64, |a, x| a.max(x.abs()));
        if worst > 1e-8 {
            return Err(format!(
                "example {id}: exact residual {worst:.2e} exceeds 1e-8"
            ));
        }
    }
    parts.push("examples 1-4, 7 exact to 1e-8".to_string());
    for id in [5u32, 6, 8] {
        let p = builtin_problem(id).map_err(|e| e.to_string())?;
        let alpha = p
            .states
            .iter()
            .filter_map(|s| s.order)
            .map(|o| o.alpha())
            .find(|a| *a > 0.0)
            .unwrap_or(0.5);
        let ns = [25usize, 50, 100, 200];
        let mut errs = Vec::new();
        for &n in &ns {
            let c = Collocation::new(
                p.clone(),
                Grid::uniform(0.0, 1.0, n).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let r = c.residuals(&ExactTrial(&p)).map_err(|e| e.to_string())?;
            errs.push(
                r.iter()
                    .flat_map(|v| v[1..].iter())
                    .fold(0.0f64, |a, x| a.max(x.abs())),
            );
        }
        let hs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
        let order = empirical_order(&hs, &errs);
        if !(2.0 - alpha - 0.35..=2.0 - alpha + 0.35).contains(&order) {
            return Err(format!(
                "example {id}: residual order {order:.3} outside 2 - {alpha} +/- 0.35"
            ));
        }
        parts.push(format!("example {id} order {order:.3}"));
    }
    Ok(parts.join("; "))
}

/// Runs every suite; the caller decides how to report failures.
pub fn validate(opts: ValidateOptions) -> Vec<SuiteResult> {
    let suites: [(&str, Suite); 8] = [
        ("gamma", Box::new(gamma_values)),
        ("l1-convergence", Box::new(l1_convergence)),
        ("row-sums", Box::new(move || row_sums(opts.perturb_weight))),
        ("legendre", Box::new(legendre_identities)),
        ("derivative-matrix", Box::new(derivative_matrix)),
        ("gradients", Box::new(gradients)),
        ("two-loop", Box::new(two_loop)),
        ("residual-decay", Box::new(residual_decay)),
    ];
    suites
        .into_iter()
        .map(|(name, f)| {
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            SuiteResult {
                name: name.into(),
                passed,
                detail,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_build_passes_every_suite() {
        for s in validate(ValidateOptions::default()) {
            assert!(s.passed, "{}: {}", s.name, s.detail);
        }
    }

    #[test]
    fn perturbed_weight_fails_row_sums_only() {
        let results = validate(ValidateOptions {
            perturb_weight: Some(1e-3),
        });
        for s in results {
            assert_eq!(s.passed, s.name != "row-sums", "{}: {}", s.name, s.detail);
        }
    }
}

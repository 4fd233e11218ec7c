//! Pointwise error norms between a prediction and a reference solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of uniform evaluation points used for reports.
pub const DEFAULT_EVAL_POINTS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: f64,
    pub predicted: f64,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub count: usize,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    /// `None` when the reference vector is identically zero.
    pub relative_l2: Option<f64>,
    pub mae: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample_points: Vec<SamplePoint>,
}

/// Error norms of `predicted - exact`. MAE is `l1 / count`.
pub fn compute_errors(predicted: &[f64], exact: &[f64]) -> Result<ErrorReport> {
    if predicted.len() != exact.len() {
        return Err(Error::Shape {
            expected: exact.len(),
            got: predicted.len(),
            context: "predicted values vs exact values",
        });
    }
    if exact.is_empty() {
        return Err(Error::Domain("error norms need at least one point".into()));
    }
    let (mut l1, mut sq, mut linf, mut ref_sq) = (0.0, 0.0, 0.0f64, 0.0);
    for (p, e) in predicted.iter().zip(exact) {
        let d = (p - e).abs();
        l1 += d;
        sq += d * d;
        linf = linf.max(d);
        ref_sq += e * e;
    }
    let l2 = sq.sqrt();
    Ok(ErrorReport {
        count: exact.len(),
        l1,
        l2,
        linf,
        relative_l2: (ref_sq > 0.0).then(|| l2 / ref_sq.sqrt()),
        mae: l1 / exact.len() as f64,
        sample_points: Vec::new(),
    })
}

/// Like [`compute_errors`], keeping the `(x, predicted, exact)` table.
pub fn compute_errors_at(xs: &[f64], predicted: &[f64], exact: &[f64]) -> Result<ErrorReport> {
    if xs.len() != exact.len() {
        return Err(Error::Shape {
            expected: exact.len(),
            got: xs.len(),
            context: "sample abscissae vs exact values",
        });
    }
    let mut report = compute_errors(predicted, exact)?;
    report.sample_points = xs
        .iter()
        .zip(predicted)
        .zip(exact)
        .map(|((&x, &predicted), &exact)| SamplePoint {
            x,
            predicted,
            exact,
        })
        .collect();
    Ok(report)
}

/// `count` equally spaced points on `[a, b]`, endpoints included.
pub fn evaluation_points(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { b } else { a + h * i as f64 })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let r = compute_errors(&[1.5, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.l1, r.l2, r.linf, r.mae), (0.5, 0.5, 0.5, 0.25));
        assert!((r.relative_l2.unwrap() - 0.223_606_797_749_979).abs() < 1e-15);
    }

    #[test]
    fn identical_vectors_have_zero_error() {
        let r = compute_errors(&[0.3, -4.0, 9.0], &[0.3, -4.0, 9.0]).unwrap();
        assert_eq!(
            (r.l1, r.l2, r.linf, r.mae, r.relative_l2),
            (0.0, 0.0, 0.0, 0.0, Some(0.0))
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            compute_errors(&[1.0], &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
        assert!(compute_errors(&[], &[]).is_err());
        assert_eq!(
            compute_errors(&[1.0, 0.0], &[0.0, 0.0])
                .unwrap()
                .relative_l2,
            None
        );
    }

    #[test]
    fn mae_is_l1_over_count() {
        // 300 points reproduce a reported L1/MAE pair of 7.16e-4 / 2.39e-6.
        let xs = evaluation_points(0.0, 1.0, DEFAULT_EVAL_POINTS);
        let exact: Vec<f64> = xs.iter().map(|x| (-x).exp()).collect();
        let pred: Vec<f64> = exact.iter().map(|e| e + 7.16e-4 / 300.0).collect();
        let r = compute_errors_at(&xs, &pred, &exact).unwrap();
        assert!((r.mae - 2.39e-6).abs() < 1e-8);
        assert_eq!(r.sample_points.len(), 300);
        assert_eq!(xs[299], 1.0);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1e3f64..1e3, n),
                proptest::collection::vec(-1e3f64..1e3, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn norm_ordering((p, e) in pair()) {
            let r = compute_errors(&p, &e).unwrap();
            let tol = 1e-12 * r.l1.max(1.0);
            prop_assert!(r.linf <= r.l2 + tol);
            prop_assert!(r.l2 <= r.l1 + tol);
            prop_assert!(r.mae <= r.linf + tol);
        }

        #[test]
        fn scale_equivariance((p, e) in pair(), c in -1e2f64..1e2) {
            prop_assume!(c.abs() > 1e-3);
            let r = compute_errors(&p, &e).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| c * v).collect();
            let es: Vec<f64> = e.iter().map(|v| c * v).collect();
            let s = compute_errors(&ps, &es).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1e-300);
            prop_assert!(close(s.l1, c.abs() * r.l1));
            prop_assert!(close(s.l2, c.abs() * r.l2));
            prop_assert!(close(s.linf, c.abs() * r.linf));
            prop_assert!(close(s.mae, c.abs() * r.mae));
            if let (Some(a), Some(b)) = (s.relative_l2, r.relative_l2) {
                prop_assert!(close(a, b));
            }
        }

        #[test]
        fn permutation_invariance((p, e) in pair(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let ep: Vec<f64> = idx.iter().map(|&i| e[i]).collect();
            let (r, s) = (compute_errors(&p, &e).unwrap(), compute_errors(&pp, &ep).unwrap());
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
            prop_assert!(close(r.l1, s.l1) && close(r.l2, s.l2) && close(r.mae, s.mae));
            prop_assert_eq!(r.linf, s.linf);
            prop_assert_eq!(r.relative_l2.is_some(), s.relative_l2.is_some());
        }
    }
}

//! Brute-force dense reference solver.
//!
//! Independently of anything Krylov, the regularization parameter that
//! matches the discrepancy principle can be found by bisection on the
//! monotone map `alpha -> ||A x_alpha - b||`, refactorizing the dense
//! normal equations at every probe. Slow and simple on purpose: this is the
//! golden reference the iterative solvers are tested against.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(
        "sigma {sigma} outside the reachable residual range ({reachable_min}, {reachable_max})"
    )]
    InfeasibleSigma {
        sigma: f64,
        reachable_min: f64,
        reachable_max: f64,
    },
    #[error("oracle failed: {0}")]
    NumericalFailure(String),
}

/// Solves `(A^T A + alpha I) x = A^T b` by dense Cholesky.
pub fn dense_tikhonov_solve(a: &DMatrix<f64>, b: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let n = a.ncols();
    let lhs = a.tr_mul(a) + DMatrix::identity(n, n) * alpha;
    let rhs = a.tr_mul(b);
    match lhs.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        // fall back to LU for nearly singular normal equations
        None => lhs.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n)),
    }
}

/// Residual `||A x_alpha - b||` of the dense Tikhonov solution.
pub fn discrepancy_residual(a: &DMatrix<f64>, b: &DVector<f64>, alpha: f64) -> f64 {
    let x = dense_tikhonov_solve(a, b, alpha);
    (a * x - b).norm()
}

/// Finds `(x, lambda)` with `||A x - b|| = sigma` and `x` the Tikhonov
/// solution at `alpha = 1/lambda`, via bisection in `log alpha` down to
/// `|residual - sigma| <= 1e-12 sigma`.
pub fn oracle_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    sigma: f64,
) -> Result<(DVector<f64>, f64), OracleError> {
    let b_norm = b.norm();
    if !(sigma > 0.0) || sigma >= b_norm {
        return Err(OracleError::InfeasibleSigma {
            sigma,
            reachable_min: 0.0,
            reachable_max: b_norm,
        });
    }

    // bracket the target: residual grows from the least-squares floor to
    // ||b|| as alpha sweeps 0 -> infinity
    let mut lo = 1.0f64;
    let mut d_lo = discrepancy_residual(a, b, lo);
    let mut steps = 0;
    while d_lo > sigma {
        lo /= 10.0;
        d_lo = discrepancy_residual(a, b, lo);
        steps += 1;
        if steps > 60 {
            return Err(OracleError::InfeasibleSigma {
                sigma,
                reachable_min: d_lo,
                reachable_max: b_norm,
            });
        }
    }
    let mut hi = lo.max(1.0);
    let mut d_hi = discrepancy_residual(a, b, hi);
    steps = 0;
    while d_hi < sigma {
        hi *= 10.0;
        d_hi = discrepancy_residual(a, b, hi);
        steps += 1;
        if steps > 60 {
            return Err(OracleError::NumericalFailure(format!(
                "no upper bracket: residual {d_hi} below sigma {sigma} at alpha {hi}"
            )));
        }
    }

    for _ in 0..500 {
        let mid = (lo * hi).sqrt();
        let d_mid = discrepancy_residual(a, b, mid);
        if (d_mid - sigma).abs() <= 1e-12 * sigma {
            let x = dense_tikhonov_solve(a, b, mid);
            return Ok((x, 1.0 / mid));
        }
        if d_mid < sigma {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi / lo - 1.0).abs() < 1e-300 {
            break;
        }
    }
    Err(OracleError::NumericalFailure(
        "bisection did not reach the target tolerance".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_problem() -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 1.0])),
            DVector::from_row_slice(&[1.0, 1.0]),
        )
    }

    #[test]
    fn diagonal_oracle_sits_on_the_discrepancy_curve() {
        let (a, b) = diag_problem();
        let sigma = 0.5;
        let (x, lambda) = oracle_solve(&a, &b, sigma).unwrap();
        let res = (&a * &x - &b).norm();
        assert!((res - sigma).abs() <= 1e-12 * sigma);
        // stationarity of the Tikhonov equations at alpha = 1/lambda
        let alpha = 1.0 / lambda;
        let lhs = a.tr_mul(&a) * &x + &x * alpha - a.tr_mul(&b);
        assert!(lhs.norm() <= 1e-12);
    }

    #[test]
    fn sigma_near_data_norm_gives_tiny_solution() {
        let (a, b) = diag_problem();
        let sigma = 0.999 * b.norm();
        let (x, lambda) = oracle_solve(&a, &b, sigma).unwrap();
        assert!(x.norm() < 5e-3 * b.norm());
        assert!(lambda < 1.0);
    }

    #[test]
    fn sigma_near_least_squares_floor_gives_small_alpha() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(12, 6, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(12, |_, _| rng.gen_range(-1.0..1.0));
        let floor = discrepancy_residual(&a, &b, 1e-13);
        let sigma = floor * 1.001;
        let (_, lambda) = oracle_solve(&a, &b, sigma).unwrap();
        // alpha must be small (lambda large) to get that close to the floor
        assert!(lambda > 1e2);
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        let (a, b) = diag_problem();
        assert!(matches!(
            oracle_solve(&a, &b, b.norm() * 1.1),
            Err(OracleError::InfeasibleSigma { .. })
        ));
        // below the least-squares floor: this full-rank square system can
        // reach zero residual, so use an inconsistent tall system
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let at = DMatrix::from_fn(10, 3, |_, _| rng.gen_range(-1.0..1.0));
        let bt = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let floor = discrepancy_residual(&at, &bt, 1e-13);
        assert!(matches!(
            oracle_solve(&at, &bt, floor * 0.5),
            Err(OracleError::InfeasibleSigma { .. })
        ));
    }

    #[test]
    fn discrepancy_curve_is_strictly_increasing() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(15, 10, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(15, |_, _| rng.gen_range(-1.0..1.0));
        let alphas: Vec<f64> = (0..20).map(|i| 10f64.powf(-6.0 + i as f64 * 0.5)).collect();
        let mut prev = discrepancy_residual(&a, &b, alphas[0]);
        for &alpha in &alphas[1..] {
            let d = discrepancy_residual(&a, &b, alpha);
            assert!(d > prev, "curve not increasing at alpha {alpha}");
            prev = d;
        }
    }
}

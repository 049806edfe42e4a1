//! MINRES for symmetric (possibly indefinite) systems.
//!
//! Classical Lanczos-based minimum-residual recurrence (Paige & Saunders
//! 1975), no preconditioning. The operator is passed as a closure so that
//! callers can count matrix-vector products their own way.

use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct MinresConfig {
    /// Target on `||A x - rhs|| / ||rhs||`.
    pub rel_tol: f64,
    pub max_inner: usize,
}

impl Default for MinresConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_inner: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub solution: DVector<f64>,
    /// Estimated relative residual at the returned iterate.
    pub relres: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("non-finite value encountered in MINRES at iteration {iter}")]
pub struct MinresError {
    pub iter: usize,
}

/// Minimizes `||A x - rhs||` over growing Krylov spaces of the symmetric
/// operator `A`, starting from `x = 0`. Stops when the (recurrence-tracked)
/// relative residual drops below `cfg.rel_tol` or after `cfg.max_inner`
/// steps, whichever comes first; the best iterate so far is returned either
/// way since the residual norm is non-increasing.
pub fn minres(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    rhs: &DVector<f64>,
    cfg: &MinresConfig,
) -> Result<MinresOutcome, MinresError> {
    let n = rhs.len();
    let beta1 = rhs.norm();
    if beta1 == 0.0 {
        return Ok(MinresOutcome {
            solution: DVector::zeros(n),
            relres: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut x = DVector::zeros(n);
    let mut y = rhs.clone();
    let mut r1 = rhs.clone();
    let mut r2 = rhs.clone();

    let mut oldb = 0.0f64;
    let mut beta = beta1;
    let mut dbar = 0.0f64;
    let mut epsln = 0.0f64;
    let mut phibar = beta1;
    let mut cs = -1.0f64;
    let mut sn = 0.0f64;
    let mut w = DVector::zeros(n);
    let mut w2 = DVector::zeros(n);
    let mut relres = 1.0;

    for itn in 1..=cfg.max_inner {
        // Lanczos step
        let v = &y / beta;
        y = apply(&v);
        if itn >= 2 {
            y.axpy(-beta / oldb, &r1, 1.0);
        }
        let alfa = v.dot(&y);
        y.axpy(-alfa / beta, &r2, 1.0);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = y.norm();
        if !(alfa.is_finite() && beta.is_finite()) {
            return Err(MinresError { iter: itn });
        }

        // previous rotations applied to the new tridiagonal column
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;

        // current rotation
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar = sn * phibar;

        // direction update and solution step
        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (v - &w1 * oldeps - &w2 * delta) / gamma;
        x.axpy(phi, &w, 1.0);

        relres = phibar.abs() / beta1;
        if relres <= cfg.rel_tol {
            return Ok(MinresOutcome {
                solution: x,
                relres,
                iterations: itn,
                converged: true,
            });
        }
        if beta <= f64::EPSILON * beta1 {
            // invariant subspace reached; the iterate is exact there
            return Ok(MinresOutcome {
                solution: x,
                relres,
                iterations: itn,
                converged: relres <= cfg.rel_tol,
            });
        }
    }

    Ok(MinresOutcome {
        solution: x,
        relres,
        iterations: cfg.max_inner,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_system_solved_in_one_iteration() {
        let rhs = DVector::from_row_slice(&[1.0, -2.0, 3.0]);
        let out = minres(|v| v.clone(), &rhs, &MinresConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!((out.solution - rhs).norm() < 1e-12);
        assert!(out.converged);
    }

    #[test]
    fn indefinite_diagonal_system() {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, -1.0]));
        let rhs = DVector::from_row_slice(&[1.0, 1.0]);
        let out = minres(|v| &a * v, &rhs, &MinresConfig::default()).unwrap();
        assert!((out.solution[0] - 1.0).abs() < 1e-10);
        assert!((out.solution[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn random_symmetric_indefinite_matches_dense_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 50;
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&raw + raw.transpose()) / 2.0;
        let rhs = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = MinresConfig {
            rel_tol: 1e-10,
            max_inner: 400,
        };
        let out = minres(|v| &a * v, &rhs, &cfg).unwrap();
        let true_relres = (&a * &out.solution - &rhs).norm() / rhs.norm();
        assert!(true_relres <= 1e-6, "true relres {true_relres}");
        let dense = a.clone().lu().solve(&rhs).unwrap();
        let rel = (&out.solution - &dense).norm() / dense.norm();
        assert!(rel <= 1e-5, "solution gap {rel}");
    }

    #[test]
    fn iteration_cap_returns_best_iterate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let n = 60;
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&raw + raw.transpose()) / 2.0;
        let rhs = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = MinresConfig {
            rel_tol: 1e-14,
            max_inner: 5,
        };
        let out = minres(|v| &a * v, &rhs, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 5);
        // still made progress over x = 0
        let res = (&a * &out.solution - &rhs).norm() / rhs.norm();
        assert!(res < 1.0);
    }
}

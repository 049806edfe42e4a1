//! Generalized bidiagonal-Tikhonov (GBiT) reference solver.
//!
//! Like the projected Newton method, GBiT grows a Golub-Kahan Krylov
//! subspace one dimension per iteration, at a cost of two operator products.
//! Instead of a Newton step on the coupled optimality system it solves two
//! small projected Tikhonov systems per iteration -- one unregularized, one
//! with the current parameter `alpha` -- and moves `alpha` toward the
//! discrepancy target `sigma` with one secant step on the projected
//! discrepancy curve:
//!
//! ```text
//! alpha_k = | (sigma - r(z_k)) / (r(y_k) - r(z_k)) | * alpha_{k-1}
//! ```
//!
//! where `r(y) = ||B y - c||`. Both solvers are stopped by the same rule,
//! `||F(x_k, 1/alpha_k)|| <= tol`, evaluated through the square projected
//! block so that no extra operator products are spent on monitoring.

use nalgebra::{DMatrix, DVector};

use crate::bidiag::{BidiagState, BidiagonalMatrix, ExpandStatus};
use crate::operators::LinearOperator;
use crate::projected_newton::projected_f_norms;
use crate::solver::{ConvergenceTrace, IterationRecord, SolveError, SolveOutput, SolverConfig};

/// State of one GBiT iteration.
#[derive(Debug, Clone)]
pub struct GbitState {
    /// Current regularization parameter (`alpha = 1/lambda`).
    pub alpha: f64,
    /// Regularized projected solution.
    pub y: DVector<f64>,
    /// Unregularized projected solution.
    pub z: DVector<f64>,
    /// Krylov dimension.
    pub k: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum GbitStepError {
    #[error("projected system is rank deficient")]
    RankDeficient,
    /// Regularized and unregularized residuals coincide, so the secant
    /// update is undefined; the caller keeps the previous `alpha`.
    #[error("secant update degenerate: r(y) = r(z) = {residual}")]
    DegenerateSecant { residual: f64 },
}

/// Solves the two projected Tikhonov systems of one GBiT iteration:
/// `z = argmin ||B z - c||` and `y = argmin ||B y - c||^2 + alpha ||y||^2`.
///
/// Both least-squares problems are solved through a QR factorization of the
/// (stacked) system matrix rather than through the normal equations, to
/// avoid squaring the condition number of `B`.
pub fn projected_solves(
    b: &BidiagonalMatrix<'_>,
    beta0: f64,
    alpha: f64,
) -> Result<(DVector<f64>, DVector<f64>), GbitStepError> {
    assert!(alpha > 0.0);
    let k = b.cols;
    let dense = b.to_dense();

    let mut c = DVector::zeros(b.rows);
    c[0] = beta0;
    let z = qr_least_squares(dense.clone(), c.clone())?;

    // stacked system [B; sqrt(alpha) I], rhs [c; 0]
    let mut stacked = DMatrix::zeros(b.rows + k, k);
    stacked.view_mut((0, 0), (b.rows, k)).copy_from(&dense);
    let sqrt_alpha = alpha.sqrt();
    for i in 0..k {
        stacked[(b.rows + i, i)] = sqrt_alpha;
    }
    let mut rhs = DVector::zeros(b.rows + k);
    rhs[0] = beta0;
    let y = qr_least_squares(stacked, rhs)?;
    Ok((z, y))
}

fn qr_least_squares(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>, GbitStepError> {
    let qr = a.qr();
    let qt_rhs = qr.q().transpose() * rhs;
    qr.r()
        .solve_upper_triangular(&qt_rhs)
        .ok_or(GbitStepError::RankDeficient)
}

/// One secant step on the discrepancy curve:
/// `alpha = |(sigma - r_z) / (r_y - r_z)| * alpha_prev`.
pub fn update_alpha(
    alpha_prev: f64,
    r_z: f64,
    r_y: f64,
    sigma: f64,
) -> Result<f64, GbitStepError> {
    if r_y == r_z {
        return Err(GbitStepError::DegenerateSecant { residual: r_y });
    }
    Ok(((sigma - r_z) / (r_y - r_z)).abs() * alpha_prev)
}

/// Runs GBiT. `cfg.lambda0` seeds the parameter as `alpha_0 = 1/lambda0`;
/// the remaining fields have the same meaning as for the projected Newton
/// solver.
pub fn solve(
    op: &LinearOperator,
    b: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveOutput, SolveError> {
    cfg.validate()?;
    let beta0 = b.norm();
    let sigma = cfg.sigma;
    if beta0 <= sigma {
        return Err(SolveError::NoiseDominated {
            b_norm: beta0,
            sigma,
        });
    }

    let mut trace = ConvergenceTrace::new("gbit");
    let mut state = BidiagState::init(op, b, cfg.reorth).map_err(SolveError::from)?;
    let mut alpha = 1.0 / cfg.lambda0;

    // stopping rule shared with the projected Newton method, evaluated at
    // the starting point x_0 = 0 first
    let mut threshold = cfg.tol;
    {
        let b_sq = state.b_matrix(true).map_err(SolveError::from)?;
        let f0 = projected_f_norms(&b_sq, &DVector::zeros(1), 1.0 / alpha, beta0, sigma).0;
        if cfg.relative_tol {
            threshold = cfg.tol * f0;
        }
        if f0 <= threshold {
            return Ok(SolveOutput {
                x: DVector::zeros(op.cols()),
                lambda: 1.0 / alpha,
                iterations: 0,
                trace,
            });
        }
    }

    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    let mut y = DVector::zeros(0);

    for k in 1..=cfg.maxit {
        if state.is_active() {
            match state.expand(op).map_err(SolveError::from)? {
                ExpandStatus::Expanded | ExpandStatus::SubspaceComplete(_) => {}
                ExpandStatus::Breakdown(at) => {
                    let x = state.exact_ls_solution(beta0).map_err(SolveError::from)?;
                    return Err(SolveError::Breakdown {
                        at,
                        partial: Box::new(SolveOutput {
                            x,
                            lambda: 1.0 / alpha,
                            iterations: k - 1,
                            trace,
                        }),
                    });
                }
            }
        }
        let fixed = !state.is_active();
        let b_rect = if fixed {
            // exact factorization: the square block doubles as the
            // least-squares system (after a mu-completion only the
            // rectangular block exists)
            match state.b_matrix(true) {
                Ok(bm) => bm,
                Err(_) => state.b_matrix(false).map_err(SolveError::from)?,
            }
        } else {
            state.b_matrix(false).map_err(SolveError::from)?
        };

        let (z, y_new) = match projected_solves(&b_rect, beta0, alpha) {
            Ok(pair) => pair,
            Err(GbitStepError::RankDeficient) => {
                let best_out = make_output(&state, best.as_ref(), &y, alpha, k - 1, &trace);
                return Err(SolveError::SingularJacobian {
                    iter: k,
                    best: Box::new(best_out),
                });
            }
            Err(e @ GbitStepError::DegenerateSecant { .. }) => {
                return Err(SolveError::Config(e.to_string()))
            }
        };
        y = y_new;
        let r_z = residual_norm(&b_rect, &z, beta0);
        let r_y = residual_norm(&b_rect, &y, beta0);
        match update_alpha(alpha, r_z, r_y, sigma) {
            Ok(a) => alpha = a,
            Err(GbitStepError::DegenerateSecant { residual }) => {
                // freeze alpha for one iteration; one more Krylov dimension
                // typically separates the two residuals
                trace.warn(
                    k,
                    format!("secant update degenerate at residual {residual}; alpha kept"),
                );
            }
            Err(e) => return Err(SolveError::Config(e.to_string())),
        }
        let lambda = 1.0 / alpha;

        // monitor ||F(x_k, 1/alpha_k)|| in the subspace
        let (f_norm, residual) = if fixed {
            projected_f_norms(&b_rect, &y, lambda, beta0, sigma)
        } else {
            let b_sq = state.b_matrix(true).map_err(SolveError::from)?;
            let mut padded = DVector::zeros(y.len() + 1);
            padded.rows_mut(0, y.len()).copy_from(&y);
            projected_f_norms(&b_sq, &padded, lambda, beta0, sigma)
        };

        trace.push(IterationRecord {
            iter: k,
            f_norm,
            residual,
            lambda,
            gamma: 1.0,
            backtracks: 0,
            mv_total: op.stats().total(),
            inner_iters: None,
        });

        if best.as_ref().map_or(true, |(f, ..)| f_norm < *f) {
            best = Some((f_norm, state.lift(&y), lambda));
        }

        if f_norm <= threshold {
            return Ok(SolveOutput {
                x: state.lift(&y),
                lambda,
                iterations: k,
                trace,
            });
        }
    }

    let best_out = make_output(&state, best.as_ref(), &y, alpha, cfg.maxit, &trace);
    Err(SolveError::MaxIterations {
        best: Box::new(best_out),
    })
}

fn residual_norm(b: &BidiagonalMatrix<'_>, y: &DVector<f64>, beta0: f64) -> f64 {
    let mut t = b.apply(y);
    t[0] -= beta0;
    t.norm()
}

fn make_output(
    state: &BidiagState,
    best: Option<&(f64, DVector<f64>, f64)>,
    y: &DVector<f64>,
    alpha: f64,
    iterations: usize,
    trace: &ConvergenceTrace,
) -> SolveOutput {
    match best {
        Some((_, x, l)) => SolveOutput {
            x: x.clone(),
            lambda: *l,
            iterations,
            trace: trace.clone(),
        },
        None => SolveOutput {
            x: if y.is_empty() {
                DVector::zeros(state.v_vectors()[0].len())
            } else {
                state.lift(y)
            },
            lambda: 1.0 / alpha,
            iterations,
            trace: trace.clone(),
        },
    }
}

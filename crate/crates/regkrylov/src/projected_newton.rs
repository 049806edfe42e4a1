//! Newton iteration on the Krylov-projected optimality system.
//!
//! The noise-constrained Tikhonov problem
//!
//! ```text
//! min 0.5 ||x||^2   subject to   0.5 ||A x - b||^2 = 0.5 sigma^2
//! ```
//!
//! has optimality conditions `F(x, lambda) = 0` with
//!
//! ```text
//! F(x, lambda) = ( lambda A^T (A x - b) + x ;  0.5 ||A x - b||^2 - 0.5 sigma^2 )
//! ```
//!
//! whose root is simultaneously a Tikhonov solution (`alpha = 1/lambda`) and
//! a point on the discrepancy curve at level `sigma`. Restricted to the
//! Krylov space spanned by the bidiagonalization basis `V_k`, the system
//! collapses to `k+1` equations in the coordinates `y` (`x = V_k y`):
//!
//! ```text
//! F_k(y, lambda) = ( lambda B^T (B y - c) + y ;  0.5 ||B y - c||^2 - 0.5 sigma^2 )
//! ```
//!
//! with `B` the `(k+1) x k` bidiagonal block and `c = ||b|| e_1`. One Newton
//! step on `F_k`, lifted by `V_k`, is a descent direction for the full-space
//! merit `0.5 ||F||^2`, so each iteration expands the basis once, takes one
//! safeguarded Newton step and backtracks until the sufficient-decrease test
//! holds. The norm `||F(x_k, lambda_k)||` used in that test and in the
//! stopping rule is available inside the subspace for free via the square
//! block `B_{k+1,k+1}`, so a full iteration costs exactly two operator
//! products.

use nalgebra::{DMatrix, DVector};

use crate::bidiag::{BidiagState, BidiagonalMatrix, ExpandStatus};
use crate::operators::LinearOperator;
use crate::solver::{ConvergenceTrace, IterationRecord, SolveError, SolveOutput, SolverConfig};

/// One accepted iterate of the projected Newton loop.
#[derive(Debug, Clone)]
pub struct NewtonIterate {
    /// Projected solution coordinates `y_k` (length `k`).
    pub y: DVector<f64>,
    /// Lagrange multiplier, `lambda = 1/alpha`.
    pub lambda: f64,
    /// Last accepted step length.
    pub gamma: f64,
    /// Krylov dimension.
    pub k: usize,
    /// `||F(x_k, lambda_k)||`, evaluated through the projected formula.
    pub f_norm: f64,
}

/// Observer payload handed to [`solve_with_callback`] once per iteration,
/// after the line search accepted a step. Exposes everything needed to
/// cross-check the projected quantities against dense full-space evaluation.
pub struct PnStep<'a> {
    pub k: usize,
    pub lambda_prev: f64,
    /// Starting point `(y_{k-1}^T, 0)^T` of this iteration (length `k`).
    pub y_prev: &'a DVector<f64>,
    /// `||F_k(y_prev, lambda_prev)||`.
    pub f_prev: f64,
    /// `||B y_prev - c||` at the starting point.
    pub residual_prev: f64,
    pub dy: &'a DVector<f64>,
    pub dlambda: f64,
    pub gamma: f64,
    pub backtracks: u32,
    /// Accepted step.
    pub iterate: &'a NewtonIterate,
    pub state: &'a BidiagState,
    pub beta0: f64,
    pub sigma: f64,
}

fn residual_vector(b: &BidiagonalMatrix<'_>, y: &DVector<f64>, beta0: f64) -> DVector<f64> {
    let mut t = b.apply(y);
    t[0] -= beta0;
    t
}

/// Evaluates the projected optimality residual
/// `F = (lambda B^T (B y - c) + y ; 0.5 ||B y - c||^2 - 0.5 sigma^2)`.
pub fn eval_projected_f(
    b: &BidiagonalMatrix<'_>,
    y: &DVector<f64>,
    lambda: f64,
    beta0: f64,
    sigma: f64,
) -> DVector<f64> {
    let t = residual_vector(b, y, beta0);
    let mut grad = b.apply_transpose(&t) * lambda + y;
    let constraint = 0.5 * t.norm_squared() - 0.5 * sigma * sigma;
    grad.extend([constraint]);
    grad
}

/// `(||F||, ||B y - c||)` from a single O(k) evaluation.
pub fn projected_f_norms(
    b: &BidiagonalMatrix<'_>,
    y: &DVector<f64>,
    lambda: f64,
    beta0: f64,
    sigma: f64,
) -> (f64, f64) {
    let t = residual_vector(b, y, beta0);
    let t_norm = t.norm();
    let grad = b.apply_transpose(&t) * lambda + y;
    let constraint = 0.5 * t_norm * t_norm - 0.5 * sigma * sigma;
    let f_norm = (grad.norm_squared() + constraint * constraint).sqrt();
    (f_norm, t_norm)
}

/// Monitor norm `||F(x_k, lambda_k)||` computed in the subspace from the
/// square block `B_{k+1,k+1}` and the padded coordinates `(y_k^T, 0)^T`.
/// Costs O(k); no operator products.
pub fn eval_f_bar(
    b_square: &BidiagonalMatrix<'_>,
    y_bar: &DVector<f64>,
    lambda: f64,
    beta0: f64,
    sigma: f64,
) -> f64 {
    projected_f_norms(b_square, y_bar, lambda, beta0, sigma).0
}

/// Assembles the symmetric projected Jacobian
/// `[[lambda B^T B + I, B^T (B y - c)], [(B y - c)^T B, 0]]`.
pub fn eval_projected_jacobian(
    b: &BidiagonalMatrix<'_>,
    y: &DVector<f64>,
    lambda: f64,
    beta0: f64,
) -> DMatrix<f64> {
    let k = b.cols;
    let bd = b.to_dense();
    let btb = bd.tr_mul(&bd);
    let t = residual_vector(b, y, beta0);
    let g = b.apply_transpose(&t);
    let mut j = DMatrix::zeros(k + 1, k + 1);
    for c in 0..k {
        for r in 0..k {
            j[(r, c)] = lambda * btb[(r, c)];
        }
        j[(c, c)] += 1.0;
        j[(k, c)] = g[c];
        j[(c, k)] = g[c];
    }
    j
}

#[derive(Debug, thiserror::Error)]
#[error("projected Newton system singular")]
pub struct SingularJacobian;

/// Solves the projected Newton system `J (dy; dlambda) = -F` by dense LU
/// with partial pivoting.
pub fn newton_step(
    b: &BidiagonalMatrix<'_>,
    y_bar: &DVector<f64>,
    lambda: f64,
    beta0: f64,
    sigma: f64,
) -> Result<(DVector<f64>, f64), SingularJacobian> {
    let j = eval_projected_jacobian(b, y_bar, lambda, beta0);
    let f = eval_projected_f(b, y_bar, lambda, beta0, sigma);
    let lu = j.lu();
    let d = lu.solve(&(-&f)).ok_or(SingularJacobian)?;
    if d.iter().any(|x| !x.is_finite()) {
        return Err(SingularJacobian);
    }
    let k = y_bar.len();
    Ok((d.rows(0, k).clone_owned(), d[k]))
}

#[derive(Debug, thiserror::Error)]
#[error("line search stagnated at step length {gamma}")]
pub struct StagnationError {
    pub gamma: f64,
}

pub struct LineSearchOutcome {
    pub gamma: f64,
    pub backtracks: u32,
    pub lambda: f64,
    pub y: DVector<f64>,
    /// Monitor norm at the accepted point.
    pub f_monitor: f64,
}

/// Backtracking on an arbitrary monitor function; shared by the expanding
/// and fixed-subspace phases of the solver.
fn backtrack(
    monitor: impl Fn(&DVector<f64>, f64) -> f64,
    y_start: &DVector<f64>,
    lambda_start: f64,
    f_prev: f64,
    dy: &DVector<f64>,
    dlambda: f64,
    cfg: &SolverConfig,
) -> Result<LineSearchOutcome, StagnationError> {
    // positivity safeguard: never let lambda cross zero
    let mut gamma = if lambda_start + dlambda > 0.0 {
        1.0
    } else {
        -cfg.tau * lambda_start / dlambda
    };
    let mut backtracks = 0u32;
    loop {
        let lambda_trial = lambda_start + gamma * dlambda;
        let y_trial = y_start + dy * gamma;
        debug_assert!(lambda_trial > 0.0);
        let f_trial = monitor(&y_trial, lambda_trial);
        // sufficient decrease: 0.5 ||F_new||^2 < (0.5 - c gamma) ||F_old||^2
        if 0.5 * f_trial * f_trial < (0.5 - cfg.c * gamma) * f_prev * f_prev {
            return Ok(LineSearchOutcome {
                gamma,
                backtracks,
                lambda: lambda_trial,
                y: y_trial,
                f_monitor: f_trial,
            });
        }
        gamma *= cfg.tau;
        backtracks += 1;
        if gamma < cfg.gamma_min {
            return Err(StagnationError { gamma });
        }
    }
}

/// Safeguarded backtracking line search along the projected Newton step.
///
/// Starting from `(y_prev, lambda_prev)` with step `(dy, dlambda)`, the step
/// length starts at 1 (shortened to `-tau * lambda/dlambda` first if the
/// full step would make `lambda` nonpositive) and shrinks by `tau` until the
/// sufficient-decrease test against `f_prev = ||F_k(y_prev, lambda_prev)||`
/// passes. Trial points are monitored with [`eval_f_bar`] on the square
/// block, i.e. the trial coordinates are padded with one zero.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    b_square: &BidiagonalMatrix<'_>,
    y_prev: &DVector<f64>,
    lambda_prev: f64,
    f_prev: f64,
    dy: &DVector<f64>,
    dlambda: f64,
    beta0: f64,
    sigma: f64,
    cfg: &SolverConfig,
) -> Result<LineSearchOutcome, StagnationError> {
    let monitor = |y_trial: &DVector<f64>, lambda_trial: f64| {
        let padded = pad_one(y_trial);
        eval_f_bar(b_square, &padded, lambda_trial, beta0, sigma)
    };
    backtrack(monitor, y_prev, lambda_prev, f_prev, dy, dlambda, cfg)
}

fn pad_one(y: &DVector<f64>) -> DVector<f64> {
    let mut padded = DVector::zeros(y.len() + 1);
    padded.rows_mut(0, y.len()).copy_from(y);
    padded
}

/// Solves the noise-constrained Tikhonov problem with the projected Newton
/// iteration. See [`solve_with_callback`] for the observable variant.
pub fn solve(
    op: &LinearOperator,
    b: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveOutput, SolveError> {
    solve_with_callback(op, b, cfg, |_| {})
}

/// [`solve`] with a per-iteration observer, called after each accepted step.
pub fn solve_with_callback(
    op: &LinearOperator,
    b: &DVector<f64>,
    cfg: &SolverConfig,
    mut callback: impl FnMut(&PnStep<'_>),
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

    let trace_seed = ConvergenceTrace::new("pn");
    let mut state = match BidiagState::init(op, b, cfg.reorth) {
        Ok(s) => s,
        Err(e) => return Err(map_init_error(e, op.cols(), cfg.lambda0, trace_seed)),
    };
    let mut trace = trace_seed;

    let mut lambda = cfg.lambda0;
    let mut y: DVector<f64> = DVector::zeros(0);
    let mut threshold = cfg.tol;
    // best iterate seen, by monitor norm (matters when reorthogonalization
    // is off and the monitor stops being monotone)
    let mut best: Option<(f64, DVector<f64>, f64)> = None;

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
                            lambda,
                            iterations: k - 1,
                            trace,
                        }),
                    });
                }
            }
        }
        // Once the factorization is exact the subspace stops growing and the
        // iteration continues as plain damped Newton on the final block.
        let fixed = !state.is_active();
        let b_newton = if fixed {
            final_block(&state)?
        } else {
            state.b_matrix(false).map_err(SolveError::from)?
        };
        let y_prev = if y.len() == b_newton.cols {
            y.clone()
        } else {
            pad_one(&y)
        };
        let lambda_prev = lambda;
        let (f_prev, residual_prev) = projected_f_norms(&b_newton, &y_prev, lambda, beta0, sigma);
        if k == 1 && cfg.relative_tol {
            threshold = cfg.tol * f_prev;
        }

        let (dy, dlambda) = match newton_step(&b_newton, &y_prev, lambda, beta0, sigma) {
            Ok(step) => step,
            Err(SingularJacobian) => {
                let best_out = make_best(&state, best.as_ref(), lambda, k - 1, &trace);
                return Err(SolveError::SingularJacobian {
                    iter: k,
                    best: Box::new(best_out),
                });
            }
        };

        let ls = if fixed {
            let monitor = |y_t: &DVector<f64>, l_t: f64| {
                projected_f_norms(&b_newton, y_t, l_t, beta0, sigma).0
            };
            backtrack(monitor, &y_prev, lambda, f_prev, &dy, dlambda, cfg)
        } else {
            let b_square = state.b_matrix(true).map_err(SolveError::from)?;
            line_search(
                &b_square, &y_prev, lambda, f_prev, &dy, dlambda, beta0, sigma, cfg,
            )
        };
        let ls = match ls {
            Ok(ls) => ls,
            Err(StagnationError { gamma }) => {
                let best_out = make_best(&state, best.as_ref(), lambda, k - 1, &trace);
                return Err(SolveError::Stagnation {
                    gamma,
                    best: Box::new(best_out),
                });
            }
        };

        y = ls.y;
        lambda = ls.lambda;
        let f_monitor = ls.f_monitor;
        let residual = if fixed {
            projected_f_norms(&b_newton, &y, lambda, beta0, sigma).1
        } else {
            let b_square = state.b_matrix(true).map_err(SolveError::from)?;
            projected_f_norms(&b_square, &pad_one(&y), lambda, beta0, sigma).1
        };

        trace.push(IterationRecord {
            iter: k,
            f_norm: f_monitor,
            residual,
            lambda,
            gamma: ls.gamma,
            backtracks: ls.backtracks,
            mv_total: op.stats().total(),
            inner_iters: None,
        });

        let iterate = NewtonIterate {
            y: y.clone(),
            lambda,
            gamma: ls.gamma,
            k,
            f_norm: f_monitor,
        };
        callback(&PnStep {
            k,
            lambda_prev,
            y_prev: &y_prev,
            f_prev,
            residual_prev,
            dy: &dy,
            dlambda,
            gamma: ls.gamma,
            backtracks: ls.backtracks,
            iterate: &iterate,
            state: &state,
            beta0,
            sigma,
        });

        if best.as_ref().map_or(true, |(f, ..)| f_monitor < *f) {
            best = Some((f_monitor, state.lift(&y), lambda));
        }

        if f_monitor <= threshold {
            return Ok(SolveOutput {
                x: state.lift(&y),
                lambda,
                iterations: k,
                trace,
            });
        }
    }

    let best_out = make_best(&state, best.as_ref(), lambda, cfg.maxit, &trace);
    Err(SolveError::MaxIterations {
        best: Box::new(best_out),
    })
}

/// In the fixed-subspace phase the relation `A V = U B` is exact with the
/// final block, so the same matrix serves both the Newton system and the
/// convergence monitor.
fn final_block(state: &BidiagState) -> Result<BidiagonalMatrix<'_>, SolveError> {
    // After a mu-completion only the rectangular block exists; after a
    // nu-completion the square block is the exact factor.
    match state.b_matrix(true) {
        Ok(b) => Ok(b),
        Err(_) => state.b_matrix(false).map_err(SolveError::from),
    }
}

fn make_best(
    state: &BidiagState,
    best: Option<&(f64, DVector<f64>, f64)>,
    lambda: f64,
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
            x: DVector::zeros(state.v_vectors()[0].len()),
            lambda,
            iterations,
            trace: trace.clone(),
        },
    }
}

fn map_init_error(
    e: crate::bidiag::BidiagError,
    n: usize,
    lambda0: f64,
    trace: ConvergenceTrace,
) -> SolveError {
    use crate::bidiag::{BidiagError, BreakdownPoint};
    match e {
        BidiagError::DegenerateData => SolveError::DegenerateData("zero right-hand side".into()),
        BidiagError::InitialBreakdown { .. } => SolveError::Breakdown {
            at: BreakdownPoint::Mu { index: 0 },
            partial: Box::new(SolveOutput {
                x: DVector::zeros(n),
                lambda: lambda0,
                iterations: 0,
                trace,
            }),
        },
        BidiagError::Operator(e) => SolveError::Operator(e),
        BidiagError::State(msg) => SolveError::Config(msg),
    }
}

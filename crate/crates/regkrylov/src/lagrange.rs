//! Full-space Newton (Lagrange) reference solver.
//!
//! Works directly on the `(n+1)`-dimensional optimality system
//! `F(x, lambda) = 0` of the noise-constrained Tikhonov problem: each outer
//! iteration solves the Newton system with MINRES to a fixed relative
//! tolerance (the Jacobian is symmetric but indefinite) and backtracks on
//! the merit function
//!
//! ```text
//! m(x, lambda) = 0.5 ||lambda A^T (A x - b) + x||^2
//!              + (w/2) (0.5 ||A x - b||^2 - 0.5 sigma^2)^2
//! ```
//!
//! which coincides with `0.5 ||F||^2` for `w = 1`. Every Jacobian
//! application inside MINRES costs one product with `A` and one with `A^T`
//! (the gradient of the constraint is cached per outer iteration), and so
//! does every merit evaluation at a trial point, which is what makes this
//! method markedly more expensive than the Krylov-projected solvers.

use nalgebra::DVector;

use crate::minres::{minres, MinresConfig};
use crate::operators::{LinearOperator, OperatorError};
use crate::solver::{ConvergenceTrace, IterationRecord, SolveError, SolveOutput, SolverConfig};

/// Configuration: the shared solver knobs plus the MINRES inner tolerance
/// and the merit weight `w`.
#[derive(Debug, Clone)]
pub struct LagrangeConfig {
    pub base: SolverConfig,
    pub minres: MinresConfig,
    /// Weight of the constraint term in the merit function. With `w = 1`
    /// the merit is exactly `0.5 ||F||^2`, which keeps traces comparable
    /// across solvers.
    pub w: f64,
}

impl LagrangeConfig {
    pub fn new(sigma: f64) -> Self {
        Self {
            base: SolverConfig::new(sigma),
            minres: MinresConfig::default(),
            w: 1.0,
        }
    }
}

/// Full-space iterate.
#[derive(Debug, Clone)]
pub struct FullSpaceIterate {
    pub x: DVector<f64>,
    pub lambda: f64,
    pub merit_weight: f64,
}

/// Evaluates `F(x, lambda) = (lambda A^T (A x - b) + x ; 0.5||Ax-b||^2 -
/// 0.5 sigma^2)`. Costs one forward and one transpose product.
pub fn eval_f(
    op: &LinearOperator,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: f64,
    sigma: f64,
) -> Result<DVector<f64>, OperatorError> {
    let r = op.apply(x)? - b;
    let g = op.apply_transpose(&r)?;
    Ok(assemble_f(x, &g, r.norm(), lambda, sigma))
}

fn assemble_f(x: &DVector<f64>, g: &DVector<f64>, r_norm: f64, lambda: f64, sigma: f64) -> DVector<f64> {
    let mut f = g * lambda + x;
    f.extend([0.5 * r_norm * r_norm - 0.5 * sigma * sigma]);
    f
}

/// Matrix-free application of the symmetric KKT Jacobian
/// `[[lambda A^T A + I, g], [g^T, 0]]` with `g = A^T (A x - b)` cached for
/// the current outer iterate. Each call costs two operator products.
pub struct KktOperator<'a> {
    pub op: &'a LinearOperator,
    pub lambda: f64,
    /// Cached constraint gradient `A^T (A x - b)`.
    pub grad: &'a DVector<f64>,
}

impl KktOperator<'_> {
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
        let n = self.op.cols();
        assert_eq!(v.len(), n + 1);
        let vx = v.rows(0, n).clone_owned();
        let vl = v[n];
        let avx = self.op.apply(&vx)?;
        let atavx = self.op.apply_transpose(&avx)?;
        let mut out = atavx * self.lambda + &vx + self.grad * vl;
        out.extend([self.grad.dot(&vx)]);
        Ok(out)
    }
}

/// Merit value `0.5||lambda A^T(Ax-b) + x||^2 + (w/2) zeta^2` with
/// `zeta = 0.5||Ax-b||^2 - 0.5 sigma^2`. Two operator products.
pub fn merit_m(
    op: &LinearOperator,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: f64,
    sigma: f64,
    w: f64,
) -> Result<f64, OperatorError> {
    let r = op.apply(x)? - b;
    let g = op.apply_transpose(&r)?;
    Ok(merit_from_parts(x, &g, r.norm(), lambda, sigma, w).0)
}

/// `(merit, ||G||, zeta)` from cached residual pieces; no operator products.
fn merit_from_parts(
    x: &DVector<f64>,
    g: &DVector<f64>,
    r_norm: f64,
    lambda: f64,
    sigma: f64,
    w: f64,
) -> (f64, f64, f64) {
    let grad_norm = (g * lambda + x).norm();
    let zeta = 0.5 * r_norm * r_norm - 0.5 * sigma * sigma;
    (
        0.5 * grad_norm * grad_norm + 0.5 * w * zeta * zeta,
        grad_norm,
        zeta,
    )
}

/// Runs the full-space Lagrange method.
pub fn solve(
    op: &LinearOperator,
    b: &DVector<f64>,
    cfg: &LagrangeConfig,
) -> Result<SolveOutput, SolveError> {
    cfg.base.validate()?;
    if cfg.w <= 0.0 {
        return Err(SolveError::Config("merit weight w must be positive".into()));
    }
    let sigma = cfg.base.sigma;
    let beta0 = b.norm();
    if beta0 <= sigma {
        return Err(SolveError::NoiseDominated {
            b_norm: beta0,
            sigma,
        });
    }
    let n = op.cols();
    let w = cfg.w;

    let mut trace = ConvergenceTrace::new("lagrange");
    let mut x = DVector::zeros(n);
    let mut lambda = cfg.base.lambda0;
    // at x = 0 the residual is -b without any product
    let mut r_norm = beta0;
    let mut g = op.apply_transpose(&(-b))?;
    let atb_norm = g.norm(); // ||A^T b||, reference scale for the gradient safeguard
    if atb_norm == 0.0 {
        return Err(SolveError::DegenerateData(
            "data orthogonal to the operator range".into(),
        ));
    }

    let mut threshold = cfg.base.tol;
    let mut best: Option<(f64, DVector<f64>, f64)> = None;

    for k in 1..=cfg.base.maxit {
        let f = assemble_f(&x, &g, r_norm, lambda, sigma);
        let f_norm = f.norm();
        if k == 1 && cfg.base.relative_tol {
            threshold = cfg.base.tol * f_norm;
        }
        if best.as_ref().map_or(true, |(fb, ..)| f_norm < *fb) {
            best = Some((f_norm, x.clone(), lambda));
        }
        if f_norm <= threshold {
            return Ok(SolveOutput {
                x,
                lambda,
                iterations: k - 1,
                trace,
            });
        }

        // inexact Newton direction
        let kkt = KktOperator {
            op,
            lambda,
            grad: &g,
        };
        let mut minres_failed = None;
        let outcome = minres(
            |v| match kkt.apply(v) {
                Ok(out) => out,
                Err(e) => {
                    minres_failed = Some(e);
                    DVector::zeros(v.len())
                }
            },
            &(-&f),
            &cfg.minres,
        )
        .map_err(|e| SolveError::Config(e.to_string()))?;
        if let Some(e) = minres_failed {
            return Err(SolveError::Operator(e));
        }
        let delta = outcome.solution;
        let dx = delta.rows(0, n).clone_owned();
        let dlambda = delta[n];

        // directional derivative of the merit along an (inexact) Newton
        // step: grad m = J (G; w zeta), so grad m . delta ~= -(||G||^2 +
        // w zeta^2) up to the MINRES residual
        let (m_cur, grad_norm, zeta) = merit_from_parts(&x, &g, r_norm, lambda, sigma, w);
        let descent = grad_norm * grad_norm + w * zeta * zeta;

        // safeguarded backtracking on the merit
        let mut gamma = if lambda + dlambda > 0.0 {
            1.0
        } else {
            -cfg.base.tau * lambda / dlambda
        };
        let mut backtracks = 0u32;
        let accepted = loop {
            let x_t = &x + &dx * gamma;
            let lambda_t = lambda + gamma * dlambda;
            let r_t = op.apply(&x_t)? - b;
            let g_t = op.apply_transpose(&r_t)?;
            let r_t_norm = r_t.norm();
            let degenerate_gradient = g_t.norm() < f64::EPSILON.sqrt() * atb_norm;
            let (m_t, ..) = merit_from_parts(&x_t, &g_t, r_t_norm, lambda_t, sigma, w);
            if !degenerate_gradient && m_t <= m_cur - cfg.base.c * gamma * descent {
                break Some((x_t, lambda_t, r_t_norm, g_t, m_t));
            }
            gamma *= cfg.base.tau;
            backtracks += 1;
            if gamma < cfg.base.gamma_min {
                break None;
            }
        };
        let Some((x_t, lambda_t, r_t_norm, g_t, _)) = accepted else {
            let best_out = output_from_best(best.as_ref(), &x, lambda, k - 1, &trace);
            return Err(SolveError::Stagnation {
                gamma: cfg.base.gamma_min,
                best: Box::new(best_out),
            });
        };
        x = x_t;
        lambda = lambda_t;
        r_norm = r_t_norm;
        g = g_t;

        let f_new = assemble_f(&x, &g, r_norm, lambda, sigma).norm();
        trace.push(IterationRecord {
            iter: k,
            f_norm: f_new,
            residual: r_norm,
            lambda,
            gamma,
            backtracks,
            mv_total: op.stats().total(),
            inner_iters: Some(outcome.iterations as u32),
        });
        if best.as_ref().map_or(true, |(fb, ..)| f_new < *fb) {
            best = Some((f_new, x.clone(), lambda));
        }
        if f_new <= threshold {
            return Ok(SolveOutput {
                x,
                lambda,
                iterations: k,
                trace,
            });
        }
    }

    let best_out = output_from_best(best.as_ref(), &x, lambda, cfg.base.maxit, &trace);
    Err(SolveError::MaxIterations {
        best: Box::new(best_out),
    })
}

fn output_from_best(
    best: Option<&(f64, DVector<f64>, f64)>,
    x: &DVector<f64>,
    lambda: f64,
    iterations: usize,
    trace: &ConvergenceTrace,
) -> SolveOutput {
    match best {
        Some((_, xb, lb)) => SolveOutput {
            x: xb.clone(),
            lambda: *lb,
            iterations,
            trace: trace.clone(),
        },
        None => SolveOutput {
            x: x.clone(),
            lambda,
            iterations,
            trace: trace.clone(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn random_problem(m: usize, n: usize, seed: u64) -> (LinearOperator, DVector<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        (LinearOperator::from_dense(a), b)
    }

    #[test]
    fn f_at_origin_has_zero_constraint_when_sigma_is_data_norm() {
        let (op, b) = random_problem(10, 6, 1);
        let f = eval_f(&op, &b, &DVector::zeros(6), 2.0, b.norm()).unwrap();
        assert_eq!(f[6], 0.0);
        // first block is -lambda A^T b
        let atb = op.apply_transpose_unrecorded(&b);
        assert!((f.rows(0, 6) + &atb * 2.0).norm() < 1e-14);
    }

    #[test]
    fn f_identity_operator_closed_form() {
        let op = LinearOperator::identity(3);
        let b = DVector::zeros(3);
        let x = DVector::from_row_slice(&[1.0, 2.0, -1.0]);
        let sigma = 1.0;
        let lambda = 3.0;
        let f = eval_f(&op, &b, &x, lambda, sigma).unwrap();
        // F = (lambda x + x ; 0.5||x||^2 - 0.5 sigma^2)
        assert!((f.rows(0, 3) - &x * (lambda + 1.0)).norm() < 1e-14);
        assert!((f[3] - (0.5 * x.norm_squared() - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn full_f_norm_matches_projected_norm_on_lifted_points() {
        use crate::bidiag::BidiagState;
        use crate::projected_newton::eval_projected_f;
        let (op, b) = random_problem(25, 18, 2);
        let mut st = BidiagState::init(&op, &b, true).unwrap();
        for _ in 0..5 {
            st.expand(&op).unwrap();
        }
        let k = 5;
        // a point lifted from the (k-1)-dimensional subspace
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut y_bar = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
        y_bar[k - 1] = 0.0;
        let x = st.lift(&y_bar);
        let lambda = 1.5;
        let sigma = 0.4 * b.norm();
        let f_full = eval_f(&op, &b, &x, lambda, sigma).unwrap();
        let rect = st.b_matrix(false).unwrap();
        let f_proj = eval_projected_f(&rect, &y_bar, lambda, b.norm(), sigma);
        let rel = (f_full.norm() - f_proj.norm()).abs() / f_full.norm();
        assert!(rel <= 1e-10, "norm gap {rel}");
    }

    #[test]
    fn jacobian_column_extraction_and_symmetry() {
        let (op, b) = random_problem(12, 8, 3);
        let x = DVector::from_fn(8, |i, _| 0.1 * i as f64);
        let r = op.apply_unrecorded(&x) - &b;
        let g = op.apply_transpose_unrecorded(&r);
        let kkt = KktOperator {
            op: &op,
            lambda: 2.5,
            grad: &g,
        };
        // last unit vector extracts the gradient column
        let mut e_last = DVector::zeros(9);
        e_last[8] = 1.0;
        let col = kkt.apply(&e_last).unwrap();
        assert!((col.rows(0, 8) - &g).norm() < 1e-14);
        assert_eq!(col[8], 0.0);
        // symmetry on random vectors
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let v = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
            let u = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
            let jv = kkt.apply(&v).unwrap();
            let ju = kkt.apply(&u).unwrap();
            let lhs = jv.dot(&u);
            let rhs = v.dot(&ju);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn jacobian_matches_dense_assembly() {
        let (op, b) = random_problem(10, 8, 7);
        let a = op.densify();
        let x = DVector::from_fn(8, |i, _| (i as f64 - 3.0) / 5.0);
        let lambda = 1.7;
        let r = &a * &x - &b;
        let g = a.tr_mul(&r);
        let kkt = KktOperator {
            op: &op,
            lambda,
            grad: &g,
        };
        let ata = a.tr_mul(&a);
        let mut dense = DMatrix::zeros(9, 9);
        for c in 0..8 {
            for rr in 0..8 {
                dense[(rr, c)] = lambda * ata[(rr, c)];
            }
            dense[(c, c)] += 1.0;
            dense[(8, c)] = g[c];
            dense[(c, 8)] = g[c];
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..3 {
            let v = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
            let gap = (kkt.apply(&v).unwrap() - &dense * &v).norm();
            assert!(gap <= 1e-12);
        }
    }

    #[test]
    fn merit_reduces_to_half_f_norm_squared_at_unit_weight() {
        let (op, b) = random_problem(14, 9, 5);
        let x = DVector::from_fn(9, |i, _| (i as f64).sin());
        let lambda = 0.7;
        let sigma = 0.5 * b.norm();
        let m = merit_m(&op, &b, &x, lambda, sigma, 1.0).unwrap();
        let f = eval_f(&op, &b, &x, lambda, sigma).unwrap();
        assert!((m - 0.5 * f.norm_squared()).abs() <= 1e-12 * m);
    }

    #[test]
    fn merit_at_origin_with_sigma_equal_data_norm() {
        let (op, b) = random_problem(14, 9, 6);
        let lambda = 2.0;
        let m = merit_m(&op, &b, &DVector::zeros(9), lambda, b.norm(), 1.0).unwrap();
        let atb = op.apply_transpose_unrecorded(&b);
        let expected = 0.5 * lambda * lambda * atb.norm_squared();
        assert!((m - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn merit_weight_scales_only_the_constraint_term() {
        let (op, b) = random_problem(14, 9, 8);
        let x = DVector::from_fn(9, |i, _| 0.05 * i as f64);
        let lambda = 1.1;
        let sigma = 0.4 * b.norm();
        let m1 = merit_m(&op, &b, &x, lambda, sigma, 1.0).unwrap();
        let m2 = merit_m(&op, &b, &x, lambda, sigma, 2.0).unwrap();
        let r = op.apply_unrecorded(&x) - &b;
        let zeta = 0.5 * r.norm_squared() - 0.5 * sigma * sigma;
        assert!((m2 - m1 - 0.5 * zeta * zeta).abs() <= 1e-12 * m1.max(1.0));
    }

    #[test]
    fn solve_small_diagonal_meets_discrepancy() {
        let op = LinearOperator::from_diagonal(&[2.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0]);
        let mut cfg = LagrangeConfig::new(0.5);
        cfg.base.tol = 1e-9;
        cfg.base.lambda0 = 1.0;
        let out = solve(&op, &b, &cfg).unwrap();
        let a = op.densify();
        let r = &a * &out.x - &b;
        assert!((r.norm() - 0.5).abs() < 1e-7, "residual {}", r.norm());
        let stat = (a.tr_mul(&r) * out.lambda + &out.x).norm();
        assert!(stat < 1e-7, "stationarity {stat}");
        // trace reports inner iteration counts
        assert!(out.trace.records().iter().all(|r| r.inner_iters.is_some()));
    }

    #[test]
    fn exact_newton_step_is_descent_direction() {
        // with a tight inner tolerance the computed step satisfies
        // grad f . delta = -||F||^2 up to the inner solver residual
        let (op, b) = random_problem(12, 8, 19);
        let a = op.densify();
        let sigma = 0.4 * b.norm();
        let x = DVector::zeros(8);
        let lambda = 2.0;
        let r = &a * &x - &b;
        let g = a.tr_mul(&r);
        let f = eval_f(&op, &b, &x, lambda, sigma).unwrap();
        let kkt = KktOperator {
            op: &op,
            lambda,
            grad: &g,
        };
        let cfg = MinresConfig {
            rel_tol: 1e-12,
            max_inner: 500,
        };
        let delta = minres(|v| kkt.apply(v).unwrap(), &(-&f), &cfg)
            .unwrap()
            .solution;
        // dense gradient of 0.5||F||^2
        let ata = a.tr_mul(&a);
        let mut jd = DMatrix::zeros(9, 9);
        for c in 0..8 {
            for rr in 0..8 {
                jd[(rr, c)] = lambda * ata[(rr, c)];
            }
            jd[(c, c)] += 1.0;
            jd[(8, c)] = g[c];
            jd[(c, 8)] = g[c];
        }
        let grad = &jd * &f;
        let dir = grad.dot(&delta);
        let expected = -f.norm_squared();
        assert!(
            (dir - expected).abs() <= 1e-6 * expected.abs(),
            "{dir} vs {expected}"
        );
    }
}

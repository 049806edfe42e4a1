//! Shared solver configuration, convergence traces and outcome types.

use nalgebra::DVector;

use crate::bidiag::BreakdownPoint;
use crate::operators::OperatorError;

/// Parameters common to all three solvers.
///
/// `sigma` is the residual target of the discrepancy principle,
/// `sigma = eta * epsilon` with `epsilon` the noise size. The remaining
/// fields control the Newton/line-search machinery; the defaults follow the
/// usual choices (`tau = 0.9`, `c = 1e-4`, up to 500 iterations).
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Initial value of the Lagrange multiplier `lambda = 1/alpha`. A large
    /// initial value keeps early Newton iterates away from the flat part of
    /// the discrepancy curve, where the Jacobian is nearly singular.
    pub lambda0: f64,
    /// Residual target of the discrepancy principle.
    pub sigma: f64,
    /// Safety factor that was applied to the noise size (kept for
    /// reporting; `sigma` already includes it).
    pub eta: f64,
    /// Stopping tolerance on the optimality residual norm `||F||`.
    pub tol: f64,
    /// Interpret `tol` relative to `||F||` at the starting point.
    pub relative_tol: bool,
    /// Iteration cap.
    pub maxit: usize,
    /// Backtracking shrink factor.
    pub tau: f64,
    /// Armijo sufficient-decrease constant.
    pub c: f64,
    /// Step lengths below this abort the line search as stagnation.
    pub gamma_min: f64,
    /// Reorthogonalize the bidiagonalization bases every iteration.
    pub reorth: bool,
}

impl SolverConfig {
    pub fn new(sigma: f64) -> Self {
        Self {
            lambda0: 1e5,
            sigma,
            eta: 1.0,
            tol: 1e-3,
            relative_tol: false,
            maxit: 500,
            tau: 0.9,
            c: 1e-4,
            gamma_min: 1e-12,
            reorth: true,
        }
    }

    pub fn with_lambda0(mut self, lambda0: f64) -> Self {
        self.lambda0 = lambda0;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_maxit(mut self, maxit: usize) -> Self {
        self.maxit = maxit;
        self
    }

    pub fn with_reorth(mut self, reorth: bool) -> Self {
        self.reorth = reorth;
        self
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let ok = self.sigma > 0.0
            && self.lambda0 > 0.0
            && self.tol > 0.0
            && self.maxit > 0
            && 0.0 < self.tau
            && self.tau < 1.0
            && 0.0 < self.c
            && self.c < 1.0
            && self.gamma_min > 0.0
            && self.eta >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(SolveError::Config(format!("invalid solver config: {self:?}")))
        }
    }
}

/// One accepted iterate of any solver.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Optimality residual norm `||F(x_k, lambda_k)||` (evaluated in the
    /// projected space for the Krylov solvers).
    pub f_norm: f64,
    /// Data residual norm `||A x_k - b||`.
    pub residual: f64,
    pub lambda: f64,
    /// Accepted step length (1.0 for GBiT, which takes no line-search steps).
    pub gamma: f64,
    /// Number of backtracking reductions before acceptance.
    pub backtracks: u32,
    /// Cumulative matrix-vector products (with `A` or `A^T`) so far.
    pub mv_total: u64,
    /// Inner Krylov iterations spent on this step (Lagrange only).
    pub inner_iters: Option<u32>,
}

/// Append-only record of a solve.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceTrace {
    pub solver: String,
    records: Vec<IterationRecord>,
    warnings: Vec<(usize, String)>,
}

impl ConvergenceTrace {
    pub fn new(solver: &str) -> Self {
        Self {
            solver: solver.to_string(),
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn push(&mut self, record: IterationRecord) {
        self.records.push(record);
    }

    pub fn warn(&mut self, iter: usize, message: impl Into<String>) {
        self.warnings.push((iter, message.into()));
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn warnings(&self) -> &[(usize, String)] {
        &self.warnings
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn mv_total(&self) -> u64 {
        self.records.last().map_or(0, |r| r.mv_total)
    }

    /// CSV serialization. The column set is identical for all solvers except
    /// that traces with inner iteration counts gain a trailing column.
    pub fn to_csv(&self) -> String {
        let has_inner = self.records.iter().any(|r| r.inner_iters.is_some());
        let mut out = String::from("iter,f_norm,residual,lambda,gamma,backtracks,mv_total");
        if has_inner {
            out.push_str(",inner_iters");
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                r.iter, r.f_norm, r.residual, r.lambda, r.gamma, r.backtracks, r.mv_total
            ));
            if has_inner {
                out.push_str(&format!(",{}", r.inner_iters.unwrap_or(0)));
            }
            out.push('\n');
        }
        out
    }
}

/// A solver result: the reconstruction, the multiplier `lambda = 1/alpha`
/// satisfying the discrepancy principle, and the per-iteration trace.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: DVector<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub trace: ConvergenceTrace,
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    /// `||b|| <= sigma`: the zero vector already satisfies the discrepancy
    /// constraint, so there is nothing to solve. Carries `x = 0`.
    #[error("data norm {b_norm} does not exceed the residual target {sigma}")]
    NoiseDominated { b_norm: f64, sigma: f64 },
    /// The bidiagonalization produced a numerically zero coefficient before
    /// the solver converged; the attached partial result is the exact
    /// least-squares solution restricted to the invariant subspace reached.
    #[error("bidiagonalization breakdown at {at:?} before convergence")]
    Breakdown {
        at: BreakdownPoint,
        partial: Box<SolveOutput>,
    },
    #[error("no convergence within the iteration cap")]
    MaxIterations { best: Box<SolveOutput> },
    /// The line search shrank the step below `gamma_min`.
    #[error("line search stagnated at step length {gamma}")]
    Stagnation { gamma: f64, best: Box<SolveOutput> },
    /// The projected Newton system was reported singular by the
    /// factorization; indicates lost invariants (e.g. no reorthogonalization).
    #[error("projected Newton system singular at iteration {iter}")]
    SingularJacobian { iter: usize, best: Box<SolveOutput> },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("{0}")]
    Config(String),
}

impl From<crate::bidiag::BidiagError> for SolveError {
    fn from(e: crate::bidiag::BidiagError) -> Self {
        use crate::bidiag::BidiagError;
        match e {
            BidiagError::Operator(e) => SolveError::Operator(e),
            BidiagError::DegenerateData => {
                SolveError::DegenerateData("zero right-hand side".into())
            }
            BidiagError::InitialBreakdown { mu0 } => SolveError::DegenerateData(format!(
                "data orthogonal to the operator range (mu0 = {mu0})"
            )),
            BidiagError::State(msg) => SolveError::Config(msg),
        }
    }
}

impl SolveError {
    /// The best iterate attached to the error, when one exists.
    pub fn partial_output(&self) -> Option<&SolveOutput> {
        match self {
            SolveError::Breakdown { partial, .. } => Some(partial),
            SolveError::MaxIterations { best } => Some(best),
            SolveError::Stagnation { best, .. } => Some(best),
            SolveError::SingularJacobian { best, .. } => Some(best),
            _ => None,
        }
    }
}

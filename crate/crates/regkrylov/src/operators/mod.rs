//! Matrix-free linear operators.
//!
//! Every solver in this crate only ever touches the system matrix through
//! matrix-vector products with `A` and `A^T`. The [`LinearOperator`] wrapper
//! provides that interface uniformly over several concrete backends (dense,
//! CSR, image blur stencil, tomographic ray projector, scalar rescaling) and
//! counts every product so that the cost of a solve can be reported exactly.

mod blur;
mod dense;
mod matrix_market;
mod projector;
mod sparse;

pub use blur::StencilOp;
pub use dense::DenseOp;
pub use matrix_market::{load_matrix_market, write_matrix_market_csr, write_matrix_market_dense};
pub use projector::RayProjectorOp;
pub use sparse::CsrOp;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

/// Errors produced by operator construction and application.
#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error("dimension mismatch: expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite entry at index {index} of input vector")]
    Numeric { index: usize },
    #[error("matrix market format error (line {line}): {message}")]
    Format { line: usize, message: String },
    #[error("unsupported matrix market content: {0}")]
    Unsupported(String),
    #[error("operator is numerically zero; cannot rescale")]
    DegenerateOperator,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A concrete backend: how to multiply by `A` and `A^T`.
///
/// Implementations must be consistent as a pair, i.e. `<A v, u> = <v, A^T u>`
/// up to roundoff. Dimension checking and statistics are handled by the
/// [`LinearOperator`] wrapper, so kernels can assume correctly sized input.
pub trait OpKernel: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn matvec(&self, v: &DVector<f64>) -> DVector<f64>;
    fn rmatvec(&self, u: &DVector<f64>) -> DVector<f64>;
}

/// Matrix-vector product counters.
///
/// The counters are the single source of truth for reported MV totals, so
/// they are bumped on exactly the operator applications a solver issues and
/// nothing else (problem generation and diagnostics use the uncounted path).
#[derive(Debug, Default)]
pub struct OpStats {
    matvec: AtomicU64,
    rmatvec: AtomicU64,
}

impl OpStats {
    pub fn matvec_count(&self) -> u64 {
        self.matvec.load(Ordering::Relaxed)
    }

    pub fn rmatvec_count(&self) -> u64 {
        self.rmatvec.load(Ordering::Relaxed)
    }

    /// Total cost in matrix-vector products with either `A` or `A^T`.
    pub fn total(&self) -> u64 {
        self.matvec_count() + self.rmatvec_count()
    }

    fn reset(&self) {
        self.matvec.store(0, Ordering::Relaxed);
        self.rmatvec.store(0, Ordering::Relaxed);
    }
}

/// An `m x n` real linear operator with forward and transpose application.
pub struct LinearOperator {
    kernel: Arc<dyn OpKernel>,
    stats: OpStats,
}

impl LinearOperator {
    pub fn new(kernel: Arc<dyn OpKernel>) -> Self {
        Self {
            kernel,
            stats: OpStats::default(),
        }
    }

    pub fn from_dense(a: DMatrix<f64>) -> Self {
        Self::new(Arc::new(DenseOp::new(a)))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self::from_dense(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_dense(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.kernel.rows()
    }

    pub fn cols(&self) -> usize {
        self.kernel.cols()
    }

    pub fn stats(&self) -> &OpStats {
        &self.stats
    }

    pub fn reset_stats(&self) {
        self.stats.reset();
    }

    /// Same kernel, fresh counters. Used to run several solvers on one
    /// problem instance with independent MV accounting.
    pub fn fork(&self) -> Self {
        Self {
            kernel: Arc::clone(&self.kernel),
            stats: OpStats::default(),
        }
    }

    fn check(v: &DVector<f64>, expected: usize) -> Result<(), OperatorError> {
        if v.len() != expected {
            return Err(OperatorError::Dimension {
                expected,
                got: v.len(),
            });
        }
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(OperatorError::Numeric { index });
        }
        Ok(())
    }

    /// Computes `A v` and bumps the matvec counter.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
        Self::check(v, self.cols())?;
        self.stats.matvec.fetch_add(1, Ordering::Relaxed);
        Ok(self.kernel.matvec(v))
    }

    /// Computes `A^T u` and bumps the rmatvec counter.
    pub fn apply_transpose(&self, u: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
        Self::check(u, self.rows())?;
        self.stats.rmatvec.fetch_add(1, Ordering::Relaxed);
        Ok(self.kernel.rmatvec(u))
    }

    /// `A v` without touching the counters. For problem generation,
    /// diagnostics and oracles, which must not pollute MV accounting.
    pub fn apply_unrecorded(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.cols(), "apply_unrecorded: wrong length");
        self.kernel.matvec(v)
    }

    /// `A^T u` without touching the counters.
    pub fn apply_transpose_unrecorded(&self, u: &DVector<f64>) -> DVector<f64> {
        assert_eq!(
            u.len(),
            self.rows(),
            "apply_transpose_unrecorded: wrong length"
        );
        self.kernel.rmatvec(u)
    }

    /// Assembles the operator as a dense matrix, one unit vector at a time.
    /// Meant for small problems (oracles, file export); does not count.
    pub fn densify(&self) -> DMatrix<f64> {
        let (m, n) = (self.rows(), self.cols());
        let mut out = DMatrix::zeros(m, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            out.set_column(j, &self.kernel.matvec(&e));
            e[j] = 0.0;
        }
        out
    }

    /// Estimates the spectral norm with `iters` power iterations on `A^T A`
    /// started from a seeded random vector. Uncounted.
    pub fn estimate_norm(&self, iters: usize, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = self.cols();
        let mut w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut norm_est = 0.0;
        for _ in 0..iters {
            let wn = w.norm();
            if wn == 0.0 {
                return 0.0;
            }
            w /= wn;
            let aw = self.kernel.matvec(&w);
            norm_est = aw.norm();
            if norm_est == 0.0 {
                return 0.0;
            }
            w = self.kernel.rmatvec(&aw);
        }
        norm_est
    }

    /// Wraps the operator as `A / s` with `s` the estimated spectral norm,
    /// so that the scaled operator has norm close to one.
    ///
    /// Returns the scaled operator and the scale estimate `s`.
    pub fn scaled_to_unit_norm(&self) -> Result<(LinearOperator, f64), OperatorError> {
        let s = self.estimate_norm(POWER_ITERS, POWER_SEED);
        if !(s.is_finite() && s > 0.0) {
            return Err(OperatorError::DegenerateOperator);
        }
        let kernel = Arc::new(ScaledOp {
            inner: Arc::clone(&self.kernel),
            inv_scale: 1.0 / s,
        });
        Ok((LinearOperator::new(kernel), s))
    }
}

const POWER_ITERS: usize = 30;
const POWER_SEED: u64 = 0x5EED;

/// `A / s` wrapper produced by [`LinearOperator::scaled_to_unit_norm`].
struct ScaledOp {
    inner: Arc<dyn OpKernel>,
    inv_scale: f64,
}

impl OpKernel for ScaledOp {
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn matvec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.inner.matvec(v) * self.inv_scale
    }

    fn rmatvec(&self, u: &DVector<f64>) -> DVector<f64> {
        self.inner.rmatvec(u) * self.inv_scale
    }
}

//! Incremental Golub-Kahan bidiagonalization (the Bidiag1 recurrence of
//! Paige and Saunders, the factorization underlying LSQR).
//!
//! Starting from `u_0 = b/||b||`, the recurrence builds orthonormal bases
//! `U_{k+1} = [u_0..u_k]` of the Krylov space of `A A^T` and
//! `V_{k+1} = [v_0..v_k]` of the Krylov space of `A^T A`, together with a
//! lower bidiagonal matrix `B` (diagonal `mu`, subdiagonal `nu`) satisfying
//!
//! ```text
//! A   V_k     = U_{k+1} B_{k+1,k}
//! A^T U_{k+1} = V_k B_{k+1,k}^T + mu_k v_k e_{k+1}^T
//! ```
//!
//! Each expansion costs exactly one product with `A` and one with `A^T`.
//! Optional full reorthogonalization (modified Gram-Schmidt, with a second
//! pass when the norm collapses by more than `1/sqrt(2)`) keeps the bases
//! orthonormal to machine precision.

use nalgebra::{DMatrix, DVector};

use crate::operators::{LinearOperator, OperatorError};

/// Which coefficient vanished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakdownPoint {
    /// `nu_k` below tolerance: `b` lies in an invariant subspace of `A A^T`.
    Nu { index: usize },
    /// `mu_k` below tolerance: the search space of `A^T A` is exhausted.
    Mu { index: usize },
}

/// Result of one expansion step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpandStatus {
    Expanded,
    /// A coefficient vanished because the basis already spans the full
    /// space; the factorization is complete and exact.
    SubspaceComplete(BreakdownPoint),
    /// A coefficient vanished early: the Krylov space became invariant
    /// before exhausting the problem dimensions. The exact least-squares
    /// solution lies in the current subspace.
    Breakdown(BreakdownPoint),
}

#[derive(Debug, thiserror::Error)]
pub enum BidiagError {
    #[error("cannot bidiagonalize from a zero vector")]
    DegenerateData,
    #[error("initial coefficient mu_0 = {mu0} below breakdown tolerance (b is orthogonal to the range of A)")]
    InitialBreakdown { mu0: f64 },
    #[error("invalid state: {0}")]
    State(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Active,
    Complete(BreakdownPoint),
    Broken(BreakdownPoint),
}

/// Incrementally grown bidiagonalization state.
#[derive(Debug)]
pub struct BidiagState {
    u: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    /// Diagonal entries `mu_0..`; always one per stored `v`.
    mu: Vec<f64>,
    /// Subdiagonal entries `nu_1..`; always one fewer than stored `u`.
    nu: Vec<f64>,
    reorth: bool,
    coeff_max: f64,
    phase: Phase,
    reorth_dots: u64,
    reorth_second_passes: u64,
}

impl BidiagState {
    /// Runs the initialization step: `u_0 = b/||b||`, `r_0 = A^T u_0`,
    /// `mu_0 = ||r_0||`, `v_0 = r_0/mu_0`. Consumes one transpose product.
    pub fn init(op: &LinearOperator, b: &DVector<f64>, reorth: bool) -> Result<Self, BidiagError> {
        let beta = b.norm();
        if beta == 0.0 {
            return Err(BidiagError::DegenerateData);
        }
        let u0 = b / beta;
        let r0 = op.apply_transpose(&u0)?;
        let mu0 = r0.norm();
        let tol = f64::EPSILON.sqrt() * mu0.max(1.0);
        if mu0 <= tol {
            return Err(BidiagError::InitialBreakdown { mu0 });
        }
        let v0 = r0 / mu0;
        Ok(Self {
            u: vec![u0],
            v: vec![v0],
            mu: vec![mu0],
            nu: Vec::new(),
            reorth,
            coeff_max: mu0,
            phase: Phase::Active,
            reorth_dots: 0,
            reorth_second_passes: 0,
        })
    }

    /// Completed expansion count `k`; the state then holds `k+1` basis
    /// vectors on each side (fewer after a breakdown).
    pub fn k(&self) -> usize {
        self.nu.len().min(self.mu.len().saturating_sub(1))
    }

    pub fn reorth(&self) -> bool {
        self.reorth
    }

    pub fn breakdown(&self) -> Option<BreakdownPoint> {
        match self.phase {
            Phase::Broken(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.phase, Phase::Complete(_))
    }

    pub fn is_active(&self) -> bool {
        matches!(self.phase, Phase::Active)
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn u_vectors(&self) -> &[DVector<f64>] {
        &self.u
    }

    pub fn v_vectors(&self) -> &[DVector<f64>] {
        &self.v
    }

    /// Inner products spent on reorthogonalization so far (one AXPY pairs
    /// with each inner product).
    pub fn reorth_dots(&self) -> u64 {
        self.reorth_dots
    }

    pub fn reorth_second_passes(&self) -> u64 {
        self.reorth_second_passes
    }

    fn breakdown_tol(&self) -> f64 {
        f64::EPSILON.sqrt() * self.coeff_max.max(1.0)
    }

    fn mgs(
        w: &mut DVector<f64>,
        basis: &[DVector<f64>],
        dots: &mut u64,
        second_passes: &mut u64,
    ) {
        let before = w.norm();
        for q in basis {
            let h = q.dot(w);
            *dots += 1;
            w.axpy(-h, q, 1.0);
        }
        // twice is enough: redo the sweep if cancellation ate the norm
        if w.norm() < before * std::f64::consts::FRAC_1_SQRT_2 {
            *second_passes += 1;
            for q in basis {
                let h = q.dot(w);
                *dots += 1;
                w.axpy(-h, q, 1.0);
            }
        }
    }

    /// Grows the factorization by one step: appends `nu_k, u_k` and then
    /// `mu_k, v_k`, consuming one forward and one transpose product.
    ///
    /// A vanishing coefficient is reported through the returned status, not
    /// as an error; the state remains usable up to the breakdown point.
    pub fn expand(&mut self, op: &LinearOperator) -> Result<ExpandStatus, BidiagError> {
        if !self.is_active() {
            return Err(BidiagError::State(
                "expand called after breakdown or completion".into(),
            ));
        }
        let k = self.nu.len() + 1; // index of the new coefficients
        let last_v = &self.v[k - 1];
        let mut p = op.apply(last_v)?;
        p.axpy(-self.mu[k - 1], &self.u[k - 1], 1.0);
        if self.reorth {
            Self::mgs(
                &mut p,
                &self.u,
                &mut self.reorth_dots,
                &mut self.reorth_second_passes,
            );
        }
        let nu_k = p.norm();
        if nu_k <= self.breakdown_tol() {
            let point = BreakdownPoint::Nu { index: k };
            self.phase = if self.u.len() == op.rows() {
                Phase::Complete(point)
            } else {
                Phase::Broken(point)
            };
            return Ok(match self.phase {
                Phase::Complete(p) => ExpandStatus::SubspaceComplete(p),
                _ => ExpandStatus::Breakdown(point),
            });
        }
        self.coeff_max = self.coeff_max.max(nu_k);
        self.u.push(p / nu_k);
        self.nu.push(nu_k);

        let mut r = op.apply_transpose(&self.u[k])?;
        r.axpy(-nu_k, &self.v[k - 1], 1.0);
        if self.reorth {
            Self::mgs(
                &mut r,
                &self.v,
                &mut self.reorth_dots,
                &mut self.reorth_second_passes,
            );
        }
        let mu_k = r.norm();
        if mu_k <= self.breakdown_tol() {
            let point = BreakdownPoint::Mu { index: k };
            self.phase = if self.v.len() == op.cols() {
                Phase::Complete(point)
            } else {
                Phase::Broken(point)
            };
            return Ok(match self.phase {
                Phase::Complete(p) => ExpandStatus::SubspaceComplete(p),
                _ => ExpandStatus::Breakdown(point),
            });
        }
        self.coeff_max = self.coeff_max.max(mu_k);
        self.v.push(r / mu_k);
        self.mu.push(mu_k);
        Ok(ExpandStatus::Expanded)
    }

    /// The bidiagonal block accumulated so far, as cheap views.
    ///
    /// With `square = false` this is the `(k+1) x k` block `B_{k+1,k}`;
    /// with `square = true` the `(k+1) x (k+1)` block `B_{k+1,k+1}`, which
    /// requires the look-ahead diagonal entry `mu_k` (absent after a
    /// breakdown at `mu`).
    pub fn b_matrix(&self, square: bool) -> Result<BidiagonalMatrix<'_>, BidiagError> {
        let rows = self.nu.len() + 1;
        if square {
            if self.mu.len() != self.nu.len() + 1 {
                return Err(BidiagError::State(
                    "square block unavailable: trailing diagonal entry was never computed".into(),
                ));
            }
            Ok(BidiagonalMatrix {
                mu: &self.mu,
                nu: &self.nu,
                rows,
                cols: rows,
            })
        } else {
            Ok(BidiagonalMatrix {
                mu: &self.mu[..self.nu.len()],
                nu: &self.nu,
                rows,
                cols: self.nu.len(),
            })
        }
    }

    /// Lifts projected coordinates into the original space: `x = V_k y`
    /// with `k = y.len()`.
    pub fn lift(&self, y: &DVector<f64>) -> DVector<f64> {
        assert!(y.len() <= self.v.len(), "not enough basis vectors");
        let n = self.v[0].len();
        let mut x = DVector::zeros(n);
        for (i, vi) in self.v.iter().take(y.len()).enumerate() {
            x.axpy(y[i], vi, 1.0);
        }
        x
    }

    /// First `count` columns of `V` as a dense matrix.
    pub fn v_matrix(&self, count: usize) -> DMatrix<f64> {
        let n = self.v[0].len();
        DMatrix::from_fn(n, count, |i, j| self.v[j][i])
    }

    /// First `count` columns of `U` as a dense matrix.
    pub fn u_matrix(&self, count: usize) -> DMatrix<f64> {
        let m = self.u[0].len();
        DMatrix::from_fn(m, count, |i, j| self.u[j][i])
    }

    /// Largest off-diagonal entry of `V^T V` in absolute value.
    pub fn orthogonality_defect_v(&self) -> f64 {
        Self::defect(&self.v)
    }

    /// Largest off-diagonal entry of `U^T U` in absolute value.
    pub fn orthogonality_defect_u(&self) -> f64 {
        Self::defect(&self.u)
    }

    fn defect(basis: &[DVector<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..basis.len() {
            for j in 0..i {
                worst = worst.max(basis[i].dot(&basis[j]).abs());
            }
        }
        worst
    }

    /// Exact least-squares solution `argmin ||A x - b||` over the subspace
    /// reached at breakdown or completion. Only meaningful once the
    /// factorization is exact (status no longer `Active`).
    pub fn exact_ls_solution(&self, beta0: f64) -> Result<DVector<f64>, BidiagError> {
        match self.phase {
            Phase::Active => Err(BidiagError::State(
                "least-squares shortcut only valid after breakdown or completion".into(),
            )),
            Phase::Broken(point) | Phase::Complete(point) => {
                let y = match point {
                    BreakdownPoint::Nu { .. } => {
                        // B is square lower bidiagonal with positive diagonal:
                        // forward substitution on B y = beta0 e1.
                        let k = self.mu.len();
                        let mut y = DVector::zeros(k);
                        y[0] = beta0 / self.mu[0];
                        for i in 1..k {
                            y[i] = -self.nu[i - 1] * y[i - 1] / self.mu[i];
                        }
                        y
                    }
                    BreakdownPoint::Mu { .. } => {
                        // tall block: small dense least squares via QR
                        let b = self.b_matrix(false)?;
                        let dense = b.to_dense();
                        let mut c = DVector::zeros(b.rows);
                        c[0] = beta0;
                        let qr = dense.qr();
                        let qt_c = qr.q().transpose() * c;
                        qr.r()
                            .solve_upper_triangular(&qt_c)
                            .ok_or_else(|| BidiagError::State("rank-deficient block".into()))?
                    }
                };
                Ok(self.lift(&y))
            }
        }
    }
}

/// Borrowed view of a lower bidiagonal block.
#[derive(Debug, Clone, Copy)]
pub struct BidiagonalMatrix<'a> {
    mu: &'a [f64],
    nu: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

impl<'a> BidiagonalMatrix<'a> {
    pub fn from_parts(mu: &'a [f64], nu: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(mu.len() >= cols.min(rows));
        assert!(nu.len() + 1 >= rows);
        Self { mu, nu, rows, cols }
    }

    /// `B y`, O(rows).
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.cols);
        let mut t = DVector::zeros(self.rows);
        for i in 0..self.rows {
            let mut acc = 0.0;
            if i < self.cols {
                acc += self.mu[i] * y[i];
            }
            if i >= 1 && i - 1 < self.cols {
                acc += self.nu[i - 1] * y[i - 1];
            }
            t[i] = acc;
        }
        t
    }

    /// `B^T t`, O(rows).
    pub fn apply_transpose(&self, t: &DVector<f64>) -> DVector<f64> {
        assert_eq!(t.len(), self.rows);
        let mut s = DVector::zeros(self.cols);
        for j in 0..self.cols {
            let mut acc = self.mu[j] * t[j];
            if j + 1 < self.rows {
                acc += self.nu[j] * t[j + 1];
            }
            s[j] = acc;
        }
        s
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.cols.min(self.rows) {
            b[(i, i)] = self.mu[i];
        }
        for i in 0..self.nu.len().min(self.rows - 1).min(self.cols) {
            b[(i + 1, i)] = self.nu[i];
        }
        b
    }
}

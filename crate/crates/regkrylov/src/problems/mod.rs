//! Test problem generation and verification oracles.
//!
//! Deblurring and tomography instances are generated procedurally (smooth
//! test image, ellipse phantom) so the test suite carries no binary assets;
//! noise is scaled to an exact requested fraction of the data norm so that
//! the discrepancy target `sigma = eta * epsilon` is known exactly rather
//! than estimated.

mod bundle;
mod general_form;
mod oracle;
mod phantom;

pub use bundle::{load_bundle, save_bundle, BundleError};
pub use general_form::{
    from_standard_form, to_standard_form, GeneralFormProblem, Regularizer,
};
pub use oracle::{dense_tikhonov_solve, discrepancy_residual, oracle_solve, OracleError};
pub use phantom::{gaussian_psf, motion_psf, peaks_image, shepp_logan};

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::operators::{
    load_matrix_market, LinearOperator, OperatorError, RayProjectorOp, StencilOp,
};

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular regularization matrix")]
    SingularRegularizer,
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// An inverse problem instance: operator, noisy data, and the exact data
/// the noise was added to (kept for error reporting).
pub struct InverseProblem {
    pub op: LinearOperator,
    pub b: DVector<f64>,
    pub b_exact: Option<DVector<f64>>,
    pub x_exact: Option<DVector<f64>>,
    /// Noise size `||b - b_exact||`, exact by construction.
    pub epsilon: f64,
    /// Discrepancy safety factor.
    pub eta: f64,
    pub seed: u64,
}

impl InverseProblem {
    /// Residual target of the discrepancy principle, `eta * epsilon`.
    pub fn sigma(&self) -> f64 {
        self.eta * self.epsilon
    }
}

/// Point spread function shape for blur problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PsfSpec {
    Gaussian { std: f64 },
    Motion { len: f64, angle_deg: f64 },
}

/// Serializable description of a generated problem; rebuilding from the
/// spec reproduces the instance bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Blur {
        size: usize,
        psf: PsfSpec,
        noise: f64,
        seed: u64,
        eta: f64,
    },
    Tomo {
        size: usize,
        angles: usize,
        noise: f64,
        seed: u64,
        eta: f64,
    },
    Matrix {
        path: String,
        noise: f64,
        seed: u64,
        eta: f64,
        scale: bool,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<InverseProblem, ProblemError> {
        match self {
            ProblemSpec::Blur {
                size,
                psf,
                noise,
                seed,
                eta,
            } => make_blur_problem(*size, *psf, *noise, *seed, *eta),
            ProblemSpec::Tomo {
                size,
                angles,
                noise,
                seed,
                eta,
            } => make_tomo_problem(*size, *angles, *noise, *seed, *eta),
            ProblemSpec::Matrix {
                path,
                noise,
                seed,
                eta,
                scale,
            } => {
                let op = load_matrix_market(Path::new(path))?;
                make_matrix_problem(op, *noise, *seed, *eta, *scale)
            }
        }
    }
}

/// Adds Gaussian noise of exact relative size `level` to `b_exact`:
/// the raw seeded Gaussian draw is rescaled to `||e|| = level * ||b_exact||`
/// exactly, so the returned `epsilon` is not an estimate.
pub fn add_noise(
    b_exact: &DVector<f64>,
    level: f64,
    seed: u64,
) -> Result<(DVector<f64>, f64), ProblemError> {
    if level <= 0.0 || !level.is_finite() {
        return Err(ProblemError::InvalidParameter(format!(
            "noise level must be positive, got {level}"
        )));
    }
    let norm = b_exact.norm();
    if norm == 0.0 {
        return Err(ProblemError::DegenerateData(
            "cannot add relative noise to zero data".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut g = DVector::zeros(b_exact.len());
    for gi in g.iter_mut() {
        *gi = StandardNormal.sample(&mut rng);
    }
    let g_norm = g.norm();
    if g_norm == 0.0 {
        return Err(ProblemError::DegenerateData("noise draw collapsed".into()));
    }
    let epsilon = level * norm;
    let e = g * (epsilon / g_norm);
    Ok((b_exact + e, epsilon))
}

/// Builds an image deblurring instance: smooth test image on a `size x
/// size` grid, blur stencil with zero boundary conditions, noise of exact
/// relative size `level`.
pub fn make_blur_problem(
    size: usize,
    psf: PsfSpec,
    level: f64,
    seed: u64,
    eta: f64,
) -> Result<InverseProblem, ProblemError> {
    if size < 8 {
        return Err(ProblemError::InvalidParameter(format!(
            "blur problems need size >= 8, got {size}"
        )));
    }
    let kernel = match psf {
        PsfSpec::Gaussian { std } => gaussian_psf(std, size)?,
        PsfSpec::Motion { len, angle_deg } => motion_psf(len, angle_deg, size)?,
    };
    let op = LinearOperator::new(Arc::new(StencilOp::new(size, kernel)));
    let x_exact = peaks_image(size);
    let b_exact = op.apply_unrecorded(&x_exact);
    let (b, epsilon) = add_noise(&b_exact, level, seed)?;
    Ok(InverseProblem {
        op,
        b,
        b_exact: Some(b_exact),
        x_exact: Some(x_exact),
        epsilon,
        eta,
        seed,
    })
}

/// Builds a parallel-beam tomography instance: ellipse phantom, ray
/// projector with exact intersection lengths, noisy sinogram.
pub fn make_tomo_problem(
    size: usize,
    n_angles: usize,
    level: f64,
    seed: u64,
    eta: f64,
) -> Result<InverseProblem, ProblemError> {
    if size < 16 {
        return Err(ProblemError::InvalidParameter(format!(
            "tomography problems need size >= 16, got {size}"
        )));
    }
    if n_angles < 2 {
        return Err(ProblemError::InvalidParameter(format!(
            "tomography problems need at least 2 angles, got {n_angles}"
        )));
    }
    let op = LinearOperator::new(Arc::new(RayProjectorOp::new(size, n_angles)));
    let x_exact = shepp_logan(size);
    let b_exact = op.apply_unrecorded(&x_exact);
    let (b, epsilon) = add_noise(&b_exact, level, seed)?;
    Ok(InverseProblem {
        op,
        b,
        b_exact: Some(b_exact),
        x_exact: Some(x_exact),
        epsilon,
        eta,
        seed,
    })
}

/// Wraps a loaded matrix as an inverse problem: optional rescaling to unit
/// operator norm, smooth sinusoidal exact solution
/// `x_i = sin((i+1) * 2 pi / (n+1))`, noisy right-hand side.
pub fn make_matrix_problem(
    op: LinearOperator,
    level: f64,
    seed: u64,
    eta: f64,
    scale: bool,
) -> Result<InverseProblem, ProblemError> {
    let op = if scale {
        op.scaled_to_unit_norm()?.0
    } else {
        op
    };
    let n = op.cols();
    let h = 2.0 * std::f64::consts::PI / (n as f64 + 1.0);
    let x_exact = DVector::from_fn(n, |i, _| ((i as f64 + 1.0) * h).sin());
    let b_exact = op.apply_unrecorded(&x_exact);
    let (b, epsilon) = add_noise(&b_exact, level, seed)?;
    Ok(InverseProblem {
        op,
        b,
        b_exact: Some(b_exact),
        x_exact: Some(x_exact),
        epsilon,
        eta,
        seed,
    })
}

/// First-order optimality report for a candidate `(x, lambda)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KktReport {
    /// `||(A^T A + I/lambda) x - A^T b|| / ||A^T b||`
    pub stationarity_relres: f64,
    /// `| ||A x - b|| - sigma | / sigma`
    pub discrepancy_relerr: f64,
}

/// Measures how well `(x, lambda)` satisfies the Tikhonov normal equations
/// at `alpha = 1/lambda` together with the discrepancy principle. Uses
/// uncounted operator applications (diagnostics must not change reported
/// MV totals).
pub fn check_kkt(
    op: &LinearOperator,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: f64,
    sigma: f64,
) -> Result<KktReport, ProblemError> {
    if !(lambda > 0.0) {
        return Err(ProblemError::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(ProblemError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let ax = op.apply_unrecorded(x);
    let atax = op.apply_transpose_unrecorded(&ax);
    let atb = op.apply_transpose_unrecorded(b);
    let atb_norm = atb.norm();
    let stationarity = (atax + x / lambda - atb).norm() / atb_norm;
    let residual = (ax - b).norm();
    Ok(KktReport {
        stationarity_relres: stationarity,
        discrepancy_relerr: (residual - sigma).abs() / sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_size_is_exact() {
        let mut b = DVector::zeros(40);
        b[0] = 10.0;
        let (noisy, eps) = add_noise(&b, 0.1, 7).unwrap();
        assert_eq!(eps, 1.0);
        assert!(((noisy - &b).norm() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let b = DVector::from_fn(25, |i, _| (i as f64 * 0.3).cos());
        let (n1, e1) = add_noise(&b, 0.05, 123).unwrap();
        let (n2, e2) = add_noise(&b, 0.05, 123).unwrap();
        assert_eq!(n1, n2);
        assert_eq!(e1, e2);
        let (n3, e3) = add_noise(&b, 0.05, 124).unwrap();
        assert_eq!(e1, e3);
        assert_ne!(n1, n3);
        assert!(((&n3 - &b).norm() - e3).abs() <= 1e-14);
    }

    #[test]
    fn noise_rejects_zero_data() {
        assert!(matches!(
            add_noise(&DVector::zeros(5), 0.1, 0),
            Err(ProblemError::DegenerateData(_))
        ));
    }

    #[test]
    fn near_delta_psf_acts_as_identity() {
        let p = make_blur_problem(16, PsfSpec::Gaussian { std: 1e-4 }, 0.1, 0, 1.0).unwrap();
        let x = p.x_exact.as_ref().unwrap();
        let ax = p.op.apply_unrecorded(x);
        assert!((ax - x).norm() / x.norm() <= 1e-8);
    }

    #[test]
    fn blur_row_sums_respect_zero_boundaries() {
        let p = make_blur_problem(16, PsfSpec::Gaussian { std: 1.5 }, 0.1, 0, 1.0).unwrap();
        let a = p.op.densify();
        let size = 16;
        let kernel_radius = 6; // ceil(4 * 1.5)
        for i in 0..size {
            for j in 0..size {
                let row = i * size + j;
                let sum: f64 = a.row(row).iter().sum();
                assert!(sum <= 1.0 + 1e-12, "row {row} sums to {sum}");
                let interior = i >= kernel_radius
                    && i < size - kernel_radius
                    && j >= kernel_radius
                    && j < size - kernel_radius;
                if interior {
                    assert!((sum - 1.0).abs() <= 1e-12, "interior row {row}: {sum}");
                }
            }
        }
    }

    #[test]
    fn gaussian_blur_is_a_contraction() {
        let p = make_blur_problem(24, PsfSpec::Gaussian { std: 2.0 }, 0.1, 3, 1.0).unwrap();
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x = DVector::from_fn(24 * 24, |_, _| rng.gen_range(0.0..1.0));
            let ax = p.op.apply_unrecorded(&x);
            assert!(ax.norm() <= x.norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn motion_psf_problem_builds_and_blurs() {
        let p = make_blur_problem(
            16,
            PsfSpec::Motion {
                len: 5.0,
                angle_deg: 30.0,
            },
            0.1,
            1,
            1.0,
        )
        .unwrap();
        assert_eq!(p.op.rows(), 256);
        let b_exact = p.b_exact.as_ref().unwrap();
        assert!(b_exact.norm() > 0.0);
        assert!(((p.b.clone() - b_exact).norm() - p.epsilon).abs() <= 1e-12);
    }

    #[test]
    fn blur_rejects_tiny_sizes() {
        assert!(matches!(
            make_blur_problem(4, PsfSpec::Gaussian { std: 1.0 }, 0.1, 0, 1.0),
            Err(ProblemError::InvalidParameter(_))
        ));
    }

    #[test]
    fn tomo_rejects_bad_geometry() {
        assert!(make_tomo_problem(8, 10, 0.1, 0, 1.0).is_err());
        assert!(make_tomo_problem(16, 1, 0.1, 0, 1.0).is_err());
    }

    #[test]
    fn tomo_problem_dimensions_and_sigma() {
        let p = make_tomo_problem(16, 12, 0.1, 5, 1.5).unwrap();
        assert_eq!(p.op.rows(), 12 * 16);
        assert_eq!(p.op.cols(), 256);
        assert_eq!(p.sigma(), 1.5 * p.epsilon);
    }

    #[test]
    fn matrix_problem_uses_sinusoidal_solution() {
        let op = LinearOperator::from_diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let p = make_matrix_problem(op, 0.1, 9, 1.0, false).unwrap();
        let h = 2.0 * std::f64::consts::PI / 5.0;
        let x = p.x_exact.as_ref().unwrap();
        for i in 0..4 {
            assert!((x[i] - ((i as f64 + 1.0) * h).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn kkt_report_at_origin_reduces_to_data_norm_gap() {
        let op = LinearOperator::from_diagonal(&[2.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0]);
        let sigma = 0.5;
        let rep = check_kkt(&op, &b, &DVector::zeros(2), 1.0, sigma).unwrap();
        let expected = (b.norm() - sigma).abs() / sigma;
        assert!((rep.discrepancy_relerr - expected).abs() <= 1e-14);
    }

    #[test]
    fn kkt_report_positive_at_generic_point() {
        let op = LinearOperator::from_diagonal(&[2.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0]);
        let x = DVector::from_row_slice(&[0.3, -0.2]);
        let rep = check_kkt(&op, &b, &x, 2.0, 0.5).unwrap();
        assert!(rep.stationarity_relres > 0.0);
        assert!(rep.discrepancy_relerr > 0.0);
    }

    #[test]
    fn kkt_diagnostics_do_not_touch_counters() {
        let op = LinearOperator::from_diagonal(&[2.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0]);
        check_kkt(&op, &b, &DVector::zeros(2), 1.0, 0.5).unwrap();
        assert_eq!(op.stats().total(), 0);
    }

    #[test]
    fn problem_spec_rebuild_is_deterministic() {
        let spec = ProblemSpec::Tomo {
            size: 16,
            angles: 8,
            noise: 0.1,
            seed: 42,
            eta: 1.0,
        };
        let p1 = spec.build().unwrap();
        let p2 = spec.build().unwrap();
        assert_eq!(p1.b, p2.b);
        assert_eq!(p1.epsilon, p2.epsilon);
    }
}

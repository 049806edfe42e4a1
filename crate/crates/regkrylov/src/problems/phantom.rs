//! Procedural test images: an ellipse-composition head phantom for
//! tomography, a smooth multi-modal field for deblurring, and point spread
//! function kernels.

use nalgebra::{DMatrix, DVector};

use super::ProblemError;

/// Modified head phantom: ten superposed ellipses with intensities chosen
/// so pixel values stay in `[0, 1]`. `(value, a, b, x0, y0, phi_deg)` with
/// geometry relative to the unit square `[-1, 1]^2`.
const ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

/// Renders the ellipse phantom on a `size x size` grid (row-major,
/// `index = iy * size + ix`).
pub fn shepp_logan(size: usize) -> DVector<f64> {
    let mut img = DVector::zeros(size * size);
    for iy in 0..size {
        let y = (iy as f64 + 0.5) / size as f64 * 2.0 - 1.0;
        for ix in 0..size {
            let x = (ix as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            let mut val = 0.0;
            for &(v, a, b, x0, y0, phi_deg) in &ELLIPSES {
                let phi = phi_deg.to_radians();
                let (s, c) = phi.sin_cos();
                let xr = c * (x - x0) + s * (y - y0);
                let yr = -s * (x - x0) + c * (y - y0);
                if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
                    val += v;
                }
            }
            img[iy * size + ix] = val;
        }
    }
    img
}

/// Smooth multi-modal test image (three superposed Gaussian-type bumps over
/// `[-3, 3]^2`), rescaled to `[0, 1]`.
pub fn peaks_image(size: usize) -> DVector<f64> {
    let mut img = DVector::zeros(size * size);
    for iy in 0..size {
        let y = (iy as f64 + 0.5) / size as f64 * 6.0 - 3.0;
        for ix in 0..size {
            let x = (ix as f64 + 0.5) / size as f64 * 6.0 - 3.0;
            let v = 3.0 * (1.0 - x).powi(2) * (-x * x - (y + 1.0).powi(2)).exp()
                - 10.0 * (x / 5.0 - x.powi(3) - y.powi(5)) * (-x * x - y * y).exp()
                - (1.0 / 3.0) * (-(x + 1.0).powi(2) - y * y).exp();
            img[iy * size + ix] = v;
        }
    }
    let lo = img.min();
    let hi = img.max();
    (img.add_scalar(-lo)) / (hi - lo)
}

/// Normalized isotropic Gaussian kernel with standard deviation `std`
/// pixels; the radius covers four standard deviations (at least one pixel),
/// clamped so the kernel never exceeds the image.
pub fn gaussian_psf(std: f64, image_size: usize) -> Result<DMatrix<f64>, ProblemError> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(ProblemError::InvalidParameter(format!(
            "gaussian psf needs a positive std, got {std}"
        )));
    }
    let radius = ((4.0 * std).ceil() as usize).clamp(1, image_size - 1);
    let side = 2 * radius + 1;
    let mut k = DMatrix::zeros(side, side);
    for p in 0..side {
        for q in 0..side {
            let dp = p as f64 - radius as f64;
            let dq = q as f64 - radius as f64;
            k[(p, q)] = (-(dp * dp + dq * dq) / (2.0 * std * std)).exp();
        }
    }
    let total: f64 = k.iter().sum();
    Ok(k / total)
}

/// Normalized line kernel of the given length (pixels) and direction:
/// point samples along the segment, deposited bilinearly.
pub fn motion_psf(len: f64, angle_deg: f64, image_size: usize) -> Result<DMatrix<f64>, ProblemError> {
    if !(len >= 1.0 && len.is_finite()) {
        return Err(ProblemError::InvalidParameter(format!(
            "motion psf needs len >= 1, got {len}"
        )));
    }
    if !angle_deg.is_finite() {
        return Err(ProblemError::InvalidParameter("angle must be finite".into()));
    }
    let radius = (((len - 1.0) / 2.0).ceil() as usize + 1).clamp(1, image_size - 1);
    let side = 2 * radius + 1;
    let mut k = DMatrix::zeros(side, side);
    let theta = angle_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let half = (len - 1.0) / 2.0;
    let samples = ((len * 8.0).ceil() as usize).max(1);
    for i in 0..samples {
        let tau = if samples == 1 {
            0.0
        } else {
            -half + (i as f64) * (2.0 * half) / (samples as f64 - 1.0)
        };
        let px = tau * c + radius as f64;
        let py = tau * s + radius as f64;
        let p0 = px.floor();
        let q0 = py.floor();
        let fx = px - p0;
        let fy = py - q0;
        let mut deposit = |pp: isize, qq: isize, w: f64| {
            if pp >= 0 && (pp as usize) < side && qq >= 0 && (qq as usize) < side {
                k[(qq as usize, pp as usize)] += w;
            }
        };
        deposit(p0 as isize, q0 as isize, (1.0 - fx) * (1.0 - fy));
        deposit(p0 as isize + 1, q0 as isize, fx * (1.0 - fy));
        deposit(p0 as isize, q0 as isize + 1, (1.0 - fx) * fy);
        deposit(p0 as isize + 1, q0 as isize + 1, fx * fy);
    }
    let total: f64 = k.iter().sum();
    Ok(k / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_values_stay_in_unit_interval() {
        let img = shepp_logan(32);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // the skull rim is the brightest structure
        assert!(img.max() == 1.0);
        // corners are background
        assert_eq!(img[0], 0.0);
    }

    #[test]
    fn peaks_image_is_normalized() {
        let img = peaks_image(32);
        assert!((img.min() - 0.0).abs() < 1e-15);
        assert!((img.max() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_psf_sums_to_one_and_is_symmetric() {
        let k = gaussian_psf(1.5, 32).unwrap();
        let total: f64 = k.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert_eq!(k.nrows(), 13); // radius ceil(6) = 6
        for p in 0..k.nrows() {
            for q in 0..k.ncols() {
                let mirrored = k[(k.nrows() - 1 - p, k.ncols() - 1 - q)];
                assert!((k[(p, q)] - mirrored).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn motion_psf_concentrates_along_the_line() {
        let k = motion_psf(7.0, 0.0, 32).unwrap();
        let total: f64 = k.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        // horizontal motion: all mass on the central row
        let center = k.nrows() / 2;
        let central_row: f64 = (0..k.ncols()).map(|q| k[(center, q)]).sum();
        assert!((central_row - 1.0).abs() < 1e-12);
    }
}

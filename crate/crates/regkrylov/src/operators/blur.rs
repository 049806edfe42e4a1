use nalgebra::{DMatrix, DVector};

use super::OpKernel;

/// Image blur backend: 2D convolution of a square image with a small point
/// spread function, zero boundary conditions.
///
/// Images are stored row-major as vectors of length `size * size`. The
/// kernel has odd dimensions and is centered; `matvec` computes
/// `out[i,j] = sum_{p,q} k[p,q] * img[i-(p-cp), j-(q-cq)]` with pixels
/// outside the image treated as zero, and `rmatvec` is the exact adjoint
/// (correlation with the same kernel).
pub struct StencilOp {
    size: usize,
    kernel: DMatrix<f64>,
}

impl StencilOp {
    /// `kernel` must have odd numbers of rows and columns.
    pub fn new(size: usize, kernel: DMatrix<f64>) -> Self {
        assert!(kernel.nrows() % 2 == 1 && kernel.ncols() % 2 == 1);
        Self { size, kernel }
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    fn conv(&self, x: &DVector<f64>, flipped: bool) -> DVector<f64> {
        let s = self.size as isize;
        let (kr, kc) = (self.kernel.nrows() as isize, self.kernel.ncols() as isize);
        let (cr, cc) = (kr / 2, kc / 2);
        let mut out = DVector::zeros(self.size * self.size);
        for i in 0..s {
            for j in 0..s {
                let mut acc = 0.0;
                for p in 0..kr {
                    let si = if flipped { i + (p - cr) } else { i - (p - cr) };
                    if si < 0 || si >= s {
                        continue;
                    }
                    for q in 0..kc {
                        let sj = if flipped { j + (q - cc) } else { j - (q - cc) };
                        if sj < 0 || sj >= s {
                            continue;
                        }
                        acc += self.kernel[(p as usize, q as usize)]
                            * x[(si * s + sj) as usize];
                    }
                }
                out[(i * s + j) as usize] = acc;
            }
        }
        out
    }
}

impl OpKernel for StencilOp {
    fn rows(&self) -> usize {
        self.size * self.size
    }

    fn cols(&self) -> usize {
        self.size * self.size
    }

    fn matvec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.conv(v, false)
    }

    fn rmatvec(&self, u: &DVector<f64>) -> DVector<f64> {
        self.conv(u, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::LinearOperator;
    use std::sync::Arc;

    fn tiny_gaussian_kernel() -> DMatrix<f64> {
        let mut k = DMatrix::zeros(3, 3);
        let sigma: f64 = 0.8;
        for p in 0..3i32 {
            for q in 0..3i32 {
                let d2 = ((p - 1).pow(2) + (q - 1).pow(2)) as f64;
                k[(p as usize, q as usize)] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        let total: f64 = k.iter().sum();
        k / total
    }

    #[test]
    fn delta_image_reproduces_centered_kernel() {
        let size = 9;
        let kernel = tiny_gaussian_kernel();
        let op = StencilOp::new(size, kernel.clone());
        let mut delta = DVector::zeros(size * size);
        let c = 4;
        delta[c * size + c] = 1.0;
        let blurred = op.matvec(&delta);
        let total: f64 = blurred.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "kernel sum {total}");
        for p in 0..3usize {
            for q in 0..3usize {
                let idx = (c + p - 1) * size + (c + q - 1);
                assert!((blurred[idx] - kernel[(p, q)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_densified_matrix_assembled_from_unit_vectors() {
        let size = 6;
        let op = LinearOperator::new(Arc::new(StencilOp::new(size, tiny_gaussian_kernel())));
        let dense = op.densify();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v = DVector::from_fn(size * size, |_, _| rng.gen_range(-1.0..1.0));
        let direct = op.apply_unrecorded(&v);
        let via_dense = &dense * &v;
        assert!((direct - via_dense).norm() < 1e-12);
        let u = DVector::from_fn(size * size, |_, _| rng.gen_range(-1.0..1.0));
        let adj = op.apply_transpose_unrecorded(&u);
        let via_dense_t = dense.tr_mul(&u);
        assert!((adj - via_dense_t).norm() < 1e-12);
    }
}

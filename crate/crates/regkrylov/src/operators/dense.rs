use nalgebra::{DMatrix, DVector};

use super::OpKernel;

/// Dense matrix backend.
pub struct DenseOp {
    a: DMatrix<f64>,
}

impl DenseOp {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl OpKernel for DenseOp {
    fn rows(&self) -> usize {
        self.a.nrows()
    }

    fn cols(&self) -> usize {
        self.a.ncols()
    }

    fn matvec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.a * v
    }

    fn rmatvec(&self, u: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(u)
    }
}

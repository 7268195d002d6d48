//! Small symmetric-matrix helpers shared by the test statistics.

use nalgebra::{DMatrix, SymmetricEigen};

/// Eigenvalues below this fraction of the trace count as numerically singular.
pub const SINGULAR_RTOL: f64 = 1e-10;
/// Ridge added to a singular matrix, as a fraction of `trace / d`.
pub const RIDGE_FRACTION: f64 = 1e-8;
/// Ridge used when the matrix is identically zero (constant input).
pub const ZERO_MATRIX_RIDGE: f64 = 1e-12;

/// Symmetric eigendecomposition after ridge regularization of a near-singular
/// matrix. Returns the decomposition and whether a ridge was added.
pub fn regularized_eigen(m: &DMatrix<f64>) -> (SymmetricEigen<f64, nalgebra::Dyn>, bool) {
    let d = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let trace = sym.trace();
    let eig = SymmetricEigen::new(sym.clone());
    let min_eig = eig.eigenvalues.min();
    if trace > 0.0 && min_eig >= SINGULAR_RTOL * trace {
        return (eig, false);
    }
    let ridge = if trace > 0.0 {
        RIDGE_FRACTION * trace / d as f64
    } else {
        ZERO_MATRIX_RIDGE
    };
    // Clamp the negative round-off part before adding the ridge.
    let mut eig = SymmetricEigen::new(sym + DMatrix::identity(d, d) * ridge);
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.max(ridge));
    (eig, true)
}

fn spectral_apply(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = f(lambda);
        scaled.column_mut(j).iter_mut().for_each(|v| *v *= s);
    }
    scaled * q.transpose()
}

/// Regularized inverse of a symmetric PSD matrix.
pub fn regularized_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (eig, ridged) = regularized_eigen(m);
    (spectral_apply(&eig, |l| 1.0 / l), ridged)
}

/// Regularized inverse square root `M^{-1/2}` of a symmetric PSD matrix.
pub fn regularized_inv_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (eig, ridged) = regularized_eigen(m);
    (spectral_apply(&eig, |l| 1.0 / l.sqrt()), ridged)
}

/// `vᵀ M v` for a square `M`.
pub fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += m[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

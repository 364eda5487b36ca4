//! Small symmetric-matrix helpers for the 2×2 curvature blocks.

use nalgebra::{Matrix2, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<f64>;

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym_eigenvalues(m: &Mat2) -> [f64; 2] {
    let e = SymmetricEigen::new(*m).eigenvalues;
    if e[0] <= e[1] {
        [e[0], e[1]]
    } else {
        [e[1], e[0]]
    }
}

pub fn is_spd(m: &Mat2) -> bool {
    (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-12 * m.abs().max().max(1e-300) && sym_eigenvalues(m)[0] > 0.0
}

/// Principal square root of a symmetric positive definite matrix.
pub fn sym_sqrt(m: &Mat2) -> Result<Mat2> {
    let eig = SymmetricEigen::new(symmetrise(m));
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite(format!("eigenvalues {:?}", eig.eigenvalues.as_slice())));
    }
    let root = Mat2::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(eig.eigenvectors * root * eig.eigenvectors.transpose())
}

pub fn symmetrise(m: &Mat2) -> Mat2 {
    (m + m.transpose()) * 0.5
}

pub fn inverse(m: &Mat2) -> Result<Mat2> {
    m.try_inverse().ok_or_else(|| Error::NotPositiveDefinite("singular matrix".into()))
}

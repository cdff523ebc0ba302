use alloc::vec::Vec;
use nalgebra::DMatrix;

/// Result of inverting a symmetric matrix through its eigen-decomposition.
pub(crate) struct SymmetricInverse {
    pub inverse: DMatrix<f64>,
    pub condition_number: f64,
    /// Eigenvalues treated as zero.
    pub dropped: usize,
    pub min_eigenvalue: f64,
}

/// Moore-Penrose inverse of a symmetric matrix. Eigenvalues whose magnitude
/// falls below `rel_tol * max|lambda|` are dropped.
pub(crate) fn symmetric_pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> SymmetricInverse {
    let n = m.nrows();
    if n == 0 {
        return SymmetricInverse { inverse: DMatrix::zeros(0, 0), condition_number: 1.0, dropped: 0, min_eigenvalue: 0.0 };
    }
    let eig = m.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(libm::fabs(*v)));
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(libm::fabs(*v)));
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff = rel_tol * max_abs;
    let mut dropped = 0;
    let inv_vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if libm::fabs(l) <= cutoff || l == 0.0 {
                dropped += 1;
                0.0
            } else {
                1.0 / l
            }
        })
        .collect();
    let q = &eig.eigenvectors;
    let mut inverse = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = (0..n).map(|k| q[(i, k)] * inv_vals[k] * q[(j, k)]).sum();
            inverse[(i, j)] = v;
            inverse[(j, i)] = v;
        }
    }
    let condition_number = if min_abs == 0.0 { f64::INFINITY } else { max_abs / min_abs };
    SymmetricInverse { inverse, condition_number, dropped, min_eigenvalue }
}

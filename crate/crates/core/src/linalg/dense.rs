//! Dense eigen-solvers built on nalgebra's Schur and Hermitian decompositions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Eigenvalues and unit-norm right eigenvectors (as columns) of a general complex matrix.
pub fn eigen(m: &DMatrix<Complex64>) -> (Vec<Complex64>, DMatrix<Complex64>) {
    let n = m.nrows();
    let (q, t) = nalgebra::linalg::Schur::new(m.clone()).unpack();
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let scale = t.iter().fold(0.0f64, |a, v| a.max(v.norm())).max(1.0);
    let mut z = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        let ti = t[(i, i)];
        z[(i, i)] = Complex64::new(1.0, 0.0);
        for j in (0..i).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in j + 1..=i {
                acc += t[(j, l)] * z[(l, i)];
            }
            let mut denom = t[(j, j)] - ti;
            if denom.norm() < f64::EPSILON * scale {
                denom = Complex64::new(f64::EPSILON * scale, 0.0);
            }
            z[(j, i)] = -acc / denom;
        }
    }
    let mut vecs = q * z;
    for mut col in vecs.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= Complex64::new(nrm, 0.0);
        }
    }
    (values, vecs)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted in descending order.
pub fn hermitian_eigen_desc(m: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = nalgebra::linalg::SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vecs)
}

/// Trace distance ½‖a − b‖₁ between two Hermitian matrices.
pub fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let (vals, _) = hermitian_eigen_desc(&(a - b));
    0.5 * vals.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn column_to_vec(v: &DVector<Complex64>) -> Vec<Complex64> {
    v.iter().copied().collect()
}

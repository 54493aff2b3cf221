//! Dense reduction of small pencils to a standard symmetric eigenproblem.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatRef, Par, Side};

use super::EigenError;

/// All eigenpairs of `K x = E M x` for dense symmetric `K` and SPD `M`.
/// Eigenvectors are returned M-orthonormal, one per column.
pub fn generalized(k: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>), EigenError> {
    let llt = m
        .llt(Side::Lower)
        .map_err(|e| EigenError::IndefiniteMass(format!("dense Cholesky failed: {e:?}")))?;
    let l = llt.L();
    let mut c = k.to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let mut c = c.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let n = c.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let eig = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| EigenError::Factorization(format!("dense eigensolver failed: {e:?}")))?;
    let energies: Vec<f64> = eig.S().column_vector().iter().copied().collect();
    let mut x = eig.U().to_owned();
    solve_upper_triangular_in_place(l.transpose(), x.as_mut(), Par::Seq);
    Ok((energies, x))
}

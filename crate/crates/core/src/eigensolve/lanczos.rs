//! Shift-invert Lanczos in the M-inner product with full reorthogonalisation.

use faer::{Mat, Side};

use crate::fem::SparseSymMatrix;

use super::factor::Ldlt;

/// Ritz approximation of an eigenpair of `K x = E M x`.
pub struct Ritz {
    pub energy: f64,
    /// Estimate of `‖op x - θ x‖_M / |θ|` from the tridiagonal recurrence.
    pub estimate: f64,
    /// Coefficients of the Ritz vector in the Lanczos basis.
    coeffs: Vec<f64>,
}

pub struct Krylov {
    basis: Vec<Vec<f64>>,
    pub ritz: Vec<Ritz>,
}

impl Krylov {
    pub fn steps(&self) -> usize {
        self.basis.len()
    }

    pub fn vector(&self, r: &Ritz) -> Vec<f64> {
        let n = self.basis[0].len();
        let mut x = vec![0.0; n];
        for (q, &c) in self.basis.iter().zip(&r.coeffs) {
            axpy(c, q, &mut x);
        }
        x
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Remove the M-projection onto the M-orthonormal `sets`, in two passes.
/// Returns the accumulated projection coefficients in concatenated order.
fn m_orthogonalise(
    mass: &SparseSymMatrix,
    w: &mut [f64],
    mw: &mut [f64],
    sets: &[&[Vec<f64>]],
) -> Vec<f64> {
    let total: usize = sets.iter().map(|s| s.len()).sum();
    let mut acc = vec![0.0; total];
    for _ in 0..2 {
        mass.mul_vec_into(w, mw);
        let coeffs: Vec<f64> = sets.iter().flat_map(|s| s.iter()).map(|q| dot(q, mw)).collect();
        for (q, &c) in sets.iter().flat_map(|s| s.iter()).zip(&coeffs) {
            axpy(-c, q, w);
        }
        for (a, c) in acc.iter_mut().zip(&coeffs) {
            *a += c;
        }
    }
    acc
}

/// Run `steps` Lanczos iterations on `(K - σM)⁻¹ M` starting from `start`,
/// keeping the basis M-orthogonal to `deflate`.
pub fn run(
    mass: &SparseSymMatrix,
    factor: &Ldlt<'_>,
    sigma: f64,
    steps: usize,
    mut start: Vec<f64>,
    deflate: &[Vec<f64>],
) -> Krylov {
    let n = start.len();
    let mut mw = vec![0.0; n];
    m_orthogonalise(mass, &mut start, &mut mw, &[deflate]);
    mass.mul_vec_into(&start, &mut mw);
    let norm = dot(&start, &mw).sqrt();
    start.iter_mut().for_each(|v| *v /= norm);

    let mut basis: Vec<Vec<f64>> = vec![start];
    let mut alpha: Vec<f64> = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut w = vec![0.0; n];
    for j in 0..steps {
        mass.mul_vec_into(&basis[j], &mut w);
        factor.solve_in_place(&mut w);
        mass.mul_vec_into(&w, &mut mw);
        let mut a = dot(&basis[j], &mw);
        axpy(-a, &basis[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        a += m_orthogonalise(mass, &mut w, &mut mw, &[&basis[..], deflate])[j];
        mass.mul_vec_into(&w, &mut mw);
        let b = dot(&w, &mw).max(0.0).sqrt();
        alpha.push(a);
        beta.push(b);
        if j + 1 == steps || b <= 1e-12 * a.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        w.iter_mut().for_each(|v| *v /= b);
        basis.push(std::mem::replace(&mut w, vec![0.0; n]));
    }

    let m = alpha.len();
    basis.truncate(m);
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let eig = t.self_adjoint_eigen(Side::Lower).expect("tridiagonal eigensolve");
    let (u, s) = (eig.U(), eig.S());
    let beta_m = beta[m - 1];
    let ritz = (0..m)
        .filter_map(|i| {
            let theta = s.column_vector()[i];
            if theta.abs() < f64::EPSILON * alpha.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) {
                return None;
            }
            let coeffs: Vec<f64> = (0..m).map(|r| u[(r, i)]).collect();
            Some(Ritz {
                energy: sigma + 1.0 / theta,
                estimate: (beta_m * coeffs[m - 1]).abs() / theta.abs(),
                coeffs,
            })
        })
        .collect();
    Krylov { basis, ritz }
}

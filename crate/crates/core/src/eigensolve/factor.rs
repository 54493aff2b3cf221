//! Sparse symmetric LDLᵀ factorisation of shifted pencils `K - σM`.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::supernodal::SupernodalLdltRef;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky,
    SymbolicCholeskyRaw, SymmetricOrdering,
};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use crate::fem::SparseSymMatrix;

use super::EigenError;

/// Fill-reducing ordering and elimination structure shared by every shift.
pub struct Symbolic {
    inner: SymbolicCholesky<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Symbolic {
    pub fn analyse(pattern: &SparseSymMatrix) -> Result<Self, EigenError> {
        Self::analyse_with(pattern, SupernodalThreshold::AUTO)
    }

    fn analyse_with(pattern: &SparseSymMatrix, threshold: SupernodalThreshold) -> Result<Self, EigenError> {
        let n = pattern.dim();
        let row_ptr = pattern.row_ptr().to_vec();
        let col_idx = pattern.col_idx().to_vec();
        // the upper CSR arrays read as the lower triangle in CSC form
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &row_ptr, None, &col_idx);
        let inner = factorize_symbolic_cholesky(
            sym,
            Side::Lower,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams { supernodal_flop_ratio_threshold: threshold, ..Default::default() },
        )
        .map_err(|e| EigenError::Factorization(format!("{e:?}")))?;
        Ok(Symbolic { inner, row_ptr, col_idx })
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    /// Factor the symmetric matrix with the analysed pattern and `values`.
    pub fn factor(&self, values: &[f64]) -> Result<Ldlt<'_>, EigenError> {
        let n = self.dim();
        assert_eq!(values.len(), self.col_idx.len());
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &self.row_ptr, None, &self.col_idx);
        let a = SparseColMatRef::new(sym, values);
        let mut l_values = vec![0.0f64; self.inner.len_val()];
        let mut mem = MemBuffer::new(
            self.inner.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()),
        );
        self.inner
            .factorize_numeric_ldlt(
                &mut l_values,
                a,
                Side::Lower,
                LdltRegularization::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| EigenError::Factorization(format!("{e:?}")))?;
        let negative = count_negative_pivots(&self.inner, &l_values);
        Ok(Ldlt { symbolic: &self.inner, l_values, negative })
    }
}

fn count_negative_pivots(symbolic: &SymbolicCholesky<usize>, l_values: &[f64]) -> usize {
    match symbolic.raw() {
        SymbolicCholeskyRaw::Simplicial(s) => {
            let col_ptr = s.col_ptr();
            (0..s.ncols()).filter(|&j| l_values[col_ptr[j]] < 0.0).count()
        }
        SymbolicCholeskyRaw::Supernodal(s) => {
            let l = SupernodalLdltRef::new(s, l_values);
            (0..s.n_supernodes())
                .map(|k| {
                    let d = l.supernode(k).val().diagonal();
                    d.column_vector().iter().filter(|&&v| v < 0.0).count()
                })
                .sum()
        }
    }
}

/// Numeric factor of one shifted matrix.
pub struct Ldlt<'a> {
    symbolic: &'a SymbolicCholesky<usize>,
    l_values: Vec<f64>,
    negative: usize,
}

impl Ldlt<'_> {
    /// Number of negative pivots, i.e. the number of eigenvalues of the
    /// pencil below the shift (Sylvester's law of inertia).
    pub fn negative_pivots(&self) -> usize {
        self.negative
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        let rhs = MatMut::from_column_major_slice_mut(rhs, n, 1);
        LdltRef::new(self.symbolic, &self.l_values).solve_in_place_with_conj(
            Conj::No,
            rhs,
            Par::Seq,
            MemStack::new(&mut mem),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, diag: f64, off: f64) -> SparseSymMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, diag));
            if i + 1 < n {
                t.push((i, i + 1, off));
            }
        }
        SparseSymMatrix::from_upper_triplets(n, t)
    }

    #[test]
    fn solves_spd_system() {
        let a = tridiag(50, 2.0, -1.0);
        let sym = Symbolic::analyse(&a).unwrap();
        let f = sym.factor(a.values()).unwrap();
        assert_eq!(f.negative_pivots(), 0);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = a.mul_vec(&x);
        f.solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn inertia_counts_eigenvalues_below_shift() {
        // eigenvalues of tridiag(2,-1) are 2 - 2 cos(kπ/(n+1))
        let n = 40;
        let a = tridiag(n, 2.0, -1.0);
        let eye = tridiag(n, 1.0, 0.0);
        let sym = Symbolic::analyse(&a).unwrap();
        for sigma in [0.1, 0.5, 1.3, 2.7, 3.9] {
            let f = sym.factor(&a.axpy_values(-sigma, &eye)).unwrap();
            let expected = (1..=n)
                .filter(|&k| 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n + 1) as f64).cos() < sigma)
                .count();
            assert_eq!(f.negative_pivots(), expected, "sigma = {sigma}");
        }
    }

    #[test]
    fn supernodal_and_simplicial_inertia_agree() {
        use crate::fem::{assemble, ElementOrder};
        use crate::geometry::{build_mesh, DomainSpec};
        let mesh = build_mesh(&DomainSpec::rectangle(1.0, 1.0), 24, None).unwrap();
        let sys = assemble(&mesh, ElementOrder::Quadratic).unwrap();
        let sup = Symbolic::analyse_with(&sys.stiffness, SupernodalThreshold::FORCE_SUPERNODAL).unwrap();
        let simp = Symbolic::analyse_with(&sys.stiffness, SupernodalThreshold::FORCE_SIMPLICIAL).unwrap();
        assert!(matches!(sup.inner.raw(), SymbolicCholeskyRaw::Supernodal(_)));
        assert!(matches!(simp.inner.raw(), SymbolicCholeskyRaw::Simplicial(_)));
        // continuum levels: π², 5π²/2 (x2), 4π²
        for (sigma, expected) in [(5.0, 0), (20.0, 1), (30.0, 3), (42.0, 4)] {
            let values = sys.stiffness.axpy_values(-sigma, &sys.mass);
            assert_eq!(sup.factor(&values).unwrap().negative_pivots(), expected, "sigma = {sigma}");
            assert_eq!(simp.factor(&values).unwrap().negative_pivots(), expected, "sigma = {sigma}");
            let x: Vec<f64> = (0..sys.dim()).map(|i| (i as f64).cos()).collect();
            let mut rhs = sys.stiffness.mul_vec(&x);
            sup.factor(sys.stiffness.values()).unwrap().solve_in_place(&mut rhs);
            assert!(rhs.iter().zip(&x).all(|(u, v)| (u - v).abs() < 1e-8));
        }
    }
}

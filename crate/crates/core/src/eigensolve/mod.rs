//! Lowest eigenpairs of the generalized symmetric problem `K x = E M x`.
//!
//! Small systems are reduced densely. Larger systems are processed by
//! spectrum slicing: shift-invert Lanczos runs at an increasing sequence of
//! shifts, and the inertia of `K - σM` certifies that every slice of the
//! spectrum has been found completely, including degenerate partners.

mod dense;
mod factor;
mod lanczos;

use std::io::{self, Write};

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{FemSystem, SparseSymMatrix};

pub use dense::generalized as dense_generalized;
use lanczos::dot;

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("invalid eigenvalue request: {0}")]
    InvalidRequest(String),
    #[error("eigensolver did not converge: {converged} of {requested} eigenpairs found")]
    NotConverged { converged: usize, requested: usize },
    #[error("mass matrix is not positive definite ({0}); the assembly is broken")]
    IndefiniteMass(String),
    #[error("stiffness matrix is not positive definite ({0})")]
    IndefiniteStiffness(String),
    #[error("factorisation failed: {0}")]
    Factorization(String),
    #[error("interval ({lower}, {upper}) holds {expected} eigenvalues but {found} were found")]
    InertiaMismatch { lower: f64, upper: f64, expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Dense,
    SlicedLanczos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub requested: usize,
    pub tol: f64,
    pub method: SolverMethod,
    /// Total Lanczos steps over all slices and restarts.
    pub iterations: usize,
    pub factorizations: usize,
    pub slices: usize,
    pub restarts: usize,
    /// Inclusive index ranges of near-degenerate clusters.
    pub clusters: Vec<[usize; 2]>,
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub tol: f64,
    /// Keep eigenvectors; energy-only solves skip the final Rayleigh-Ritz.
    pub vectors: bool,
    /// Largest dimension handled by dense reduction.
    pub dense_limit: usize,
    pub lanczos_steps: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: DEFAULT_TOL,
            vectors: true,
            dense_limit: 3000,
            lanczos_steps: 160,
            max_restarts: 6,
            seed: 0x5eed_b111,
        }
    }
}

/// Ascending eigenpairs with residual bookkeeping.
#[derive(Clone, Debug)]
pub struct SpectrumSet {
    pub energies: Vec<f64>,
    /// M-orthonormal eigenvectors, one column per energy.
    pub vectors: Option<Mat<f64>>,
    /// `‖K x - E M x‖ / ‖K x‖` per pair.
    pub residuals: Vec<f64>,
    pub meta: SolverMeta,
}

impl SpectrumSet {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// CSV with header `index,energy,residual`; indices start at 1.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,energy,residual")?;
        for (i, (e, r)) in self.energies.iter().zip(&self.residuals).enumerate() {
            writeln!(w, "{},{:.16e},{:.3e}", i + 1, e, r)?;
        }
        Ok(())
    }

    /// Text block per eigenvector: `vector <index> <dim>` followed by one
    /// component per line with 17 significant digits.
    pub fn write_vectors<W: Write>(&self, mut w: W) -> io::Result<()> {
        let Some(x) = &self.vectors else { return Ok(()) };
        for j in 0..x.ncols() {
            writeln!(w, "vector {} {}", j + 1, x.nrows())?;
            for i in 0..x.nrows() {
                writeln!(w, "{:.16e}", x[(i, j)])?;
            }
        }
        Ok(())
    }

    /// `max |XᵀMX - I|`, if vectors are present.
    pub fn orthonormality_error(&self, mass: &SparseSymMatrix) -> Option<f64> {
        let x = self.vectors.as_ref()?;
        let g = gram(x.as_ref(), mass);
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        Some(worst)
    }
}

/// Lowest `k` eigenpairs with eigenvectors.
pub fn lowest_eigenpairs(system: &FemSystem, k: usize, tol: f64) -> Result<SpectrumSet, EigenError> {
    lowest_eigenpairs_with(system, k, &EigenOptions { tol, ..EigenOptions::default() })
}

/// Lowest `k` energies; eigenvectors are discarded.
pub fn lowest_energies(system: &FemSystem, k: usize, tol: f64) -> Result<SpectrumSet, EigenError> {
    lowest_eigenpairs_with(system, k, &EigenOptions { tol, vectors: false, ..EigenOptions::default() })
}

pub fn lowest_eigenpairs_with(
    system: &FemSystem,
    k: usize,
    opts: &EigenOptions,
) -> Result<SpectrumSet, EigenError> {
    let n = system.dim();
    if k == 0 || k >= n {
        return Err(EigenError::InvalidRequest(format!("k = {k} must satisfy 0 < k < dim = {n}")));
    }
    if !(opts.tol > 0.0 && opts.tol <= 1e-4) {
        return Err(EigenError::InvalidRequest(format!("tol = {} must lie in (0, 1e-4]", opts.tol)));
    }
    let mut meta = SolverMeta {
        requested: k,
        tol: opts.tol,
        method: SolverMethod::Dense,
        iterations: 0,
        factorizations: 0,
        slices: 0,
        restarts: 0,
        clusters: Vec::new(),
    };
    let (energies, vectors) = if n <= opts.dense_limit {
        let (e, x) = dense_solve(system)?;
        (e[..k].to_vec(), x.subcols(0, k).to_owned())
    } else {
        meta.method = SolverMethod::SlicedLanczos;
        let pairs = sliced(system, k, opts, &mut meta)?;
        let energies: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let x = Mat::from_fn(n, k, |i, j| pairs[j].1[i]);
        if opts.vectors {
            rayleigh_ritz(system, energies, x)?
        } else {
            (energies, x)
        }
    };

    let mut vectors = vectors;
    let mut residuals = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = vectors.col(j).iter().copied().collect();
        residuals.push(relative_residual(system, energies[j], &col));
        fix_sign(&mut vectors, j);
    }
    let worst = residuals.iter().cloned().fold(0.0f64, f64::max);
    if worst > opts.tol {
        let converged = residuals.iter().take_while(|&&r| r <= opts.tol).count();
        return Err(EigenError::NotConverged { converged, requested: k });
    }
    if energies[0] <= 0.0 {
        return Err(EigenError::IndefiniteStiffness(format!("lowest energy {}", energies[0])));
    }
    meta.clusters = clusters(&energies, 1e-8);
    Ok(SpectrumSet {
        energies,
        vectors: opts.vectors.then_some(vectors),
        residuals,
        meta,
    })
}

/// Index ranges `[first, last]` where consecutive energies differ by less
/// than `rel` relative to the lower one.
pub fn clusters(energies: &[f64], rel: f64) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=energies.len() {
        let joined = i < energies.len() && (energies[i] - energies[i - 1]).abs() < rel * energies[i - 1].abs();
        if !joined {
            if i - 1 > start {
                out.push([start, i - 1]);
            }
            start = i;
        }
    }
    out
}

pub fn relative_residual(system: &FemSystem, energy: f64, x: &[f64]) -> f64 {
    let kx = system.stiffness.mul_vec(x);
    let mx = system.mass.mul_vec(x);
    let num: f64 = kx.iter().zip(&mx).map(|(a, b)| (a - energy * b).powi(2)).sum::<f64>().sqrt();
    num / dot(&kx, &kx).sqrt()
}

fn fix_sign(x: &mut Mat<f64>, j: usize) {
    let mut best = 0.0f64;
    for i in 0..x.nrows() {
        if x[(i, j)].abs() > best.abs() {
            best = x[(i, j)];
        }
    }
    if best < 0.0 {
        for i in 0..x.nrows() {
            x[(i, j)] = -x[(i, j)];
        }
    }
}

fn to_dense(a: &SparseSymMatrix) -> Mat<f64> {
    let mut d = Mat::zeros(a.dim(), a.dim());
    for (r, c, v) in a.entries() {
        d[(r, c)] = v;
        d[(c, r)] = v;
    }
    d
}

fn dense_solve(system: &FemSystem) -> Result<(Vec<f64>, Mat<f64>), EigenError> {
    dense::generalized(to_dense(&system.stiffness).as_ref(), to_dense(&system.mass).as_ref())
}

fn apply_columns(a: &SparseSymMatrix, x: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(x.nrows(), x.ncols());
    let mut buf = vec![0.0; x.nrows()];
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.col(j).iter().copied().collect();
        a.mul_vec_into(&col, &mut buf);
        for (i, v) in buf.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    out
}

fn gram(x: MatRef<'_, f64>, a: &SparseSymMatrix) -> Mat<f64> {
    x.transpose() * apply_columns(a, x)
}

/// Re-solve the pencil projected onto the span of `x` if its columns are not
/// M-orthonormal to working precision.
fn rayleigh_ritz(
    system: &FemSystem,
    energies: Vec<f64>,
    x: Mat<f64>,
) -> Result<(Vec<f64>, Mat<f64>), EigenError> {
    let g = gram(x.as_ref(), &system.mass);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            worst = worst.max((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    if worst < 1e-12 {
        return Ok((energies, x));
    }
    let h = gram(x.as_ref(), &system.stiffness);
    let (e, y) = dense::generalized(h.as_ref(), g.as_ref())?;
    Ok((e, &x * &y))
}

struct Slice<'a> {
    system: &'a FemSystem,
    symbolic: factor::Symbolic,
    steps: usize,
    tol: f64,
}

impl Slice<'_> {
    fn factor_at(&self, sigma: f64, meta: &mut SolverMeta) -> Result<factor::Ldlt<'_>, EigenError> {
        meta.factorizations += 1;
        let values = self.system.stiffness.axpy_values(-sigma, &self.system.mass);
        self.symbolic.factor(&values)
    }


    /// One Lanczos run; returns converged pairs above `lower` and the sorted
    /// energies of all Ritz values above `lower` with their convergence flag.
    fn run(
        &self,
        rng: &mut ChaCha8Rng,
        f: &factor::Ldlt<'_>,
        sigma: f64,
        lower: f64,
        deflate: &[Vec<f64>],
        meta: &mut SolverMeta,
    ) -> (Vec<(f64, Vec<f64>)>, Vec<(f64, bool)>) {
        let start: Vec<f64> = (0..self.system.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kry = lanczos::run(&self.system.mass, f, sigma, self.steps, start, deflate);
        meta.iterations += kry.steps();
        let mut pairs = Vec::new();
        let mut ritz = Vec::new();
        for r in &kry.ritz {
            if r.energy <= lower {
                continue;
            }
            let mut ok = false;
            if r.estimate < 1e2 * self.tol {
                let x = kry.vector(r);
                // the Ritz value is refined by the Rayleigh quotient
                let kx = self.system.stiffness.mul_vec(&x);
                let mx = self.system.mass.mul_vec(&x);
                let e = dot(&x, &kx) / dot(&x, &mx);
                if relative_residual(self.system, e, &x) <= self.tol {
                    ok = true;
                    pairs.push((e, x));
                }
            }
            ritz.push((r.energy, ok));
        }
        ritz.sort_by(|a, b| a.0.total_cmp(&b.0));
        (pairs, ritz)
    }
}

type Pair = (f64, Vec<f64>);

fn sliced(system: &FemSystem, k: usize, opts: &EigenOptions, meta: &mut SolverMeta) -> Result<Vec<Pair>, EigenError> {
    let n = system.dim();
    let symbolic = factor::Symbolic::analyse(&system.stiffness)?;
    let s = Slice {
        system,
        symbolic,
        steps: opts.lanczos_steps.clamp(2, n - 1),
        tol: opts.tol,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    {
        meta.factorizations += 1;
        let fm = s
            .symbolic
            .factor(system.mass.values())
            .map_err(|e| EigenError::IndefiniteMass(e.to_string()))?;
        if fm.negative_pivots() > 0 {
            return Err(EigenError::IndefiniteMass(format!("{} negative pivots", fm.negative_pivots())));
        }
    }

    let max_slices = 20 + k / 4;
    let mut found: Vec<Pair> = Vec::with_capacity(k);
    let mut lower = 0.0f64;
    let mut below = 0usize;
    let mut sigma = 0.0f64;
    while below < k {
        if meta.slices >= max_slices {
            return Err(EigenError::NotConverged { converged: below, requested: k });
        }
        meta.slices += 1;
        let f = s.factor_at(sigma, meta)?;
        if sigma <= 0.0 && f.negative_pivots() > 0 {
            return Err(EigenError::IndefiniteStiffness(format!("{} negative pivots", f.negative_pivots())));
        }
        let (mut window, ritz) = s.run(&mut rng, &f, sigma, lower, &[], meta);

        // contiguous converged run upwards from the shift
        let first_up = ritz.iter().position(|r| r.0 >= sigma).unwrap_or(ritz.len());
        let mut top = None;
        for (i, r) in ritz.iter().enumerate().skip(first_up) {
            if !r.1 {
                break;
            }
            top = Some(i);
        }
        let top = match top.or_else(|| ritz.iter().rposition(|r| r.1)) {
            Some(t) => t,
            None => return Err(EigenError::NotConverged { converged: below, requested: k }),
        };
        let mut upper = match ritz.get(top + 1) {
            Some(next) => 0.5 * (ritz[top].0 + next.0),
            None => ritz[top].0 * (1.0 + 1e-6),
        };
        let mut inside = s.factor_at(upper, meta)?.negative_pivots() - below;

        let count = |w: &[Pair], u: f64| w.iter().filter(|p| p.0 < u).count();
        let mut restarts = 0;
        while count(&window, upper) < inside && restarts < opts.max_restarts {
            restarts += 1;
            meta.restarts += 1;
            let basis: Vec<Vec<f64>> = window.iter().map(|p| p.1.clone()).collect();
            let (more, _) = s.run(&mut rng, &f, sigma, lower, &basis, meta);
            window.extend(more);
        }
        window.sort_by(|a, b| a.0.total_cmp(&b.0));

        let have = count(&window, upper);
        if have > inside {
            return Err(EigenError::InertiaMismatch { lower, upper, expected: inside, found: have });
        }
        if have < inside {
            // shrink the slice to the longest complete prefix
            let (mut lo, mut hi) = (0usize, have);
            let mut best = None;
            while lo < hi {
                let mid = (lo + hi).div_ceil(2);
                let u = if mid < have { 0.5 * (window[mid - 1].0 + window[mid].0) } else { upper };
                let cnt = s.factor_at(u, meta)?.negative_pivots() - below;
                if cnt == mid {
                    best = Some((mid, u, cnt));
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            match best {
                Some((_, u, cnt)) => {
                    upper = u;
                    inside = cnt;
                }
                None => return Err(EigenError::NotConverged { converged: below, requested: k }),
            }
        }
        window.truncate(inside);
        let reach = window.iter().map(|p| p.0 - sigma).fold(0.0f64, f64::max);
        found.extend(window);
        below += inside;
        let span = upper - lower;
        lower = upper;
        sigma = upper + 0.7 * reach.max(0.25 * span);
    }
    found.truncate(k);
    Ok(found)
}

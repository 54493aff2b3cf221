//! Two distinguishable particles in neighbouring rectangular boxes coupled
//! by a Coulomb interaction `k / |r_l - r_r|`.
//!
//! The Hamiltonian is represented in products of the analytic Dirichlet box
//! states, truncated by total energy, and diagonalised densely.

use std::f64::consts::PI;
use std::io::{self, Read, Write};

use faer::{Mat, Side};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DomainSpec, GeometryError};
use crate::quadrature::gauss_legendre_on;

/// Relative agreement required between a Coulomb element and its value on
/// a grid with doubled points per axis.
pub const QUADRATURE_SELF_CONVERGENCE: f64 = 1e-4;

/// Eigenvalues closer than this (relative) are treated as one degenerate
/// group in the diagonal ensemble.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum TwoParticleError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("two-particle problems need a two-box domain")]
    NotTwoBox,
    #[error("energy cutoff {0} admits no product state")]
    EmptyBasis(f64),
    #[error("quadrature with {points} points per axis reaches only {achieved:.2e} relative self-convergence")]
    QuadratureTooCoarse { points: usize, achieved: f64 },
    #[error("initial state {left:?} x {right:?} is not in the retained basis")]
    NotInBasis { left: [u32; 2], right: [u32; 2] },
    #[error("matrix dimension {got} does not match basis size {expected}")]
    Shape { expected: usize, got: usize },
    #[error("requested {requested} eigenstates but only {available} exist")]
    TooManyStates { requested: usize, available: usize },
    #[error("dense eigensolver failed: {0}")]
    Eigen(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub n: [u32; 2],
    pub energy: f64,
}

/// Dirichlet eigenstates of the box `[x0, x0 + lx] x [0, ly]`, ascending in
/// energy, with `energy <= e_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBasis {
    pub lx: f64,
    pub ly: f64,
    pub x0: f64,
    pub modes: Vec<Mode>,
}

pub fn box_energy(lx: f64, ly: f64, n: [u32; 2]) -> f64 {
    let (a, b) = (n[0] as f64, n[1] as f64);
    0.5 * PI * PI * (a * a / (lx * lx) + b * b / (ly * ly))
}

impl BoxBasis {
    pub fn new(lx: f64, ly: f64, x0: f64, e_max: f64) -> Self {
        let nx_max = ((2.0 * e_max).sqrt() * lx / PI).floor() as u32 + 1;
        let ny_max = ((2.0 * e_max).sqrt() * ly / PI).floor() as u32 + 1;
        let mut modes = Vec::new();
        for nx in 1..=nx_max {
            for ny in 1..=ny_max {
                let energy = box_energy(lx, ly, [nx, ny]);
                if energy <= e_max {
                    modes.push(Mode { n: [nx, ny], energy });
                }
            }
        }
        modes.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.n.cmp(&b.n)));
        BoxBasis { lx, ly, x0, modes }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn index_of(&self, n: [u32; 2]) -> Option<usize> {
        self.modes.iter().position(|m| m.n == n)
    }

    /// `φ_m(x, y)`.
    pub fn wavefunction(&self, m: usize, x: f64, y: f64) -> f64 {
        let [nx, ny] = self.modes[m].n;
        2.0 / (self.lx * self.ly).sqrt()
            * (nx as f64 * PI * (x - self.x0) / self.lx).sin()
            * (ny as f64 * PI * y / self.ly).sin()
    }
}

/// Product states `|m> ⊗ |n>` with `ε_m + ε_n <= e_cut`, ascending in
/// energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductBasis {
    pub left: BoxBasis,
    pub right: BoxBasis,
    pub e_cut: f64,
    /// `(left mode, right mode)` indices.
    pub pairs: Vec<(usize, usize)>,
}

impl ProductBasis {
    pub fn new(spec: &DomainSpec, e_cut: f64) -> Result<Self, TwoParticleError> {
        spec.validate()?;
        let DomainSpec::TwoBox { lx_left, lx_right, ly, wall } = *spec else {
            return Err(TwoParticleError::NotTwoBox);
        };
        let left_min = box_energy(lx_left, ly, [1, 1]);
        let right_min = box_energy(lx_right, ly, [1, 1]);
        let left = BoxBasis::new(lx_left, ly, 0.0, e_cut - right_min);
        let right = BoxBasis::new(lx_right, ly, lx_left + wall, e_cut - left_min);
        let mut pairs = Vec::new();
        for (i, a) in left.modes.iter().enumerate() {
            for (j, b) in right.modes.iter().enumerate() {
                if a.energy + b.energy <= e_cut {
                    pairs.push((i, j));
                }
            }
        }
        if pairs.is_empty() {
            return Err(TwoParticleError::EmptyBasis(e_cut));
        }
        let energy = |p: &(usize, usize)| left.modes[p.0].energy + right.modes[p.1].energy;
        pairs.sort_by(|a, b| energy(a).total_cmp(&energy(b)).then(a.cmp(b)));
        Ok(ProductBasis { left, right, e_cut, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn left_energy(&self, pair: usize) -> f64 {
        self.left.modes[self.pairs[pair].0].energy
    }

    pub fn right_energy(&self, pair: usize) -> f64 {
        self.right.modes[self.pairs[pair].1].energy
    }

    pub fn energy(&self, pair: usize) -> f64 {
        self.left_energy(pair) + self.right_energy(pair)
    }

    pub fn index_of(&self, left: [u32; 2], right: [u32; 2]) -> Option<usize> {
        let (l, r) = (self.left.index_of(left)?, self.right.index_of(right)?);
        self.pairs.iter().position(|&p| p == (l, r))
    }
}

/// Tensor Gauss-Legendre grid on one box.
struct BoxGrid {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    /// `sin(nx π (x - x0)/lx)` per quadrature abscissa, indexed `[nx - 1][i]`.
    sin_x: Vec<Vec<f64>>,
    sin_y: Vec<Vec<f64>>,
    points: usize,
}

impl BoxGrid {
    fn new(b: &BoxBasis, points: usize) -> Self {
        let (gx, wx) = gauss_legendre_on(points, b.x0, b.x0 + b.lx);
        let (gy, wy) = gauss_legendre_on(points, 0.0, b.ly);
        let nx_max = b.modes.iter().map(|m| m.n[0]).max().unwrap_or(1) as usize;
        let ny_max = b.modes.iter().map(|m| m.n[1]).max().unwrap_or(1) as usize;
        let sin_x = (1..=nx_max)
            .map(|n| gx.iter().map(|x| (n as f64 * PI * (x - b.x0) / b.lx).sin()).collect())
            .collect();
        let sin_y = (1..=ny_max)
            .map(|n| gy.iter().map(|y| (n as f64 * PI * y / b.ly).sin()).collect())
            .collect();
        let mut x = Vec::with_capacity(points * points);
        let mut y = Vec::with_capacity(points * points);
        let mut w = Vec::with_capacity(points * points);
        for i in 0..points {
            for j in 0..points {
                x.push(gx[i]);
                y.push(gy[j]);
                w.push(wx[i] * wy[j]);
            }
        }
        BoxGrid { x, y, w, sin_x, sin_y, points }
    }

    /// Weighted pair density `w_a φ_m(a) φ_m'(a)` on every grid point.
    fn pair_density(&self, b: &BoxBasis, m: usize, mp: usize, out: &mut [f64]) {
        let norm = 4.0 / (b.lx * b.ly);
        let ([ax, ay], [bx, by]) = (b.modes[m].n, b.modes[mp].n);
        let (sxa, sya) = (&self.sin_x[ax as usize - 1], &self.sin_y[ay as usize - 1]);
        let (sxb, syb) = (&self.sin_x[bx as usize - 1], &self.sin_y[by as usize - 1]);
        let q = self.points;
        for i in 0..q {
            let fx = norm * sxa[i] * sxb[i];
            for j in 0..q {
                let a = i * q + j;
                out[a] = self.w[a] * fx * sya[j] * syb[j];
            }
        }
    }
}

fn kernel(l: &BoxGrid, r: &BoxGrid) -> Mat<f64> {
    Mat::from_fn(l.x.len(), r.x.len(), |a, b| {
        let (dx, dy) = (l.x[a] - r.x[b], l.y[a] - r.y[b]);
        1.0 / (dx * dx + dy * dy).sqrt()
    })
}

/// Unordered pair index for `m <= m'` among `n` modes.
fn pair_index(n: usize, m: usize, mp: usize) -> usize {
    let (a, b) = if m <= mp { (m, mp) } else { (mp, m) };
    a * n - a * (a + 1) / 2 + b
}

/// `<ground, ground| 1/r |ground, ground>` on a grid with `points` per axis.
pub fn ground_coulomb_element(basis: &ProductBasis, points: usize) -> f64 {
    let (l, r) = (BoxGrid::new(&basis.left, points), BoxGrid::new(&basis.right, points));
    let mut dl = vec![0.0; l.w.len()];
    let mut dr = vec![0.0; r.w.len()];
    let (gl, gr) = (basis.left.index_of([1, 1]).unwrap(), basis.right.index_of([1, 1]).unwrap());
    l.pair_density(&basis.left, gl, gl, &mut dl);
    r.pair_density(&basis.right, gr, gr, &mut dr);
    let mut total = 0.0;
    for a in 0..dl.len() {
        let mut row = 0.0;
        for b in 0..dr.len() {
            let (dx, dy) = (l.x[a] - r.x[b], l.y[a] - r.y[b]);
            row += dr[b] / (dx * dx + dy * dy).sqrt();
        }
        total += dl[a] * row;
    }
    total
}

/// Relative change of the ground Coulomb element when the points per axis
/// are doubled.
pub fn quadrature_self_convergence(basis: &ProductBasis, points: usize) -> f64 {
    let a = ground_coulomb_element(basis, points);
    let b = ground_coulomb_element(basis, 2 * points);
    (a - b).abs() / b.abs()
}

/// Dense interaction matrix `V` in the product basis.
///
/// `V = k A G Bᵀ` with left pair densities `A`, right pair densities `B`
/// and the tabulated kernel `G`, evaluated in blocks of left pairs.
pub fn coulomb_matrix(basis: &ProductBasis, strength: f64, points: usize) -> Result<Mat<f64>, TwoParticleError> {
    let d = basis.len();
    let mut v = Mat::<f64>::zeros(d, d);
    if strength == 0.0 {
        return Ok(v);
    }
    let achieved = quadrature_self_convergence(basis, points);
    if !(achieved < QUADRATURE_SELF_CONVERGENCE) {
        return Err(TwoParticleError::QuadratureTooCoarse { points, achieved });
    }

    let (nl, nr) = (basis.left.len(), basis.right.len());
    let gl = BoxGrid::new(&basis.left, points);
    let gr = BoxGrid::new(&basis.right, points);
    let g = kernel(&gl, &gr);
    let (ql, qr) = (gl.w.len(), gr.w.len());

    let n_right_pairs = nr * (nr + 1) / 2;
    let mut b = Mat::<f64>::zeros(qr, n_right_pairs);
    let mut buf = vec![0.0; qr.max(ql)];
    for n in 0..nr {
        for np in n..nr {
            gr.pair_density(&basis.right, n, np, &mut buf[..qr]);
            let col = pair_index(nr, n, np);
            for (a, val) in buf[..qr].iter().enumerate() {
                b[(a, col)] = *val;
            }
        }
    }

    // product-state rows grouped by left mode
    let mut rows_by_left: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nl];
    for (i, &(m, n)) in basis.pairs.iter().enumerate() {
        rows_by_left[m].push((i, n));
    }
    let left_pairs: Vec<(usize, usize)> =
        (0..nl).flat_map(|m| (m..nl).map(move |mp| (m, mp))).filter(|&(m, mp)| {
            !rows_by_left[m].is_empty() && !rows_by_left[mp].is_empty()
        }).collect();

    const CHUNK: usize = 256;
    for chunk in left_pairs.chunks(CHUNK) {
        let mut a = Mat::<f64>::zeros(chunk.len(), ql);
        for (row, &(m, mp)) in chunk.iter().enumerate() {
            gl.pair_density(&basis.left, m, mp, &mut buf[..ql]);
            for (c, val) in buf[..ql].iter().enumerate() {
                a[(row, c)] = *val;
            }
        }
        let ag = &a * &g;
        let block = &ag * &b;
        for (row, &(m, mp)) in chunk.iter().enumerate() {
            for &(i, n) in &rows_by_left[m] {
                for &(j, np) in &rows_by_left[mp] {
                    let val = strength * block[(row, pair_index(nr, n, np))];
                    v[(i, j)] = val;
                    v[(j, i)] = val;
                }
            }
        }
    }
    Ok(v)
}

/// `H = diag(ε_m + ε_n) + V`, built in place.
pub fn assemble_h2p(basis: &ProductBasis, v: Mat<f64>) -> Result<Mat<f64>, TwoParticleError> {
    let d = basis.len();
    if v.nrows() != d || v.ncols() != d {
        return Err(TwoParticleError::Shape { expected: d, got: v.nrows() });
    }
    let mut h = v;
    for i in 0..d {
        h[(i, i)] += basis.energy(i);
    }
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct CoupledSpectrum {
    pub basis: ProductBasis,
    pub strength: f64,
    pub energies: Vec<f64>,
    /// `vectors[(pair, j)] = <ε_m, ε_n | E_j>`.
    pub vectors: Mat<f64>,
    pub hamiltonian: Mat<f64>,
}

pub fn diagonalize_h2p(basis: ProductBasis, strength: f64, h: Mat<f64>) -> Result<CoupledSpectrum, TwoParticleError> {
    let d = basis.len();
    if h.nrows() != d || h.ncols() != d {
        return Err(TwoParticleError::Shape { expected: d, got: h.nrows() });
    }
    let diagonal = (0..d).all(|j| (0..d).all(|i| i == j || h[(i, j)] == 0.0));
    let (energies, vectors) = if diagonal {
        // exact: eigenvectors are the product states themselves
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| h[(a, a)].total_cmp(&h[(b, b)]).then(a.cmp(&b)));
        let energies = order.iter().map(|&i| h[(i, i)]).collect();
        let vectors = Mat::from_fn(d, d, |i, j| if order[j] == i { 1.0 } else { 0.0 });
        (energies, vectors)
    } else {
        let eig = h.self_adjoint_eigen(Side::Lower).map_err(|e| TwoParticleError::Eigen(format!("{e:?}")))?;
        let energies = eig.S().column_vector().iter().copied().collect();
        let mut vectors = eig.U().to_owned();
        for j in 0..d {
            // deterministic sign: largest component positive
            let mut best = 0.0f64;
            for i in 0..d {
                if vectors[(i, j)].abs() > best.abs() {
                    best = vectors[(i, j)];
                }
            }
            if best < 0.0 {
                for i in 0..d {
                    vectors[(i, j)] = -vectors[(i, j)];
                }
            }
        }
        (energies, vectors)
    };
    Ok(CoupledSpectrum { basis, strength, energies, vectors, hamiltonian: h })
}

/// Basis, interaction, assembly and diagonalisation in one call.
pub fn coupled_spectrum(
    spec: &DomainSpec,
    e_cut: f64,
    strength: f64,
    points: usize,
) -> Result<CoupledSpectrum, TwoParticleError> {
    let basis = ProductBasis::new(spec, e_cut)?;
    let v = coulomb_matrix(&basis, strength, points)?;
    let h = assemble_h2p(&basis, v)?;
    diagonalize_h2p(basis, strength, h)
}

const CACHE_MAGIC: &[u8; 8] = b"H2PSPEC1";

fn write_f64s<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_matrix<R: Read>(r: &mut R, d: usize) -> io::Result<Mat<f64>> {
    let mut m = Mat::<f64>::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            m[(i, j)] = read_f64(r)?;
        }
    }
    Ok(m)
}

impl CoupledSpectrum {
    /// Little-endian binary image: magic, dimension, strength, energies,
    /// then eigenvectors and Hamiltonian in column-major order.
    pub fn write_cache<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.dim();
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(d as u64).to_le_bytes())?;
        write_f64s(&mut w, std::iter::once(self.strength))?;
        write_f64s(&mut w, self.energies.iter().copied())?;
        for m in [&self.vectors, &self.hamiltonian] {
            for j in 0..d {
                write_f64s(&mut w, m.col(j).iter().copied())?;
            }
        }
        w.flush()
    }

    /// Inverse of [`CoupledSpectrum::write_cache`] for a known basis.
    pub fn read_cache<R: Read>(mut r: R, basis: ProductBasis) -> io::Result<Self> {
        let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(invalid("not a two-particle spectrum cache".into()));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let d = u64::from_le_bytes(b) as usize;
        if d != basis.len() {
            return Err(invalid(format!("cache holds dimension {d}, basis has {}", basis.len())));
        }
        let strength = read_f64(&mut r)?;
        let energies = (0..d).map(|_| read_f64(&mut r)).collect::<io::Result<Vec<f64>>>()?;
        let vectors = read_matrix(&mut r, d)?;
        let hamiltonian = read_matrix(&mut r, d)?;
        Ok(CoupledSpectrum { basis, strength, energies, vectors, hamiltonian })
    }
}

/// Infinite-time averages for one initial product state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalEnsemble {
    pub initial: ([u32; 2], [u32; 2]),
    pub eps_left: f64,
    pub eps_right: f64,
    /// `|<Ψ0|E_j>|²` per coupled eigenstate.
    pub overlaps: Vec<f64>,
    /// `1 - Σ_j |<Ψ0|E_j>|²`.
    pub leak: f64,
    /// Time-averaged reduced populations on the uncoupled box states.
    pub populations_left: Vec<f64>,
    pub populations_right: Vec<f64>,
    pub mean_left: f64,
    pub mean_right: f64,
}

impl DiagonalEnsemble {
    /// Net energy given up by the left particle, `ε_l - Ē_l`.
    pub fn heat(&self) -> f64 {
        self.eps_left - self.mean_left
    }

    /// Net energy taken up by the right particle, `Ē_r - ε_r`.
    pub fn heat_right(&self) -> f64 {
        self.mean_right - self.eps_right
    }
}

fn degenerate_groups(energies: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=energies.len() {
        if i == energies.len() || (energies[i] - energies[i - 1]).abs() > DEGENERACY_TOL * energies[i].abs().max(1.0) {
            out.push(start..i);
            start = i;
        }
    }
    out
}

impl CoupledSpectrum {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    fn initial_index(&self, left: [u32; 2], right: [u32; 2]) -> Result<usize, TwoParticleError> {
        self.basis.index_of(left, right).ok_or(TwoParticleError::NotInBasis { left, right })
    }

    /// `<E_j| h_l |E_j>` and `<E_j| h_r |E_j>` for every eigenstate.
    pub fn local_energies(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut el = vec![0.0; d];
        let mut er = vec![0.0; d];
        for j in 0..d {
            for i in 0..d {
                let c2 = self.vectors[(i, j)].powi(2);
                el[j] += c2 * self.basis.left_energy(i);
                er[j] += c2 * self.basis.right_energy(i);
            }
        }
        (el, er)
    }

    pub fn diagonal_ensemble(&self, left: [u32; 2], right: [u32; 2]) -> Result<DiagonalEnsemble, TwoParticleError> {
        let p0 = self.initial_index(left, right)?;
        let d = self.dim();
        let c: Vec<f64> = (0..d).map(|j| self.vectors[(p0, j)]).collect();
        let overlaps: Vec<f64> = c.iter().map(|v| v * v).collect();
        let mut pl = vec![0.0; self.basis.left.len()];
        let mut pr = vec![0.0; self.basis.right.len()];
        let mut u = vec![0.0; d];
        for g in degenerate_groups(&self.energies) {
            u.iter_mut().for_each(|v| *v = 0.0);
            for j in g {
                if c[j] == 0.0 {
                    continue;
                }
                for (i, ui) in u.iter_mut().enumerate() {
                    *ui += c[j] * self.vectors[(i, j)];
                }
            }
            for (i, &(m, n)) in self.basis.pairs.iter().enumerate() {
                let w = u[i] * u[i];
                pl[m] += w;
                pr[n] += w;
            }
        }
        let mean_left = pl.iter().zip(&self.basis.left.modes).map(|(p, m)| p * m.energy).sum();
        let mean_right = pr.iter().zip(&self.basis.right.modes).map(|(p, m)| p * m.energy).sum();
        Ok(DiagonalEnsemble {
            initial: (left, right),
            eps_left: self.basis.left_energy(p0),
            eps_right: self.basis.right_energy(p0),
            leak: 1.0 - overlaps.iter().sum::<f64>(),
            overlaps,
            populations_left: pl,
            populations_right: pr,
            mean_left,
            mean_right,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuenchResult {
    pub ensemble: DiagonalEnsemble,
    pub times: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub interaction: Vec<f64>,
    /// `ε_l + ε_r + <V>(0)`.
    pub e_total: f64,
}

impl QuenchResult {
    pub fn total(&self, i: usize) -> f64 {
        self.left[i] + self.right[i] + self.interaction[i]
    }

    /// `max_t |E(t) - E_tot| / |E_tot|`.
    pub fn conservation_error(&self) -> f64 {
        (0..self.times.len()).map(|i| (self.total(i) - self.e_total).abs()).fold(0.0, f64::max) / self.e_total.abs()
    }

    /// Mean and half peak-to-peak of `<E_l(t)>` over `t >= t0`.
    pub fn left_window(&self, t0: f64) -> (f64, f64) {
        let w: Vec<f64> = self.times.iter().zip(&self.left).filter(|(t, _)| **t >= t0).map(|(_, e)| *e).collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        (mean, 0.5 * (hi - lo))
    }

    /// Standard deviation of `<V_int(t)>` over the whole grid.
    pub fn interaction_std(&self) -> f64 {
        let n = self.interaction.len() as f64;
        let mean = self.interaction.iter().sum::<f64>() / n;
        (self.interaction.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// `quench_<m0>_<n0>.csv` body: `t,E_left,E_right,V_int,E_total`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,E_left,E_right,V_int,E_total")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.6e},{:.12e},{:.12e},{:.12e},{:.12e}",
                self.times[i],
                self.left[i],
                self.right[i],
                self.interaction[i],
                self.total(i)
            )?;
        }
        Ok(())
    }
}

/// Uniform grid of `count` points on `[0, t_max]`.
pub fn time_grid(t_max: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count).map(|i| t_max * i as f64 / (count - 1) as f64).collect()
}

/// Evolve the product state `left ⊗ right` under the coupled Hamiltonian.
pub fn quench(spec: &CoupledSpectrum, left: [u32; 2], right: [u32; 2], times: &[f64]) -> Result<QuenchResult, TwoParticleError> {
    let ensemble = spec.diagonal_ensemble(left, right)?;
    let p0 = spec.initial_index(left, right)?;
    let d = spec.dim();
    let nt = times.len();
    let c: Vec<f64> = (0..d).map(|j| spec.vectors[(p0, j)]).collect();

    // ψ(t) = C (c ∘ e^{-iEt}), split into real and imaginary parts
    let phases_re = Mat::<f64>::from_fn(d, nt, |j, t| c[j] * (spec.energies[j] * times[t]).cos());
    let phases_im = Mat::<f64>::from_fn(d, nt, |j, t| -c[j] * (spec.energies[j] * times[t]).sin());
    let psi_re = &spec.vectors * &phases_re;
    let psi_im = &spec.vectors * &phases_im;
    let h_re = &spec.hamiltonian * &psi_re;
    let h_im = &spec.hamiltonian * &psi_im;

    let mut el = vec![0.0; nt];
    let mut er = vec![0.0; nt];
    let mut vi = vec![0.0; nt];
    for t in 0..nt {
        let (mut a, mut b, mut h) = (0.0, 0.0, 0.0);
        for i in 0..d {
            let p = psi_re[(i, t)].powi(2) + psi_im[(i, t)].powi(2);
            a += p * spec.basis.left_energy(i);
            b += p * spec.basis.right_energy(i);
            h += psi_re[(i, t)] * h_re[(i, t)] + psi_im[(i, t)] * h_im[(i, t)];
        }
        el[t] = a;
        er[t] = b;
        vi[t] = h - a - b;
    }
    let v0 = spec.hamiltonian[(p0, p0)] - spec.basis.energy(p0);
    let e_total = ensemble.eps_left + ensemble.eps_right + v0;
    Ok(QuenchResult { ensemble, times: times.to_vec(), left: el, right: er, interaction: vi, e_total })
}

/// Fraction of the one-sided power spectrum of the mean-subtracted series
/// carried by its `top` strongest frequency bins.
pub fn power_concentration(series: &[f64], top: usize) -> f64 {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut power: Vec<f64> = buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if total == 0.0 {
        return 1.0;
    }
    power.sort_by(|a, b| b.total_cmp(a));
    power.iter().take(top).sum::<f64>() / total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceRatio {
    /// 1-based eigenstate number.
    pub j: usize,
    pub energy: f64,
    pub e_left: f64,
    pub e_right: f64,
    pub ln_ratio: f64,
}

/// `ln(<E_j|h_l|E_j> / <E_j|h_r|E_j>)` for the lowest `count` eigenstates.
pub fn energy_balance_ratios(spec: &CoupledSpectrum, count: usize) -> Result<Vec<BalanceRatio>, TwoParticleError> {
    if count > spec.dim() {
        return Err(TwoParticleError::TooManyStates { requested: count, available: spec.dim() });
    }
    let (el, er) = spec.local_energies();
    Ok((0..count)
        .map(|j| BalanceRatio { j: j + 1, energy: spec.energies[j], e_left: el[j], e_right: er[j], ln_ratio: (el[j] / er[j]).ln() })
        .collect())
}

/// `balance_ratios.csv` body: `j,E_j,ln_ratio,overlap_with_initial`.
pub fn write_balance_csv<W: Write>(mut w: W, ratios: &[BalanceRatio], overlaps: &[f64]) -> io::Result<()> {
    writeln!(w, "j,E_j,ln_ratio,overlap_with_initial")?;
    for r in ratios {
        writeln!(w, "{},{:.12e},{:.12e},{:.6e}", r.j, r.energy, r.ln_ratio, overlaps[r.j - 1])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chamber() -> DomainSpec {
        DomainSpec::TwoBox { lx_left: 1.1, lx_right: 1.3, ly: 1.4, wall: 0.001 }
    }

    #[test]
    fn ground_pair_energy() {
        let b = ProductBasis::new(&chamber(), 60.0).unwrap();
        assert_eq!(b.pairs[0], (0, 0));
        let e = b.energy(0);
        let exact = 0.5 * PI * PI * (1.0 / 1.21 + 1.0 / 1.96 + 1.0 / 1.69 + 1.0 / 1.96);
        assert!((e - exact).abs() < 1e-12);
        assert!((e - 12.034).abs() < 1e-3, "{e}");
    }

    #[test]
    fn basis_is_closed_under_cutoff() {
        let b = ProductBasis::new(&chamber(), 120.0).unwrap();
        let kept_max = (0..b.len()).map(|i| b.energy(i)).fold(0.0, f64::max);
        assert!(kept_max <= 120.0);
        assert!(b.pairs.windows(2).all(|w| {
            let e = |p: (usize, usize)| b.left.modes[p.0].energy + b.right.modes[p.1].energy;
            e(w[0]) <= e(w[1])
        }));
        let count = b.left.modes.iter().flat_map(|l| b.right.modes.iter().map(move |r| l.energy + r.energy)).filter(|&e| e <= 120.0).count();
        assert_eq!(count, b.len());
    }

    #[test]
    fn modes_are_orthonormal_under_quadrature() {
        let b = BoxBasis::new(1.1, 1.4, 0.0, 80.0);
        let (x, wx) = gauss_legendre_on(40, 0.0, 1.1);
        let (y, wy) = gauss_legendre_on(40, 0.0, 1.4);
        for m in 0..b.len() {
            for mp in 0..b.len() {
                let mut s = 0.0;
                for i in 0..40 {
                    for j in 0..40 {
                        s += wx[i] * wy[j] * b.wavefunction(m, x[i], y[j]) * b.wavefunction(mp, x[i], y[j]);
                    }
                }
                let target = if m == mp { 1.0 } else { 0.0 };
                assert!((s - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pair_indices_are_dense() {
        let n = 7;
        let mut seen = vec![false; n * (n + 1) / 2];
        for m in 0..n {
            for mp in m..n {
                let k = pair_index(n, m, mp);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(k, pair_index(n, mp, m));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn zero_coupling_gives_zero_interaction() {
        let b = ProductBasis::new(&chamber(), 60.0).unwrap();
        let v = coulomb_matrix(&b, 0.0, 40).unwrap();
        assert!(v.col_iter().all(|c| c.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn attractive_diagonal_is_negative_and_symmetric() {
        let b = ProductBasis::new(&chamber(), 60.0).unwrap();
        let v = coulomb_matrix(&b, -50.0, 40).unwrap();
        let d = b.len();
        for i in 0..d {
            assert!(v[(i, i)] < 0.0);
            for j in 0..d {
                assert_eq!(v[(i, j)], v[(j, i)]);
            }
        }
    }

    #[test]
    fn separable_contraction_matches_direct_sum() {
        let b = ProductBasis::new(&chamber(), 45.0).unwrap();
        let v = coulomb_matrix(&b, 1.0, 40).unwrap();
        // direct 4D sum for one off-diagonal element on the same grid
        let (i, j) = (1, b.len() - 1);
        let (m, n) = b.pairs[i];
        let (mp, np) = b.pairs[j];
        let (xl, wxl) = gauss_legendre_on(40, 0.0, 1.1);
        let (yl, wyl) = gauss_legendre_on(40, 0.0, 1.4);
        let (xr, wxr) = gauss_legendre_on(40, 1.101, 2.401);
        let mut rho_r = Vec::new();
        for a in 0..40 {
            for c in 0..40 {
                rho_r.push((xr[a], yl[c], wxr[a] * wyl[c] * b.right.wavefunction(n, xr[a], yl[c]) * b.right.wavefunction(np, xr[a], yl[c])));
            }
        }
        let mut s = 0.0;
        for a in 0..40 {
            for c in 0..40 {
                let w = wxl[a] * wyl[c] * b.left.wavefunction(m, xl[a], yl[c]) * b.left.wavefunction(mp, xl[a], yl[c]);
                for &(x2, y2, w2) in &rho_r {
                    s += w * w2 / ((xl[a] - x2).powi(2) + (yl[c] - y2).powi(2)).sqrt();
                }
            }
        }
        assert!((v[(i, j)] - s).abs() < 1e-10 * s.abs().max(1e-3), "{} vs {}", v[(i, j)], s);
    }

    #[test]
    fn ground_element_self_converges() {
        let b = ProductBasis::new(&chamber(), 30.0).unwrap();
        assert!(quadrature_self_convergence(&b, 40) < QUADRATURE_SELF_CONVERGENCE);
        assert!(matches!(coulomb_matrix(&b, -50.0, 2), Err(TwoParticleError::QuadratureTooCoarse { .. })));
    }

    #[test]
    fn uncoupled_spectrum_is_exact() {
        let b = ProductBasis::new(&chamber(), 80.0).unwrap();
        let v = coulomb_matrix(&b, 0.0, 40).unwrap();
        let h = assemble_h2p(&b, v).unwrap();
        let s = diagonalize_h2p(b.clone(), 0.0, h).unwrap();
        let mut sums: Vec<f64> = (0..b.len()).map(|i| b.energy(i)).collect();
        sums.sort_by(f64::total_cmp);
        assert_eq!(s.energies, sums);
        let r = energy_balance_ratios(&s, b.len()).unwrap();
        for (j, x) in r.iter().enumerate() {
            let i = (0..b.len()).find(|&i| s.vectors[(i, j)] == 1.0).unwrap();
            assert_eq!(x.ln_ratio, (b.left_energy(i) / b.right_energy(i)).ln());
        }
    }

    #[test]
    fn coupled_spectrum_properties() {
        let s = coupled_spectrum(&chamber(), 80.0, -50.0, 40).unwrap();
        let d = s.dim();
        let trace: f64 = (0..d).map(|i| s.hamiltonian[(i, i)]).sum();
        assert!((s.energies.iter().sum::<f64>() - trace).abs() < 1e-9 * trace.abs());
        assert!(s.energies[0] < s.basis.energy(0));
        let g = s.vectors.transpose() * &s.vectors;
        for i in 0..d {
            for j in 0..d {
                assert!((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uncoupled_quench_is_stationary() {
        let s = coupled_spectrum(&chamber(), 80.0, 0.0, 40).unwrap();
        let q = quench(&s, [2, 1], [1, 1], &time_grid(20.0, 50)).unwrap();
        let eps = box_energy(1.1, 1.4, [2, 1]);
        assert!(q.left.iter().all(|&e| (e - eps).abs() < 1e-12 * eps));
        assert_eq!(q.ensemble.heat(), 0.0);
        assert!(q.interaction.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn coupled_quench_conserves_energy() {
        let s = coupled_spectrum(&chamber(), 80.0, -50.0, 40).unwrap();
        let q = quench(&s, [2, 1], [1, 1], &time_grid(50.0, 400)).unwrap();
        assert!(q.conservation_error() < 1e-10, "{}", q.conservation_error());
        let e = &q.ensemble;
        assert!(e.leak.abs() < 1e-10);
        let sl: f64 = e.populations_left.iter().sum();
        let sr: f64 = e.populations_right.iter().sum();
        assert!((sl - 1.0).abs() < 1e-10 && (sr - 1.0).abs() < 1e-10);
        assert!(e.populations_left.iter().chain(&e.populations_right).all(|&p| p >= 0.0));
    }

    #[test]
    fn long_time_average_approaches_diagonal_ensemble() {
        let s = coupled_spectrum(&chamber(), 80.0, -50.0, 40).unwrap();
        let q = quench(&s, [2, 1], [1, 1], &time_grid(100.0, 1000)).unwrap();
        let (mean, amplitude) = q.left_window(50.0);
        assert!((mean - q.ensemble.mean_left).abs() < amplitude, "{mean} vs {} (amplitude {amplitude})", q.ensemble.mean_left);
        let right: Vec<f64> = q.times.iter().zip(&q.right).filter(|(t, _)| **t >= 50.0).map(|(_, e)| *e).collect();
        let mean_r = right.iter().sum::<f64>() / right.len() as f64;
        let amp_r = 0.5 * (right.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - right.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!((mean_r - q.ensemble.mean_right).abs() < amp_r);
    }

    #[test]
    fn cache_round_trip() {
        let s = coupled_spectrum(&chamber(), 50.0, -50.0, 40).unwrap();
        let mut buf = Vec::new();
        s.write_cache(&mut buf).unwrap();
        let t = CoupledSpectrum::read_cache(buf.as_slice(), s.basis.clone()).unwrap();
        assert_eq!(t.energies, s.energies);
        assert_eq!(t.vectors, s.vectors);
        assert_eq!(t.hamiltonian, s.hamiltonian);
        assert_eq!(t.strength, s.strength);
        let other = ProductBasis::new(&chamber(), 60.0).unwrap();
        assert!(CoupledSpectrum::read_cache(buf.as_slice(), other).is_err());
        assert!(CoupledSpectrum::read_cache(&buf[..20], s.basis.clone()).is_err());
    }

    #[test]
    fn power_concentration_of_pure_tones() {
        let t = time_grid(100.0, 2000);
        let tone: Vec<f64> = t.iter().map(|&t| 3.0 + (2.0 * PI * 0.2 * t).sin()).collect();
        assert!(power_concentration(&tone, 5) > 0.95);
        let mut x = 1u64;
        let noise: Vec<f64> = (0..2000)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        assert!(power_concentration(&noise, 5) < 0.1);
    }

    #[test]
    fn missing_initial_state_is_an_error() {
        let s = coupled_spectrum(&chamber(), 40.0, 0.0, 40).unwrap();
        assert!(matches!(quench(&s, [9, 9], [1, 1], &[0.0]), Err(TwoParticleError::NotInBasis { .. })));
    }

    #[test]
    fn rejects_non_two_box_domains() {
        assert_eq!(ProductBasis::new(&DomainSpec::rectangle(1.0, 1.0), 50.0).unwrap_err(), TwoParticleError::NotTwoBox);
    }

    #[test]
    fn balance_csv_layout() {
        let s = coupled_spectrum(&chamber(), 50.0, -50.0, 40).unwrap();
        let r = energy_balance_ratios(&s, 5).unwrap();
        let e = s.diagonal_ensemble([1, 1], [1, 1]).unwrap();
        let mut buf = Vec::new();
        write_balance_csv(&mut buf, &r, &e.overlaps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("j,E_j,ln_ratio,overlap_with_initial\n1,"));
        assert_eq!(text.lines().count(), 6);
    }
}

//! Finite-element discretisation of `H = -Δ/2` with Dirichlet walls.
//!
//! The generalized problem `K x = E M x` yields energies directly: the
//! factor 1/2 of the kinetic operator lives inside the stiffness matrix.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Mesh;

#[derive(Debug, Error, PartialEq)]
pub enum FemError {
    #[error("triangle {index} is degenerate (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("unsupported element order {0} (expected 1 or 2)")]
    UnsupportedOrder(u8),
    #[error("mesh has no interior degrees of freedom")]
    NoInteriorDofs,
}

/// Lagrange element order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ElementOrder {
    Linear,
    Quadratic,
}

impl ElementOrder {
    fn nodes(self) -> usize {
        match self {
            ElementOrder::Linear => 3,
            ElementOrder::Quadratic => 6,
        }
    }
}

impl TryFrom<u8> for ElementOrder {
    type Error = FemError;

    fn try_from(v: u8) -> Result<Self, FemError> {
        match v {
            1 => Ok(ElementOrder::Linear),
            2 => Ok(ElementOrder::Quadratic),
            o => Err(FemError::UnsupportedOrder(o)),
        }
    }
}

impl From<ElementOrder> for u8 {
    fn from(o: ElementOrder) -> u8 {
        match o {
            ElementOrder::Linear => 1,
            ElementOrder::Quadratic => 2,
        }
    }
}

impl std::fmt::Display for ElementOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Symmetric sparse matrix stored as the upper triangle in CSR form.
///
/// Row `i` holds columns `j >= i` in increasing order. Read as CSC the same
/// arrays describe the lower triangle, which is what the factorisation
/// consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Assemble from `(row, col, value)` triplets with `row <= col`.
    /// Duplicates are summed.
    pub fn from_upper_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len() / 2);
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len() / 2);
        let mut last = None;
        for (r, c, v) in triplets {
            debug_assert!(r <= c && c < dim);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSymMatrix { dim, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz_upper(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.dim == other.dim && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// Iterate stored `(row, col, value)` entries, `row <= col`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (r, c) = if row <= col { (row, col) } else { (col, row) };
        let cols = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match cols.binary_search(&c) {
            Ok(k) => self.values[self.row_ptr[r] + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.fill(0.0);
        for r in 0..self.dim {
            let xr = x[r];
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let v = self.values[k];
                acc += v * x[c];
                if c != r {
                    y[c] += v * xr;
                }
            }
            y[r] += acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Values of `self + alpha * other` on the shared pattern.
    pub fn axpy_values(&self, alpha: f64, other: &Self) -> Vec<f64> {
        assert!(self.same_pattern(other), "matrices must share a sparsity pattern");
        self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dim]; self.dim];
        for (r, c, v) in self.entries() {
            d[r][c] = v;
            d[c][r] = v;
        }
        d
    }

    /// Coordinate text export, one `row col value` line per stored upper
    /// entry, 0-based, 17 significant digits.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (r, c, v) in self.entries() {
            writeln!(w, "{r} {c} {v:.16e}")?;
        }
        Ok(())
    }
}

/// Assembled discretisation of a mesh.
#[derive(Clone, Debug)]
pub struct FemSystem {
    pub order: ElementOrder,
    /// `K_ij = 1/2 ∫ ∇φ_i·∇φ_j`.
    pub stiffness: SparseSymMatrix,
    /// `M_ij = ∫ φ_i φ_j`.
    pub mass: SparseSymMatrix,
    /// Interior dof index for every node (vertices first, then edge
    /// midpoints for quadratic elements); `None` on the Dirichlet boundary.
    pub node_dof: Vec<Option<usize>>,
    /// Coordinates of each interior dof.
    pub dof_coords: Vec<[f64; 2]>,
}

impl FemSystem {
    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }
}

/// Barycentric quadrature rule on a triangle; weights sum to 1.
struct TriangleRule {
    points: &'static [[f64; 3]],
    weights: &'static [f64],
}

const DEG2_POINTS: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];
const DEG2_WEIGHTS: [f64; 3] = [1.0 / 3.0; 3];

// Six-point symmetric rule, exact for polynomials of degree 4.
const DEG4_A: f64 = 0.445_948_490_915_965;
const DEG4_B: f64 = 0.091_576_213_509_771;
const DEG4_WA: f64 = 0.223_381_589_678_011;
const DEG4_WB: f64 = 0.109_951_743_655_322;
const DEG4_POINTS: [[f64; 3]; 6] = [
    [1.0 - 2.0 * DEG4_A, DEG4_A, DEG4_A],
    [DEG4_A, 1.0 - 2.0 * DEG4_A, DEG4_A],
    [DEG4_A, DEG4_A, 1.0 - 2.0 * DEG4_A],
    [1.0 - 2.0 * DEG4_B, DEG4_B, DEG4_B],
    [DEG4_B, 1.0 - 2.0 * DEG4_B, DEG4_B],
    [DEG4_B, DEG4_B, 1.0 - 2.0 * DEG4_B],
];
const DEG4_WEIGHTS: [f64; 6] = [DEG4_WA, DEG4_WA, DEG4_WA, DEG4_WB, DEG4_WB, DEG4_WB];

fn rule_for(order: ElementOrder) -> TriangleRule {
    match order {
        ElementOrder::Linear => TriangleRule { points: &DEG2_POINTS, weights: &DEG2_WEIGHTS },
        ElementOrder::Quadratic => TriangleRule { points: &DEG4_POINTS, weights: &DEG4_WEIGHTS },
    }
}

/// Shape values and barycentric-gradient coefficients at a point.
///
/// `grad[i] = Σ_k dphi[i][k] ∇λ_k`. Quadratic node order: vertices 0..3,
/// then midpoints of edges (0,1), (1,2), (2,0).
fn shape(order: ElementOrder, l: [f64; 3]) -> ([f64; 6], [[f64; 3]; 6]) {
    let mut phi = [0.0; 6];
    let mut dphi = [[0.0; 3]; 6];
    match order {
        ElementOrder::Linear => {
            for i in 0..3 {
                phi[i] = l[i];
                dphi[i][i] = 1.0;
            }
        }
        ElementOrder::Quadratic => {
            for i in 0..3 {
                phi[i] = l[i] * (2.0 * l[i] - 1.0);
                dphi[i][i] = 4.0 * l[i] - 1.0;
            }
            for (e, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                phi[3 + e] = 4.0 * l[a] * l[b];
                dphi[3 + e][a] = 4.0 * l[b];
                dphi[3 + e][b] = 4.0 * l[a];
            }
        }
    }
    (phi, dphi)
}

/// Element stiffness and mass matrices of one triangle.
pub fn element_matrices(
    order: ElementOrder,
    p: [[f64; 2]; 3],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), FemError> {
    let area = crate::geometry::signed_area(p[0], p[1], p[2]);
    if !(area > 0.0) {
        return Err(FemError::DegenerateTriangle { index: 0, area });
    }
    // ∇λ_k = rot90(p_{k+2} - p_{k+1}) / (2A)
    let mut gl = [[0.0; 2]; 3];
    for k in 0..3 {
        let a = p[(k + 1) % 3];
        let b = p[(k + 2) % 3];
        gl[k] = [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)];
    }
    let n = order.nodes();
    let mut ke = vec![vec![0.0; n]; n];
    let mut me = vec![vec![0.0; n]; n];
    let rule = rule_for(order);
    for (l, &w) in rule.points.iter().zip(rule.weights) {
        let (phi, dphi) = shape(order, *l);
        let grads: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let mut g = [0.0; 2];
                for k in 0..3 {
                    g[0] += dphi[i][k] * gl[k][0];
                    g[1] += dphi[i][k] * gl[k][1];
                }
                g
            })
            .collect();
        let wa = w * area;
        for i in 0..n {
            for j in 0..n {
                ke[i][j] += 0.5 * wa * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                me[i][j] += wa * phi[i] * phi[j];
            }
        }
    }
    Ok((ke, me))
}

/// Assemble stiffness and mass with Dirichlet rows and columns eliminated.
pub fn assemble(mesh: &Mesh, order: ElementOrder) -> Result<FemSystem, FemError> {
    // global nodes: vertices, then unique edges for quadratic elements
    let mut node_coords: Vec<[f64; 2]> = mesh.vertices.clone();
    let mut node_on_boundary: Vec<bool> = mesh.boundary.clone();
    let mut element_nodes: Vec<[usize; 6]> = Vec::with_capacity(mesh.triangles.len());

    match order {
        ElementOrder::Linear => {
            for t in &mesh.triangles {
                element_nodes.push([t[0], t[1], t[2], 0, 0, 0]);
            }
        }
        ElementOrder::Quadratic => {
            let mut edges: Vec<([usize; 2], usize, usize)> = Vec::with_capacity(3 * mesh.triangles.len());
            for (ti, t) in mesh.triangles.iter().enumerate() {
                for (e, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                    let (u, v) = (t[a].min(t[b]), t[a].max(t[b]));
                    edges.push(([u, v], ti, e));
                }
            }
            edges.sort_unstable();
            element_nodes = mesh.triangles.iter().map(|t| [t[0], t[1], t[2], 0, 0, 0]).collect();
            let mut i = 0;
            while i < edges.len() {
                let mut j = i + 1;
                while j < edges.len() && edges[j].0 == edges[i].0 {
                    j += 1;
                }
                let [u, v] = edges[i].0;
                let node = node_coords.len();
                let (pu, pv) = (mesh.vertices[u], mesh.vertices[v]);
                node_coords.push([0.5 * (pu[0] + pv[0]), 0.5 * (pu[1] + pv[1])]);
                // an edge owned by a single triangle lies on the boundary
                node_on_boundary.push(j - i == 1);
                for &(_, ti, e) in &edges[i..j] {
                    element_nodes[ti][3 + e] = node;
                }
                i = j;
            }
        }
    }

    let mut node_dof = vec![None; node_coords.len()];
    let mut dof_coords = Vec::new();
    for (n, slot) in node_dof.iter_mut().enumerate() {
        if !node_on_boundary[n] {
            *slot = Some(dof_coords.len());
            dof_coords.push(node_coords[n]);
        }
    }
    let dim = dof_coords.len();

    let n_loc = order.nodes();
    let mut k_trip = Vec::with_capacity(mesh.triangles.len() * n_loc * (n_loc + 1) / 2);
    let mut m_trip = Vec::with_capacity(k_trip.capacity());
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let p = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
        let (ke, me) = element_matrices(order, p).map_err(|e| match e {
            FemError::DegenerateTriangle { area, .. } => FemError::DegenerateTriangle { index: ti, area },
            other => other,
        })?;
        let nodes = &element_nodes[ti][..n_loc];
        for a in 0..n_loc {
            let Some(ra) = node_dof[nodes[a]] else { continue };
            for b in 0..n_loc {
                let Some(rb) = node_dof[nodes[b]] else { continue };
                if ra <= rb {
                    k_trip.push((ra, rb, ke[a][b]));
                    m_trip.push((ra, rb, me[a][b]));
                }
            }
        }
    }
    if dim == 0 {
        return Err(FemError::NoInteriorDofs);
    }
    Ok(FemSystem {
        order,
        stiffness: SparseSymMatrix::from_upper_triplets(dim, k_trip),
        mass: SparseSymMatrix::from_upper_triplets(dim, m_trip),
        node_dof,
        dof_coords,
    })
}

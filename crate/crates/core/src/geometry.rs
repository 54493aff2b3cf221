//! Billiard domains and their triangulations.
//!
//! Domain families:
//!
//! - `Rectangle`
//! - `SinaiElementary`: rectangle minus a quarter disk at the origin
//! - `TwoBox`: two rectangular boxes separated by a thin wall
//!
//! Meshes are mapped: the vertex topology depends only on a [`MeshLayout`]
//! (integer cell counts) and vertex positions are smooth functions of the
//! domain lengths.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("mesh resolution N = {0} is below the minimum of 4")]
    ResolutionTooLow(usize),
    #[error("mesh layout does not match the domain variant")]
    LayoutMismatch,
    #[error("triangle {index} is degenerate (area {area:e}); geometry too thin for the resolution")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("malformed mesh file: {0}")]
    Parse(String),
}

/// A billiard domain. Lengths are in units of the reference length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Rectangle {
        lx: f64,
        ly: f64,
    },
    /// Rectangle `[0, lx] x [0, ly]` with the quarter disk of `radius`
    /// centred at the origin removed.
    SinaiElementary {
        lx: f64,
        ly: f64,
        radius: f64,
    },
    /// Left box `[0, lx_left] x [0, ly]`, right box starting at
    /// `lx_left + wall`.
    TwoBox {
        lx_left: f64,
        lx_right: f64,
        ly: f64,
        wall: f64,
    },
}

/// Geometric parameter a domain can be deformed along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Lx,
    Ly,
    R,
}

impl Parameter {
    pub fn name(self) -> &'static str {
        match self {
            Parameter::Lx => "Lx",
            Parameter::Ly => "Ly",
            Parameter::R => "R",
        }
    }
}

impl std::str::FromStr for Parameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lx" => Ok(Parameter::Lx),
            "ly" => Ok(Parameter::Ly),
            "r" | "radius" => Ok(Parameter::R),
            other => Err(format!("unknown parameter `{other}` (expected Lx, Ly or R)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DomainArea {
    Single(f64),
    /// Left and right compartment of a two-box chamber.
    Pair(f64, f64),
}

impl DomainArea {
    pub fn total(self) -> f64 {
        match self {
            DomainArea::Single(a) => a,
            DomainArea::Pair(l, r) => l + r,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), GeometryError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidDomain(format!("{name} must be positive and finite, got {v}")))
    }
}

impl DomainSpec {
    pub fn sinai(lx: f64, ly: f64, radius: f64) -> Self {
        DomainSpec::SinaiElementary { lx, ly, radius }
    }

    pub fn rectangle(lx: f64, ly: f64) -> Self {
        DomainSpec::Rectangle { lx, ly }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match *self {
            DomainSpec::Rectangle { lx, ly } => {
                positive("Lx", lx)?;
                positive("Ly", ly)
            }
            DomainSpec::SinaiElementary { lx, ly, radius } => {
                positive("Lx", lx)?;
                positive("Ly", ly)?;
                positive("R", radius)?;
                if radius >= lx.min(ly) {
                    return Err(GeometryError::InvalidDomain(format!(
                        "quarter-circle radius R = {radius} must be smaller than min(Lx, Ly) = {}",
                        lx.min(ly)
                    )));
                }
                Ok(())
            }
            DomainSpec::TwoBox { lx_left, lx_right, ly, wall } => {
                positive("Lx_left", lx_left)?;
                positive("Lx_right", lx_right)?;
                positive("Ly", ly)?;
                positive("wall width b", wall)?;
                if wall >= 0.1 * lx_left.min(lx_right) {
                    return Err(GeometryError::InvalidDomain(format!(
                        "wall width b = {wall} must be much smaller than the box widths"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Value of a deformation parameter, if the variant has it.
    pub fn parameter(&self, p: Parameter) -> Option<f64> {
        match (*self, p) {
            (DomainSpec::Rectangle { lx, .. }, Parameter::Lx)
            | (DomainSpec::SinaiElementary { lx, .. }, Parameter::Lx) => Some(lx),
            (DomainSpec::Rectangle { ly, .. }, Parameter::Ly)
            | (DomainSpec::SinaiElementary { ly, .. }, Parameter::Ly) => Some(ly),
            (DomainSpec::SinaiElementary { radius, .. }, Parameter::R) => Some(radius),
            _ => None,
        }
    }

    /// Copy of the domain with one parameter replaced.
    pub fn with_parameter(&self, p: Parameter, value: f64) -> Option<Self> {
        let mut out = *self;
        match (&mut out, p) {
            (DomainSpec::Rectangle { lx, .. }, Parameter::Lx)
            | (DomainSpec::SinaiElementary { lx, .. }, Parameter::Lx) => *lx = value,
            (DomainSpec::Rectangle { ly, .. }, Parameter::Ly)
            | (DomainSpec::SinaiElementary { ly, .. }, Parameter::Ly) => *ly = value,
            (DomainSpec::SinaiElementary { radius, .. }, Parameter::R) => *radius = value,
            _ => return None,
        }
        Some(out)
    }

    /// Length of the Dirichlet boundary.
    pub fn perimeter(&self) -> f64 {
        match *self {
            DomainSpec::Rectangle { lx, ly } => 2.0 * (lx + ly),
            DomainSpec::SinaiElementary { lx, ly, radius } => {
                lx + ly + (lx - radius) + (ly - radius) + FRAC_PI_2 * radius
            }
            DomainSpec::TwoBox { lx_left, lx_right, ly, .. } => {
                2.0 * (lx_left + ly) + 2.0 * (lx_right + ly)
            }
        }
    }

    /// `dA/dλ` for a single-component domain.
    ///
    /// The straight walls at `x = Lx` and `y = Ly` are full-length segments,
    /// so the derivatives are exact: `Ly`, `Lx` and `-πR/2`.
    pub fn area_derivative(&self, p: Parameter) -> Option<f64> {
        match (*self, p) {
            (DomainSpec::Rectangle { ly, .. }, Parameter::Lx)
            | (DomainSpec::SinaiElementary { ly, .. }, Parameter::Lx) => Some(ly),
            (DomainSpec::Rectangle { lx, .. }, Parameter::Ly)
            | (DomainSpec::SinaiElementary { lx, .. }, Parameter::Ly) => Some(lx),
            (DomainSpec::SinaiElementary { radius, .. }, Parameter::R) => Some(-FRAC_PI_2 * radius),
            _ => None,
        }
    }

    /// `dL/dλ` of the Dirichlet perimeter.
    pub fn perimeter_derivative(&self, p: Parameter) -> Option<f64> {
        match (*self, p) {
            (DomainSpec::Rectangle { .. }, Parameter::Lx | Parameter::Ly)
            | (DomainSpec::SinaiElementary { .. }, Parameter::Lx | Parameter::Ly) => Some(2.0),
            (DomainSpec::SinaiElementary { .. }, Parameter::R) => Some(FRAC_PI_2 - 2.0),
            _ => None,
        }
    }
}

/// Area of a validated domain. Two-box chambers report both compartments;
/// the wall is excluded volume.
pub fn domain_area(spec: &DomainSpec) -> Result<DomainArea, GeometryError> {
    spec.validate()?;
    Ok(match *spec {
        DomainSpec::Rectangle { lx, ly } => DomainArea::Single(lx * ly),
        DomainSpec::SinaiElementary { lx, ly, radius } => {
            DomainArea::Single(lx * ly - PI * radius * radius / 4.0)
        }
        DomainSpec::TwoBox { lx_left, lx_right, ly, .. } => {
            DomainArea::Pair(lx_left * ly, lx_right * ly)
        }
    })
}

/// Integer cell counts of a mapped mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshLayout {
    Grid { nx: usize, ny: usize },
    /// Two curvilinear blocks split at 45° on the arc; `angular[i]` chords on
    /// the arc of block `i`, `radial` cells from the arc to the outer walls.
    Sinai { angular: [usize; 2], radial: usize },
    TwoBox { left: [usize; 2], right: [usize; 2] },
}

fn grid_counts(lx: f64, ly: f64, n: usize) -> [usize; 2] {
    let short = lx.min(ly);
    let count = |len: f64| ((n as f64) * len / short).round().max(1.0) as usize;
    [count(lx), count(ly)]
}

impl MeshLayout {
    /// Layout for a characteristic edge length of about `min(Lx, Ly) / N`.
    /// `arc_points` defaults to `2N`.
    pub fn for_spec(
        spec: &DomainSpec,
        resolution: usize,
        arc_points: Option<usize>,
    ) -> Result<Self, GeometryError> {
        spec.validate()?;
        if resolution < 4 {
            return Err(GeometryError::ResolutionTooLow(resolution));
        }
        Ok(match *spec {
            DomainSpec::Rectangle { lx, ly } => {
                let [nx, ny] = grid_counts(lx, ly, resolution);
                MeshLayout::Grid { nx, ny }
            }
            DomainSpec::SinaiElementary { .. } => {
                let arc = arc_points.unwrap_or(2 * resolution).max(2);
                MeshLayout::Sinai { angular: [arc / 2, arc - arc / 2], radial: resolution }
            }
            DomainSpec::TwoBox { lx_left, lx_right, ly, .. } => MeshLayout::TwoBox {
                left: grid_counts(lx_left, ly, resolution),
                right: grid_counts(lx_right, ly, resolution),
            },
        })
    }
}

/// A conforming triangulation with counter-clockwise triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    pub areas: Vec<f64>,
}

pub(crate) fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Edges that belong to exactly one triangle, as sorted vertex pairs.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]].map(|[a, b]| [a.min(b), a.max(b)])
            })
            .collect();
        edges.sort_unstable();
        let mut out = Vec::new();
        let mut i = 0;
        while i < edges.len() {
            let mut j = i + 1;
            while j < edges.len() && edges[j] == edges[i] {
                j += 1;
            }
            if j - i == 1 {
                out.push(edges[i]);
            }
            i = j;
        }
        out
    }

    /// Write the plain-text exchange format: `vertices <n>` followed by
    /// `x y flag` rows, then `triangles <m>` followed by `i j k` rows.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "vertices {}", self.vertices.len())?;
        for (v, &b) in self.vertices.iter().zip(&self.boundary) {
            writeln!(w, "{:.17e} {:.17e} {}", v[0], v[1], u8::from(b))?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, GeometryError> {
        let perr = |msg: String| GeometryError::Parse(msg);
        let mut lines = r.lines().map(|l| l.map_err(|e| perr(e.to_string())));
        let mut header = |tag: &str| -> Result<usize, GeometryError> {
            let line = lines.next().ok_or_else(|| perr(format!("missing `{tag}` header")))??;
            let mut it = line.split_whitespace();
            if it.next() != Some(tag) {
                return Err(perr(format!("expected `{tag}` header, got `{line}`")));
            }
            it.next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| perr(format!("bad count in `{line}`")))
        };
        let nv = header("vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        let mut boundary = Vec::with_capacity(nv);
        let mut rows = Vec::with_capacity(nv);
        let mut lines = lines;
        for _ in 0..nv {
            rows.push(lines.next().ok_or_else(|| perr("truncated vertex block".into()))??);
        }
        for line in &rows {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(perr(format!("bad vertex row `{line}`")));
            }
            let x: f64 = f[0].parse().map_err(|_| perr(format!("bad x in `{line}`")))?;
            let y: f64 = f[1].parse().map_err(|_| perr(format!("bad y in `{line}`")))?;
            vertices.push([x, y]);
            boundary.push(f[2] == "1");
        }
        let line = lines.next().ok_or_else(|| perr("missing `triangles` header".into()))??;
        let nt: usize = line
            .strip_prefix("triangles ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| perr(format!("expected `triangles` header, got `{line}`")))?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let line = lines.next().ok_or_else(|| perr("truncated triangle block".into()))??;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| perr(format!("bad triangle row `{line}`"))))
                .collect::<Result<_, _>>()?;
            if idx.len() != 3 || idx.iter().any(|&i| i >= nv) {
                return Err(perr(format!("bad triangle row `{line}`")));
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        let areas = triangles
            .iter()
            .map(|t| signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]))
            .collect();
        Ok(Mesh { vertices, triangles, boundary, areas })
    }
}

/// Incremental builder for structured blocks glued along shared edges.
struct MeshBuilder {
    vertices: Vec<[f64; 2]>,
    boundary: Vec<bool>,
    triangles: Vec<[usize; 3]>,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder { vertices: Vec::new(), boundary: Vec::new(), triangles: Vec::new() }
    }

    fn push_vertex(&mut self, p: [f64; 2], on_boundary: bool) -> usize {
        self.vertices.push(p);
        self.boundary.push(on_boundary);
        self.vertices.len() - 1
    }

    /// Triangulate an `ns x nt` block given vertex indices `idx[i][j]`.
    fn triangulate(&mut self, idx: &[Vec<usize>]) {
        let ns = idx.len() - 1;
        let nt = idx[0].len() - 1;
        for i in 0..ns {
            for j in 0..nt {
                let a = idx[i][j];
                let b = idx[i + 1][j];
                let c = idx[i + 1][j + 1];
                let d = idx[i][j + 1];
                self.push_triangle([a, b, c]);
                self.push_triangle([a, c, d]);
            }
        }
    }

    fn push_triangle(&mut self, t: [usize; 3]) {
        let [a, b, c] = t;
        if signed_area(self.vertices[a], self.vertices[b], self.vertices[c]) < 0.0 {
            self.triangles.push([a, c, b]);
        } else {
            self.triangles.push(t);
        }
    }

    fn add_grid(&mut self, x0: f64, lx: f64, ly: f64, nx: usize, ny: usize) {
        let idx: Vec<Vec<usize>> = (0..=nx)
            .map(|i| {
                (0..=ny)
                    .map(|j| {
                        let p = [x0 + lx * i as f64 / nx as f64, ly * j as f64 / ny as f64];
                        self.push_vertex(p, i == 0 || i == nx || j == 0 || j == ny)
                    })
                    .collect()
            })
            .collect();
        self.triangulate(&idx);
    }

    fn finish(self, reference_edge: f64) -> Result<Mesh, GeometryError> {
        let MeshBuilder { vertices, boundary, triangles } = self;
        let areas: Vec<f64> = triangles
            .iter()
            .map(|t| signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]))
            .collect();
        let floor = 1e-10 * reference_edge * reference_edge;
        if let Some((index, &area)) = areas.iter().enumerate().find(|(_, &a)| !(a > floor)) {
            return Err(GeometryError::DegenerateTriangle { index, area });
        }
        Ok(Mesh { vertices, triangles, boundary, areas })
    }
}

/// Build a mesh of `spec` with `resolution` cells across the shorter side.
pub fn build_mesh(
    spec: &DomainSpec,
    resolution: usize,
    arc_points: Option<usize>,
) -> Result<Mesh, GeometryError> {
    let layout = MeshLayout::for_spec(spec, resolution, arc_points)?;
    build_mesh_with_layout(spec, &layout)
}

/// Build a mesh with explicit cell counts. Used to keep the mesh topology
/// fixed while the domain is deformed.
pub fn build_mesh_with_layout(spec: &DomainSpec, layout: &MeshLayout) -> Result<Mesh, GeometryError> {
    spec.validate()?;
    let mut mb = MeshBuilder::new();
    match (*spec, *layout) {
        (DomainSpec::Rectangle { lx, ly }, MeshLayout::Grid { nx, ny }) => {
            mb.add_grid(0.0, lx, ly, nx.max(1), ny.max(1));
            mb.finish(lx.min(ly) / nx.max(ny) as f64)
        }
        (
            DomainSpec::TwoBox { lx_left, lx_right, ly, wall },
            MeshLayout::TwoBox { left, right },
        ) => {
            mb.add_grid(0.0, lx_left, ly, left[0].max(1), left[1].max(1));
            mb.add_grid(lx_left + wall, lx_right, ly, right[0].max(1), right[1].max(1));
            let n = left.iter().chain(&right).copied().max().unwrap_or(1);
            mb.finish(lx_left.min(lx_right).min(ly) / n as f64)
        }
        (DomainSpec::SinaiElementary { lx, ly, radius }, MeshLayout::Sinai { angular, radial }) => {
            sinai_blocks(&mut mb, lx, ly, radius, angular, radial.max(1));
            let n = angular[0].max(angular[1]).max(radial);
            mb.finish(radius.min(lx - radius).min(ly - radius) / n as f64)
        }
        _ => Err(GeometryError::LayoutMismatch),
    }
}

/// Two ruled blocks: each point is `(1 - t) * arc(s) + t * wall(s)`.
///
/// Block 0 spans the arc from 0 to 45° against the wall `x = Lx`; block 1
/// spans 45° to 90° against the wall `y = Ly`. They share the segment from
/// the 45° arc point to the corner `(Lx, Ly)`.
fn sinai_blocks(mb: &mut MeshBuilder, lx: f64, ly: f64, r: f64, angular: [usize; 2], nt: usize) {
    let arc = |theta: f64| [r * theta.cos(), r * theta.sin()];
    let ns0 = angular[0].max(1);
    let ns1 = angular[1].max(1);
    let point = |inner: [f64; 2], outer: [f64; 2], t: f64| {
        [(1.0 - t) * inner[0] + t * outer[0], (1.0 - t) * inner[1] + t * outer[1]]
    };

    let mut block0 = vec![vec![0usize; nt + 1]; ns0 + 1];
    for (i, col) in block0.iter_mut().enumerate() {
        let s = i as f64 / ns0 as f64;
        let inner = arc(s * FRAC_PI_4);
        let outer = [lx, s * ly];
        for (j, slot) in col.iter_mut().enumerate() {
            let t = j as f64 / nt as f64;
            let on_boundary = i == 0 || j == 0 || j == nt;
            *slot = mb.push_vertex(point(inner, outer, t), on_boundary);
        }
    }
    let mut block1 = vec![vec![0usize; nt + 1]; ns1 + 1];
    block1[0] = block0[ns0].clone();
    for (i, col) in block1.iter_mut().enumerate().skip(1) {
        let s = i as f64 / ns1 as f64;
        let inner = arc(FRAC_PI_4 + s * FRAC_PI_4);
        let outer = [(1.0 - s) * lx, ly];
        for (j, slot) in col.iter_mut().enumerate() {
            let t = j as f64 / nt as f64;
            let on_boundary = i == ns1 || j == 0 || j == nt;
            let mut p = point(inner, outer, t);
            if i == ns1 {
                // exact zero on the left wall
                p[0] = 0.0;
            }
            *slot = mb.push_vertex(p, on_boundary);
        }
    }
    mb.triangulate(&block0);
    mb.triangulate(&block1);
}

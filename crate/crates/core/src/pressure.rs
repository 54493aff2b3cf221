//! Pressure from the parameter dependence of energy levels.
//!
//! For a deformation parameter `λ` of the domain, the pressure carried by
//! level `n` is `P = (-∂E_n/∂λ) / (∂A/∂λ)`.

use std::io::{self, Write};

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigensolve::{clusters, lowest_eigenpairs_with, EigenError, EigenOptions};
use crate::fem::{assemble, ElementOrder, FemError};
use crate::fit::{linear_fit, median, polyfit, polyval};
use crate::geometry::{build_mesh_with_layout, domain_area, DomainSpec, GeometryError, MeshLayout, Parameter};

/// Relative fit residual above which a level is flagged.
pub const FIT_FLAG_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum PressureError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("invalid level-curve request: {0}")]
    InvalidRequest(String),
    #[error("parameter {0} does not apply to this domain")]
    UnknownParameter(&'static str),
    #[error("area does not depend on {0}; pressure is undefined")]
    UndefinedPressure(&'static str),
    #[error("Boyle fit needs at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
}

/// Mesh and solver settings shared by every sample of a level curve.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub resolution: usize,
    pub arc_points: Option<usize>,
    pub order: ElementOrder,
    pub solver: EigenOptions,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            resolution: 100,
            arc_points: None,
            order: ElementOrder::Quadratic,
            solver: EigenOptions { vectors: false, ..EigenOptions::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCurve {
    pub parameter: Parameter,
    pub reference: f64,
    /// Strictly increasing, symmetric about `reference`.
    pub samples: Vec<f64>,
    /// `energies[s][n]`: level `n` at sample `s`. Levels are matched across
    /// samples by their sorted position.
    pub energies: Vec<Vec<f64>>,
    /// Cubic coefficients per level in the scaled offset `(λ - λ0) / δλ`.
    pub fits: Vec<[f64; 4]>,
    pub delta: f64,
    /// `max |E_sample - poly(λ)|` per level.
    pub max_residual: Vec<f64>,
    /// Levels whose fit residual exceeds the threshold or that belong to a
    /// degenerate cluster at the reference geometry.
    pub flagged: Vec<bool>,
    /// Degenerate clusters at the reference geometry, fitted by value order.
    pub clusters: Vec<[usize; 2]>,
}

impl LevelCurve {
    pub fn levels(&self) -> usize {
        self.fits.len()
    }

    /// Energy of a level at the reference geometry from its fit.
    pub fn energy(&self, level: usize) -> f64 {
        self.fits[level][0]
    }

    /// `dE/dλ` at the reference geometry.
    pub fn derivative(&self, level: usize) -> f64 {
        self.fits[level][1] / self.delta
    }

    pub fn flagged_fraction(&self) -> f64 {
        self.flagged.iter().filter(|&&f| f).count() as f64 / self.flagged.len() as f64
    }

    /// Fit a cubic per level to sampled energies.
    pub fn from_samples(
        parameter: Parameter,
        reference: f64,
        delta: f64,
        samples: Vec<f64>,
        energies: Vec<Vec<f64>>,
    ) -> Self {
        let k = energies[0].len();
        let u: Vec<f64> = samples.iter().map(|s| (s - reference) / delta).collect();
        let mut fits = Vec::with_capacity(k);
        let mut max_residual = Vec::with_capacity(k);
        let mut flagged = Vec::with_capacity(k);
        for n in 0..k {
            let y: Vec<f64> = energies.iter().map(|e| e[n]).collect();
            let c = polyfit(&u, &y, 3);
            let res = u.iter().zip(&y).map(|(&t, &e)| (e - polyval(&c, t)).abs()).fold(0.0, f64::max);
            flagged.push(res >= FIT_FLAG_THRESHOLD * c[0].abs());
            fits.push([c[0], c[1], c[2], c[3]]);
            max_residual.push(res);
        }
        let reference_levels: Vec<f64> = fits.iter().map(|c| c[0]).collect();
        let clusters = clusters(&reference_levels, 1e-8);
        for c in &clusters {
            for f in &mut flagged[c[0]..=c[1]] {
                *f = true;
            }
        }
        LevelCurve { parameter, reference, samples, energies, fits, delta, max_residual, flagged, clusters }
    }
}

/// Sample offsets: `count` evenly spaced points in `[-delta, delta]`.
pub fn sample_offsets(delta: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| -delta + 2.0 * delta * i as f64 / (count - 1) as f64).collect()
}

/// Lowest `k` energies of `spec` meshed with a fixed `layout`.
pub fn energies_at(
    spec: &DomainSpec,
    layout: &MeshLayout,
    k: usize,
    disc: &Discretization,
) -> Result<Vec<f64>, PressureError> {
    let mesh = build_mesh_with_layout(spec, layout)?;
    let sys = assemble(&mesh, disc.order)?;
    let opts = EigenOptions { vectors: false, ..disc.solver.clone() };
    Ok(lowest_eigenpairs_with(&sys, k, &opts)?.energies)
}

/// Level curve along one parameter.
pub fn level_curve(
    spec: &DomainSpec,
    parameter: Parameter,
    delta: f64,
    samples: usize,
    k: usize,
    disc: &Discretization,
) -> Result<LevelCurve, PressureError> {
    Ok(level_curves(spec, &[parameter], delta, samples, k, disc)?.remove(0))
}

/// Level curves along several parameters; the reference geometry is solved
/// once and shared.
pub fn level_curves(
    spec: &DomainSpec,
    parameters: &[Parameter],
    delta: f64,
    samples: usize,
    k: usize,
    disc: &Discretization,
) -> Result<Vec<LevelCurve>, PressureError> {
    level_curves_with_reference(spec, parameters, delta, samples, k, disc, None)
}

/// As [`level_curves`], reusing already computed reference energies (the
/// lowest `k` levels of `spec` at the same discretisation) when given.
pub fn level_curves_with_reference(
    spec: &DomainSpec,
    parameters: &[Parameter],
    delta: f64,
    samples: usize,
    k: usize,
    disc: &Discretization,
    reference: Option<Vec<f64>>,
) -> Result<Vec<LevelCurve>, PressureError> {
    if samples < 4 {
        return Err(PressureError::InvalidRequest(format!("{samples} samples cannot determine a cubic")));
    }
    if !(delta > 0.0) {
        return Err(PressureError::InvalidRequest(format!("step {delta} must be positive")));
    }
    spec.validate()?;
    let layout = MeshLayout::for_spec(spec, disc.resolution, disc.arc_points)?;
    let offsets = sample_offsets(delta, samples);
    let mut cache: Vec<(DomainSpec, Vec<f64>)> = Vec::new();
    if let Some(e) = reference {
        if e.len() != k {
            return Err(PressureError::InvalidRequest(format!("{} reference levels given, {k} requested", e.len())));
        }
        cache.push((*spec, e));
    }
    let mut curves = Vec::with_capacity(parameters.len());
    for &p in parameters {
        let reference = spec.parameter(p).ok_or(PressureError::UnknownParameter(p.name()))?;
        let mut values = Vec::with_capacity(samples);
        let mut energies = Vec::with_capacity(samples);
        for &d in &offsets {
            let deformed = if d == 0.0 {
                *spec
            } else {
                spec.with_parameter(p, reference + d).ok_or(PressureError::UnknownParameter(p.name()))?
            };
            deformed.validate()?;
            let e = match cache.iter().find(|(s, _)| *s == deformed) {
                Some((_, e)) => e.clone(),
                None => {
                    let e = energies_at(&deformed, &layout, k, disc)?;
                    cache.push((deformed, e.clone()));
                    e
                }
            };
            values.push(reference + d);
            energies.push(e);
        }
        curves.push(LevelCurve::from_samples(p, reference, delta, values, energies));
    }
    Ok(curves)
}

/// Levels closer than this (relative) are treated as one group by
/// [`perturbative_derivatives`].
pub const PERTURBATIVE_GROUP_TOL: f64 = 1e-4;

/// `(E_n, ∂E_n/∂λ)` for the lowest `k` levels at the reference geometry from
/// first-order perturbation theory, `xᵀ(∂K/∂λ - E ∂M/∂λ)x`. The matrix
/// derivatives are central differences with step `h` on a fixed mesh
/// layout. Within a group of near-degenerate levels the projected
/// derivative is diagonalised and its eigenvalues are returned in ascending
/// order, which resolves branches that cross at the reference point.
pub fn perturbative_derivatives(
    spec: &DomainSpec,
    parameter: Parameter,
    h: f64,
    k: usize,
    disc: &Discretization,
) -> Result<Vec<(f64, f64)>, PressureError> {
    if !(h > 0.0) {
        return Err(PressureError::InvalidRequest(format!("step {h} must be positive")));
    }
    spec.validate()?;
    let name = parameter.name();
    let reference = spec.parameter(parameter).ok_or(PressureError::UnknownParameter(name))?;
    let layout = MeshLayout::for_spec(spec, disc.resolution, disc.arc_points)?;
    let system = |s: &DomainSpec| -> Result<_, PressureError> {
        s.validate()?;
        Ok(assemble(&build_mesh_with_layout(s, &layout)?, disc.order)?)
    };
    let shifted = |d: f64| spec.with_parameter(parameter, reference + d).ok_or(PressureError::UnknownParameter(name));
    let sys = system(spec)?;
    let plus = system(&shifted(h)?)?;
    let minus = system(&shifted(-h)?)?;
    let opts = EigenOptions { vectors: true, ..disc.solver.clone() };
    let spectrum = lowest_eigenpairs_with(&sys, k, &opts)?;
    let x = spectrum.vectors.as_ref().expect("vectors requested");
    let e = &spectrum.energies;

    let mut out: Vec<(f64, f64)> = e.iter().map(|&v| (v, 0.0)).collect();
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && (e[end] - e[end - 1]).abs() < PERTURBATIVE_GROUP_TOL * e[end - 1] {
            end += 1;
        }
        let g = end - start;
        let mean = e[start..end].iter().sum::<f64>() / g as f64;
        let cols: Vec<Vec<f64>> = (start..end).map(|j| x.col(j).iter().copied().collect()).collect();
        let apply = |s: &crate::fem::FemSystem, v: &[f64]| -> Vec<f64> {
            let kv = s.stiffness.mul_vec(v);
            let mv = s.mass.mul_vec(v);
            kv.iter().zip(&mv).map(|(a, b)| a - mean * b).collect()
        };
        let mut d = Mat::<f64>::zeros(g, g);
        for b in 0..g {
            let (up, dn) = (apply(&plus, &cols[b]), apply(&minus, &cols[b]));
            for a in 0..g {
                let pa: f64 = cols[a].iter().zip(&up).map(|(u, v)| u * v).sum();
                let ma: f64 = cols[a].iter().zip(&dn).map(|(u, v)| u * v).sum();
                d[(a, b)] = (pa - ma) / (2.0 * h);
            }
        }
        let sym = Mat::<f64>::from_fn(g, g, |a, b| 0.5 * (d[(a, b)] + d[(b, a)]));
        let slopes = sym
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|err| EigenError::Factorization(format!("projected derivative: {err:?}")))?;
        for (i, slope) in slopes.into_iter().enumerate() {
            out[start + i].1 = slope;
        }
        start = end;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressureRecord {
    /// 1-based level number.
    pub level: usize,
    pub energy: f64,
    /// `-∂E/∂λ`.
    pub derivative: f64,
    /// `(-∂E/∂λ) / (∂A/∂λ)`.
    pub pressure: f64,
    pub pressure_area: f64,
    pub flagged: bool,
}

pub fn pressure_from_curve(curve: &LevelCurve, spec: &DomainSpec) -> Result<Vec<PressureRecord>, PressureError> {
    let name = curve.parameter.name();
    let da = spec.area_derivative(curve.parameter).ok_or(PressureError::UnknownParameter(name))?;
    if da == 0.0 {
        return Err(PressureError::UndefinedPressure(name));
    }
    let area = domain_area(spec)?.total();
    Ok((0..curve.levels())
        .map(|n| {
            let derivative = -curve.derivative(n);
            let pressure = derivative / da;
            PressureRecord {
                level: n + 1,
                energy: curve.energy(n),
                derivative,
                pressure,
                pressure_area: pressure * area,
                flagged: curve.flagged[n],
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoyleFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: usize,
    /// `|P·A - f(E)| / |f(E)|` per level.
    pub deviation: Vec<f64>,
    /// Deviation averaged over a centred window of `window` levels.
    pub fluctuation: Vec<f64>,
}

impl BoyleFit {
    /// Mean windowed fluctuation over the second and the last quarter of the
    /// levels.
    pub fn quarter_means(&self) -> (f64, f64) {
        let n = self.fluctuation.len();
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&self.fluctuation[n / 4..n / 2]), mean(&self.fluctuation[3 * n / 4..]))
    }
}

pub const BOYLE_MIN_RECORDS: usize = 100;

/// Least-squares line through `(E, P·A)` with a windowed relative
/// fluctuation series.
pub fn boyle_fit(records: &[PressureRecord], area: f64, window: usize) -> Result<BoyleFit, PressureError> {
    if records.len() < BOYLE_MIN_RECORDS {
        return Err(PressureError::TooFewRecords { needed: BOYLE_MIN_RECORDS, got: records.len() });
    }
    if window == 0 {
        return Err(PressureError::InvalidRequest("window must be positive".into()));
    }
    let e: Vec<f64> = records.iter().map(|r| r.energy).collect();
    let pa: Vec<f64> = records.iter().map(|r| r.pressure * area).collect();
    let (slope, intercept) = linear_fit(&e, &pa);
    let deviation: Vec<f64> = e
        .iter()
        .zip(&pa)
        .map(|(&x, &y)| {
            let f = slope * x + intercept;
            (y - f).abs() / f.abs()
        })
        .collect();
    let n = deviation.len();
    let half = window / 2;
    let fluctuation = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (lo + window).min(n);
            let lo = hi.saturating_sub(window);
            deviation[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    Ok(BoyleFit { slope, intercept, window, deviation, fluctuation })
}

/// Median of `|Px - Py| / ((Px + Py)/2)` over 1-based levels `first..=last`.
pub fn isotropy_spread(px: &[PressureRecord], py: &[PressureRecord], first: usize, last: usize) -> f64 {
    let d: Vec<f64> = px
        .iter()
        .zip(py)
        .filter(|(a, _)| a.level >= first && a.level <= last)
        .map(|(a, b)| (a.pressure - b.pressure).abs() / (0.5 * (a.pressure + b.pressure)))
        .collect();
    median(&d)
}

/// `boyle.csv`: `level,E,Px,Py,PxA,PyA,dPxA_window`.
pub fn write_boyle_csv<W: Write>(
    mut w: W,
    px: &[PressureRecord],
    py: &[PressureRecord],
    fit_x: &BoyleFit,
) -> io::Result<()> {
    writeln!(w, "level,E,Px,Py,PxA,PyA,dPxA_window")?;
    for ((a, b), f) in px.iter().zip(py).zip(&fit_x.fluctuation) {
        writeln!(
            w,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e}",
            a.level, a.energy, a.pressure, b.pressure, a.pressure_area, b.pressure_area, f
        )?;
    }
    Ok(())
}

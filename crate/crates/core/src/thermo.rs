//! Local entropies of the diagonal ensemble, logarithmic S(Ē) fits and
//! temperature offsets between the two particles. `k_B = 1`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::linear_fit;
use crate::twoparticle::{CoupledSpectrum, TwoParticleError};

/// Populations more negative than this are rejected.
pub const NEGATIVE_POPULATION_TOL: f64 = 1e-12;
/// Largest admissible deviation of a population sum from 1.
pub const POPULATION_SUM_TOL: f64 = 1e-3;
pub const MIN_FIT_SAMPLES: usize = 5;
/// Smallest admissible `max Ē / min Ē` for a temperature fit.
pub const MIN_ENERGY_SPAN: f64 = 1.2;

#[derive(Debug, Error, PartialEq)]
pub enum ThermoError {
    #[error("population {index} is negative ({value:e})")]
    NegativePopulation { index: usize, value: f64 },
    #[error("populations sum to {0}, outside the truncation tolerance")]
    Unnormalized(f64),
    #[error("temperature fit needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("equilibrium energies span only a factor {0:.3}; the fit is refused")]
    DegenerateRange(f64),
    #[error("no sample passes the filters (initial mismatch > {initial_mismatch} E, final mismatch < {final_mismatch} E); relax the thresholds")]
    EmptyFilteredSet { initial_mismatch: f64, final_mismatch: f64 },
    #[error(transparent)]
    TwoParticle(#[from] TwoParticleError),
}

/// `-Σ p ln p` of the renormalised populations, with `0 ln 0 = 0`.
pub fn entropy(populations: &[f64]) -> Result<f64, ThermoError> {
    let mut sum = 0.0;
    for (index, &value) in populations.iter().enumerate() {
        if value < -NEGATIVE_POPULATION_TOL {
            return Err(ThermoError::NegativePopulation { index, value });
        }
        sum += value.max(0.0);
    }
    if !((sum - 1.0).abs() <= POPULATION_SUM_TOL) {
        return Err(ThermoError::Unnormalized(sum));
    }
    let s = populations
        .iter()
        .map(|&p| p.max(0.0) / sum)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum::<f64>();
    Ok(s.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoSample {
    pub m0: [u32; 2],
    pub n0: [u32; 2],
    pub eps_left: f64,
    pub eps_right: f64,
    pub ebar_left: f64,
    pub ebar_right: f64,
    pub s_left: f64,
    pub s_right: f64,
    pub leak: f64,
}

impl ThermoSample {
    /// `ε_l(m0) + ε_r(n0)`.
    pub fn energy(&self) -> f64 {
        self.eps_left + self.eps_right
    }

    pub fn ebar(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.ebar_left,
            Side::Right => self.ebar_right,
        }
    }

    pub fn entropy(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.s_left,
            Side::Right => self.s_right,
        }
    }
}

pub fn sample_equilibria(spectrum: &CoupledSpectrum, initial: &[([u32; 2], [u32; 2])]) -> Result<Vec<ThermoSample>, ThermoError> {
    initial
        .iter()
        .map(|&(m0, n0)| {
            let d = spectrum.diagonal_ensemble(m0, n0)?;
            Ok(ThermoSample {
                m0,
                n0,
                eps_left: d.eps_left,
                eps_right: d.eps_right,
                ebar_left: d.mean_left,
                ebar_right: d.mean_right,
                s_left: entropy(&d.populations_left)?,
                s_right: entropy(&d.populations_right)?,
                leak: d.leak,
            })
        })
        .collect()
}

/// Every retained product state with `ε_l + ε_r <= e_max`, in basis order.
pub fn initial_states_below(spectrum: &CoupledSpectrum, e_max: f64) -> Vec<([u32; 2], [u32; 2])> {
    let b = &spectrum.basis;
    (0..b.len())
        .filter(|&i| b.energy(i) <= e_max)
        .map(|i| (b.left.modes[b.pairs[i].0].n, b.right.modes[b.pairs[i].1].n))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Keep samples with `|ε_l - ε_r| > initial_mismatch · E`.
    pub initial_mismatch: f64,
    /// Keep samples with `|Ē_l - Ē_r| < final_mismatch · E`.
    pub final_mismatch: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { initial_mismatch: 0.5, final_mismatch: 0.1 }
    }
}

impl Thresholds {
    pub fn accepts(&self, s: &ThermoSample) -> bool {
        let e = s.energy();
        (s.eps_left - s.eps_right).abs() > self.initial_mismatch * e
            && (s.ebar_left - s.ebar_right).abs() < self.final_mismatch * e
    }
}

pub fn filter_samples(samples: &[ThermoSample], thresholds: &Thresholds) -> Vec<ThermoSample> {
    samples.iter().filter(|s| thresholds.accepts(s)).cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub side: Side,
    /// `S = alpha ln Ē + beta`.
    pub alpha: f64,
    pub beta: f64,
    pub residuals: Vec<f64>,
}

impl TemperatureFit {
    /// `T = Ē / alpha`.
    pub fn temperature(&self, ebar: f64) -> f64 {
        ebar / self.alpha
    }
}

pub fn fit_temperature(samples: &[ThermoSample], side: Side) -> Result<TemperatureFit, ThermoError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(ThermoError::TooFewSamples { needed: MIN_FIT_SAMPLES, got: samples.len() });
    }
    let e: Vec<f64> = samples.iter().map(|s| s.ebar(side)).collect();
    let (lo, hi) = e.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi / lo >= MIN_ENERGY_SPAN) {
        return Err(ThermoError::DegenerateRange(hi / lo));
    }
    let x: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.entropy(side)).collect();
    let (alpha, beta) = linear_fit(&x, &y);
    let residuals = x.iter().zip(&y).map(|(x, y)| y - (alpha * x + beta)).collect();
    Ok(TemperatureFit { side, alpha, beta, residuals })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureOffset {
    pub energy: f64,
    pub t_left: f64,
    pub t_right: f64,
    pub dt_abs: f64,
    pub dt_rel: f64,
}

/// Per-sample `|T_l - T_r|` and its ratio to the mean temperature, ordered
/// by total energy.
pub fn temperature_offsets(
    left: &TemperatureFit,
    right: &TemperatureFit,
    samples: &[ThermoSample],
) -> Vec<TemperatureOffset> {
    let mut out: Vec<TemperatureOffset> = samples
        .iter()
        .map(|s| {
            let t_left = left.temperature(s.ebar_left);
            let t_right = right.temperature(s.ebar_right);
            let dt_abs = (t_left - t_right).abs();
            TemperatureOffset { energy: s.energy(), t_left, t_right, dt_abs, dt_rel: dt_abs / (0.5 * (t_left + t_right)) }
        })
        .collect();
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoAnalysis {
    pub thresholds: Thresholds,
    pub accepted: Vec<ThermoSample>,
    pub left: TemperatureFit,
    pub right: TemperatureFit,
    pub offsets: Vec<TemperatureOffset>,
}

/// Filter, fit both sides on the accepted samples and compute offsets.
pub fn analyse(samples: &[ThermoSample], thresholds: &Thresholds) -> Result<ThermoAnalysis, ThermoError> {
    let accepted = filter_samples(samples, thresholds);
    if accepted.is_empty() {
        return Err(ThermoError::EmptyFilteredSet {
            initial_mismatch: thresholds.initial_mismatch,
            final_mismatch: thresholds.final_mismatch,
        });
    }
    let left = fit_temperature(&accepted, Side::Left)?;
    let right = fit_temperature(&accepted, Side::Right)?;
    let offsets = temperature_offsets(&left, &right, &accepted);
    Ok(ThermoAnalysis { thresholds: *thresholds, accepted, left, right, offsets })
}

/// Mean of `value` over `bins` consecutive groups of nearly equal size,
/// returned as `(mean energy, mean value)` per bin. Input must be sorted by
/// energy.
pub fn equal_count_bins(offsets: &[TemperatureOffset], bins: usize, value: impl Fn(&TemperatureOffset) -> f64) -> Vec<(f64, f64)> {
    assert!(bins > 0 && bins <= offsets.len());
    (0..bins)
        .map(|b| {
            let (lo, hi) = (b * offsets.len() / bins, (b + 1) * offsets.len() / bins);
            let g = &offsets[lo..hi];
            let n = g.len() as f64;
            (g.iter().map(|o| o.energy).sum::<f64>() / n, g.iter().map(&value).sum::<f64>() / n)
        })
        .collect()
}

/// `thermo_samples.csv` body.
pub fn write_samples_csv<W: Write>(mut w: W, samples: &[ThermoSample]) -> io::Result<()> {
    writeln!(w, "m0x,m0y,n0x,n0y,E,Ebar_l,Ebar_r,S_l,S_r,leak")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.3e}",
            s.m0[0], s.m0[1], s.n0[0], s.n0[1], s.energy(), s.ebar_left, s.ebar_right, s.s_left, s.s_right, s.leak
        )?;
    }
    Ok(())
}

/// `temperature_offsets.csv` body.
pub fn write_offsets_csv<W: Write>(mut w: W, offsets: &[TemperatureOffset]) -> io::Result<()> {
    writeln!(w, "E,T_l,T_r,dT_abs,dT_rel")?;
    for o in offsets {
        writeln!(w, "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", o.energy, o.t_left, o.t_right, o.dt_abs, o.dt_rel)?;
    }
    Ok(())
}

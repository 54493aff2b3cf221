//! Run configuration: one TOML file with nested sections.

use std::path::{Path, PathBuf};

use billiard_thermo::eigensolve::{EigenOptions, DEFAULT_TOL};
use billiard_thermo::fem::ElementOrder;
use billiard_thermo::geometry::{DomainSpec, Parameter};
use billiard_thermo::pressure::Discretization;
use billiard_thermo::thermo::Thresholds;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable overriding `cache_dir`.
pub const CACHE_ENV: &str = "BILLIARD_THERMO_CACHE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub domain: DomainSpec,
    pub mesh: MeshConfig,
    pub eigen: EigenConfig,
    pub pressure: PressureConfig,
    pub two_particle: TwoParticleConfig,
    pub thermo: ThermoConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arc_points: Option<usize>,
    pub order: ElementOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenConfig {
    pub levels: usize,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureConfig {
    pub parameter: Parameter,
    pub delta: f64,
    pub samples: usize,
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoParticleConfig {
    pub chamber: DomainSpec,
    pub strength: f64,
    pub e_cut: f64,
    pub quad_points: usize,
    pub t_max: f64,
    pub t_points: usize,
    /// Eigenstates written by `balance`.
    pub balance_states: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoConfig {
    pub initial_mismatch: f64,
    pub final_mismatch: f64,
    /// Initial product states up to this energy when no initial-set file is
    /// given.
    pub initial_max_energy: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            cache_dir: PathBuf::from("cache"),
            domain: DomainSpec::sinai(1.09, 1.00, 0.5),
            mesh: MeshConfig { resolution: 100, arc_points: None, order: ElementOrder::Quadratic },
            eigen: EigenConfig { levels: 800, tol: DEFAULT_TOL },
            pressure: PressureConfig { parameter: Parameter::Lx, delta: 0.01, samples: 5, window: 25 },
            two_particle: TwoParticleConfig {
                chamber: DomainSpec::TwoBox { lx_left: 1.1, lx_right: 1.3, ly: 1.4, wall: 0.001 },
                strength: -50.0,
                e_cut: 300.0,
                quad_points: 40,
                t_max: 100.0,
                t_points: 2000,
                balance_states: 1000,
            },
            thermo: ThermoConfig { initial_mismatch: 0.5, final_mismatch: 0.1, initial_max_energy: 150.0 },
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Reject configurations no stage could run with.
    pub fn validate(&self) -> Result<(), String> {
        self.domain.validate().map_err(|e| format!("domain: {e}"))?;
        if matches!(self.domain, DomainSpec::TwoBox { .. }) {
            return Err("domain: one-particle runs need a rectangle or sinai_elementary domain".into());
        }
        if !matches!(self.two_particle.chamber, DomainSpec::TwoBox { .. }) {
            return Err("two_particle.chamber: must be a two_box domain".into());
        }
        self.two_particle.chamber.validate().map_err(|e| format!("two_particle.chamber: {e}"))?;
        let positive = [
            ("eigen.tol", self.eigen.tol),
            ("pressure.delta", self.pressure.delta),
            ("two_particle.e_cut", self.two_particle.e_cut),
            ("two_particle.t_max", self.two_particle.t_max),
            ("thermo.initial_mismatch", self.thermo.initial_mismatch),
            ("thermo.final_mismatch", self.thermo.final_mismatch),
            ("thermo.initial_max_energy", self.thermo.initial_max_energy),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.two_particle.strength.is_finite() {
            return Err("two_particle.strength must be finite".into());
        }
        if self.eigen.tol > 1e-4 {
            return Err(format!("eigen.tol must not exceed 1e-4, got {}", self.eigen.tol));
        }
        let counts = [
            ("mesh.resolution", self.mesh.resolution, 4),
            ("eigen.levels", self.eigen.levels, 1),
            ("pressure.samples", self.pressure.samples, 4),
            ("pressure.window", self.pressure.window, 1),
            ("two_particle.quad_points", self.two_particle.quad_points, 2),
            ("two_particle.t_points", self.two_particle.t_points, 2),
            ("two_particle.balance_states", self.two_particle.balance_states, 1),
        ];
        for (name, v, min) in counts {
            if v < min {
                return Err(format!("{name} must be at least {min}, got {v}"));
            }
        }
        Ok(())
    }

    /// Cache directory, honouring the environment override.
    pub fn effective_cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| self.cache_dir.clone())
    }

    /// SHA-256 of every physics-relevant field (all but the directories).
    pub fn hash(&self) -> String {
        let mut physics = self.clone();
        physics.output_dir = PathBuf::new();
        physics.cache_dir = PathBuf::new();
        sha256_hex(physics.to_toml().as_bytes())
    }

    /// SHA-256 of the inputs that determine the coupled two-particle
    /// spectrum.
    pub fn two_particle_key(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            format: u32,
            chamber: &'a DomainSpec,
            strength: f64,
            e_cut: f64,
            quad_points: usize,
        }
        let tp = &self.two_particle;
        let key = Key { format: 1, chamber: &tp.chamber, strength: tp.strength, e_cut: tp.e_cut, quad_points: tp.quad_points };
        sha256_hex(toml::to_string(&key).expect("key serialises").as_bytes())
    }

    pub fn discretization(&self) -> Discretization {
        Discretization {
            resolution: self.mesh.resolution,
            arc_points: self.mesh.arc_points,
            order: self.mesh.order,
            solver: EigenOptions { tol: self.eigen.tol, vectors: false, ..EigenOptions::default() },
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { initial_mismatch: self.thermo.initial_mismatch, final_mismatch: self.thermo.final_mismatch }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = RunConfig::default().to_toml().replace("levels = 800", "levels = 800\nlevles = 3");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn hash_ignores_directories_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.cache_dir = "other".into();
        assert_eq!(a.hash(), b.hash());
        b.eigen.levels = 801;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.two_particle_key(), b.two_particle_key());
        b.two_particle.e_cut = 301.0;
        assert_ne!(a.two_particle_key(), b.two_particle_key());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.pressure.samples = 3;
        assert!(c.validate().unwrap_err().contains("pressure.samples"));
        let mut c = RunConfig::default();
        c.domain = DomainSpec::sinai(1.0, 1.0, 1.5);
        assert!(c.validate().unwrap_err().starts_with("domain"));
        let mut c = RunConfig::default();
        c.eigen.tol = 1e-2;
        assert!(c.validate().is_err());
    }

    fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
        lo..hi
    }

    prop_compose! {
        fn arb_config()(
            lx in finite(0.5, 3.0), ly in finite(0.5, 3.0), frac in finite(0.05, 0.95), sinai in any::<bool>(),
            resolution in 4usize..400, arc in prop::option::of(8usize..800), quadratic in any::<bool>(),
            levels in 1usize..2000, tol in finite(1e-12, 1e-4),
            param in prop::sample::select(vec![Parameter::Lx, Parameter::Ly, Parameter::R]),
            delta in finite(1e-4, 0.1), samples in 4usize..12, window in 1usize..100,
            strength in finite(-200.0, 200.0), e_cut in finite(20.0, 900.0), quad in 2usize..80,
            t_max in finite(1.0, 500.0), t_points in 2usize..5000, states in 1usize..3000,
            im in finite(0.01, 1.0), fm in finite(0.01, 1.0), emax in finite(10.0, 500.0),
        ) -> RunConfig {
            let domain = if sinai { DomainSpec::sinai(lx, ly, frac * lx.min(ly)) } else { DomainSpec::rectangle(lx, ly) };
            RunConfig {
                output_dir: format!("out-{resolution}").into(),
                cache_dir: "c".into(),
                domain,
                mesh: MeshConfig {
                    resolution,
                    arc_points: arc,
                    order: if quadratic { ElementOrder::Quadratic } else { ElementOrder::Linear },
                },
                eigen: EigenConfig { levels, tol },
                pressure: PressureConfig { parameter: param, delta, samples, window },
                two_particle: TwoParticleConfig {
                    chamber: DomainSpec::TwoBox { lx_left: lx, lx_right: ly, ly: lx + ly, wall: 1e-3 },
                    strength, e_cut, quad_points: quad, t_max, t_points, balance_states: states,
                },
                thermo: ThermoConfig { initial_mismatch: im, final_mismatch: fm, initial_max_energy: emax },
            }
        }
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_lossless(c in arb_config()) {
            let text = c.to_toml();
            let back = RunConfig::from_toml(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.hash(), c.hash());
        }
    }
}

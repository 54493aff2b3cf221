//! Output directories, manifests, error classification and the coupled
//! spectrum cache.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use billiard_thermo::eigensolve::EigenError;
use billiard_thermo::fem::FemError;
use billiard_thermo::geometry::GeometryError;
use billiard_thermo::pressure::PressureError;
use billiard_thermo::thermo::ThermoError;
use billiard_thermo::twoparticle::{
    assemble_h2p, coulomb_matrix, diagonalize_h2p, CoupledSpectrum, ProductBasis, TwoParticleError,
};
use serde::Serialize;

use crate::config::RunConfig;

pub const LOCK_FILE: &str = ".billiard-thermo.lock";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Convergence { stage: String, message: String },
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Convergence { .. } => 3,
            CliError::Stage { .. } => 4,
        }
    }

    pub fn stage(stage: &str, message: impl ToString) -> Self {
        CliError::Stage { stage: stage.into(), message: message.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Convergence { stage, message } => write!(f, "[{stage}] convergence failure: {message}"),
            CliError::Stage { stage, message } => write!(f, "[{stage}] {message}"),
        }
    }
}

/// Library errors that can be told apart as numerical-convergence failures.
pub trait StageError: std::fmt::Display {
    fn is_convergence(&self) -> bool {
        false
    }
}

impl StageError for EigenError {
    fn is_convergence(&self) -> bool {
        matches!(self, EigenError::NotConverged { .. } | EigenError::InertiaMismatch { .. })
    }
}

impl StageError for PressureError {
    fn is_convergence(&self) -> bool {
        matches!(self, PressureError::Eigen(e) if e.is_convergence())
    }
}

impl StageError for TwoParticleError {
    fn is_convergence(&self) -> bool {
        matches!(self, TwoParticleError::QuadratureTooCoarse { .. })
    }
}

impl StageError for ThermoError {
    fn is_convergence(&self) -> bool {
        matches!(self, ThermoError::TwoParticle(e) if e.is_convergence())
    }
}

impl StageError for GeometryError {}
impl StageError for FemError {}
impl StageError for io::Error {}

pub fn tag<E: StageError>(stage: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| {
        if e.is_convergence() {
            CliError::Convergence { stage: stage.into(), message: e.to_string() }
        } else {
            CliError::stage(stage, e)
        }
    }
}

#[derive(Serialize)]
struct StageTime {
    name: String,
    seconds: f64,
}

#[derive(Serialize)]
pub struct RunManifest {
    command: String,
    config_hash: String,
    code_version: String,
    started_unix: u64,
    finished_unix: u64,
    stages: Vec<StageTime>,
    warnings: Vec<String>,
    outputs: Vec<String>,
    config: RunConfig,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// One CLI invocation writing into a locked output directory.
pub struct Run {
    dir: PathBuf,
    lock: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn start(command: &str, config: &RunConfig) -> Result<Self, CliError> {
        let dir = config.output_dir.clone();
        fs::create_dir_all(&dir).map_err(|e| CliError::stage("output", format!("{}: {e}", dir.display())))?;
        let lock = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            CliError::stage(
                "output",
                if e.kind() == io::ErrorKind::AlreadyExists {
                    format!("{} is locked by another run ({})", dir.display(), lock.display())
                } else {
                    format!("{}: {e}", lock.display())
                },
            )
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Run {
            dir,
            lock,
            manifest: RunManifest {
                command: command.into(),
                config_hash: config.hash(),
                code_version: env!("CARGO_PKG_VERSION").into(),
                started_unix: unix_now(),
                finished_unix: 0,
                stages: Vec::new(),
                warnings: Vec::new(),
                outputs: Vec::new(),
                config: config.clone(),
            },
        })
    }

    fn manifest_name(&self) -> String {
        format!("manifest-{}.toml", self.manifest.command)
    }

    pub fn warn(&mut self, message: String) {
        eprintln!("warning: {message}");
        self.manifest.warnings.push(message);
    }

    /// Time `f` as a named stage.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        let out = f();
        self.manifest.stages.push(StageTime { name: name.into(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::stage("output", format!("{}: {e}", path.display())))?;
        self.manifest.outputs.push(name.into());
        Ok(BufWriter::new(f))
    }

    /// CSV with a manifest reference line ahead of the header.
    pub fn write_csv(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<PathBuf, CliError> {
        let reference = format!("# manifest={} config_sha256={}", self.manifest_name(), self.manifest.config_hash);
        let mut w = self.create(name)?;
        writeln!(w, "{reference}").and_then(|_| body(&mut w)).and_then(|_| w.flush()).map_err(tag("output"))?;
        Ok(self.dir.join(name))
    }

    /// Non-CSV output file.
    pub fn write_file(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<PathBuf, CliError> {
        let mut w = self.create(name)?;
        body(&mut w).and_then(|_| w.flush()).map_err(tag("output"))?;
        Ok(self.dir.join(name))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.manifest.finished_unix = unix_now();
        let text = toml::to_string(&self.manifest).map_err(|e| CliError::stage("output", e))?;
        let path = self.dir.join(self.manifest_name());
        fs::write(&path, text).map_err(|e| CliError::stage("output", format!("{}: {e}", path.display())))
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("h2p-{key}.bin"))
}

/// Coupled two-particle spectrum, read from the cache when a valid entry
/// exists and computed (and stored) otherwise.
pub fn coupled_spectrum(run: &mut Run, config: &RunConfig) -> Result<CoupledSpectrum, CliError> {
    let tp = &config.two_particle;
    let basis = ProductBasis::new(&tp.chamber, tp.e_cut).map_err(tag("basis"))?;
    let dir = config.effective_cache_dir();
    let path = cache_path(&dir, &config.two_particle_key());
    if let Ok(f) = File::open(&path) {
        match CoupledSpectrum::read_cache(BufReader::new(f), basis.clone()) {
            Ok(s) if s.strength == tp.strength => return Ok(s),
            _ => run.warn(format!("discarding stale cache entry {}", path.display())),
        }
    }
    let v = run.stage("coulomb", || coulomb_matrix(&basis, tp.strength, tp.quad_points).map_err(tag("coulomb")))?;
    let h = assemble_h2p(&basis, v).map_err(tag("assemble2p"))?;
    let spectrum = run.stage("diagonalize", || diagonalize_h2p(basis, tp.strength, h).map_err(tag("diagonalize")))?;
    let stored = fs::create_dir_all(&dir).and_then(|_| {
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let mut w = BufWriter::new(File::create(&tmp)?);
        spectrum.write_cache(&mut w)?;
        drop(w);
        fs::rename(&tmp, &path)
    });
    if let Err(e) = stored {
        run.warn(format!("could not write cache {}: {e}", path.display()));
    }
    Ok(spectrum)
}

//! `billiard-thermo`: reproducible runs of the billiard thermodynamics
//! experiments. Exit codes: 0 success, 2 configuration error, 3 numerical
//! convergence failure, 4 stage error.

mod config;
mod run;

use std::io::BufRead;
use std::path::PathBuf;
use std::process::ExitCode;

use billiard_thermo::eigensolve::{lowest_eigenpairs_with, EigenOptions};
use billiard_thermo::fem::{assemble, ElementOrder};
use billiard_thermo::geometry::{build_mesh, domain_area, DomainSpec, Parameter};
use billiard_thermo::pressure::{boyle_fit, isotropy_spread, level_curve, level_curves, pressure_from_curve, write_boyle_csv};
use billiard_thermo::spectral::weyl_deviation;
use billiard_thermo::thermo::{analyse, initial_states_below, sample_equilibria, write_offsets_csv, write_samples_csv};
use billiard_thermo::twoparticle::{energy_balance_ratios, quench, time_grid, write_balance_csv};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::run::{coupled_spectrum, tag, CliError, Run};

/// Median spread above which `boyle` reports the pressure as anisotropic.
const ISOTROPY_LIMIT: f64 = 0.10;

#[derive(Parser)]
#[command(name = "billiard-thermo", version, about = "Thermodynamic state variables from quantum billiard spectra")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainKind {
    Rectangle,
    Sinai,
}

/// Command-line overrides of configuration fields.
#[derive(Args)]
struct Overrides {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    domain: Option<DomainKind>,
    #[arg(long, global = true)]
    lx: Option<f64>,
    #[arg(long, global = true)]
    ly: Option<f64>,
    #[arg(long, global = true)]
    radius: Option<f64>,
    /// Mesh resolution N.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true)]
    arc_points: Option<usize>,
    /// Finite-element order, 1 or 2.
    #[arg(long, global = true)]
    order: Option<u8>,
    #[arg(long, global = true)]
    levels: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Deformation parameter: Lx, Ly or R.
    #[arg(long = "lambda", global = true)]
    lambda: Option<Parameter>,
    #[arg(long, global = true)]
    dlam: Option<f64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Coulomb strength k.
    #[arg(long, global = true, allow_negative_numbers = true)]
    strength: Option<f64>,
    #[arg(long, global = true)]
    e_cut: Option<f64>,
    #[arg(long, global = true)]
    quad_points: Option<usize>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    t_points: Option<usize>,
    #[arg(long, global = true)]
    balance_states: Option<usize>,
    #[arg(long, global = true)]
    initial_mismatch: Option<f64>,
    #[arg(long, global = true)]
    final_mismatch: Option<f64>,
    #[arg(long, global = true)]
    initial_max_energy: Option<f64>,
}

fn parse_mode(s: &str) -> Result<[u32; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `nx,ny`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}")).and_then(|n| {
        if n == 0 { Err("quantum numbers start at 1".to_string()) } else { Ok(n) }
    });
    Ok([parse(a)?, parse(b)?])
}

#[derive(Subcommand)]
enum Command {
    /// Triangulate the one-particle domain (mesh.txt).
    Mesh,
    /// Lowest levels of the one-particle domain (spectrum.csv).
    Spectrum {
        /// Also write eigenvectors (vectors.txt).
        #[arg(long)]
        vectors: bool,
    },
    /// Level curve and pressure along one parameter (pressure_<lambda>.csv).
    Pressure,
    /// Boyle-Mariotte fit and isotropy from Lx and Ly deformations (boyle.csv).
    Boyle,
    /// Assemble and diagonalise the two-particle Hamiltonian (spectrum2p.csv).
    Assemble2p,
    /// Time evolution after switching on the interaction (quench_<m0>_<n0>.csv).
    Quench {
        #[arg(long, default_value = "2,4", value_parser = parse_mode)]
        m0: [u32; 2],
        #[arg(long, default_value = "1,1", value_parser = parse_mode)]
        n0: [u32; 2],
    },
    /// Energy balance ratios of the coupled eigenstates (balance_ratios.csv).
    Balance {
        #[arg(long, default_value = "2,4", value_parser = parse_mode)]
        m0: [u32; 2],
        #[arg(long, default_value = "1,1", value_parser = parse_mode)]
        n0: [u32; 2],
    },
    /// Entropies, temperature fits and offsets (thermo_samples.csv,
    /// temperature_offsets.csv).
    Thermo {
        /// File with one `m0x m0y n0x n0y` initial state per line.
        #[arg(long)]
        initial_set: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Spectrum { .. } => "spectrum",
            Command::Pressure => "pressure",
            Command::Boyle => "boyle",
            Command::Assemble2p => "assemble2p",
            Command::Quench { .. } => "quench",
            Command::Balance { .. } => "balance",
            Command::Thermo { .. } => "thermo",
            Command::ShowConfig => "show-config",
        }
    }
}

fn effective_config(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut c = match &o.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &o.out {
        c.output_dir = v.clone();
    }
    if let Some(v) = &o.cache_dir {
        c.cache_dir = v.clone();
    }
    let (lx, ly, radius) = match c.domain {
        DomainSpec::Rectangle { lx, ly } => (lx, ly, None),
        DomainSpec::SinaiElementary { lx, ly, radius } => (lx, ly, Some(radius)),
        DomainSpec::TwoBox { .. } => (1.0, 1.0, None),
    };
    let (lx, ly) = (o.lx.unwrap_or(lx), o.ly.unwrap_or(ly));
    let radius = o.radius.or(radius);
    c.domain = match (o.domain, radius) {
        (Some(DomainKind::Rectangle), _) | (None, None) => DomainSpec::rectangle(lx, ly),
        (Some(DomainKind::Sinai), r) => DomainSpec::sinai(lx, ly, r.unwrap_or(0.5)),
        (None, Some(r)) => DomainSpec::sinai(lx, ly, r),
    };
    if let Some(v) = o.grid {
        c.mesh.resolution = v;
    }
    if o.arc_points.is_some() {
        c.mesh.arc_points = o.arc_points;
    }
    if let Some(v) = o.order {
        c.mesh.order = ElementOrder::try_from(v).map_err(|e| CliError::Config(e.to_string()))?;
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = o.$flag { c.$($field).+ = v; })*
        };
    }
    set!(
        levels => eigen.levels,
        tol => eigen.tol,
        lambda => pressure.parameter,
        dlam => pressure.delta,
        samples => pressure.samples,
        window => pressure.window,
        strength => two_particle.strength,
        e_cut => two_particle.e_cut,
        quad_points => two_particle.quad_points,
        t_max => two_particle.t_max,
        t_points => two_particle.t_points,
        balance_states => two_particle.balance_states,
        initial_mismatch => thermo.initial_mismatch,
        final_mismatch => thermo.final_mismatch,
        initial_max_energy => thermo.initial_max_energy,
    );
    c.validate().map_err(CliError::Config)?;
    Ok(c)
}

fn read_initial_set(path: &PathBuf) -> Result<Vec<([u32; 2], [u32; 2])>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<u32> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.len() != 4 || v.contains(&0) {
            return Err(CliError::Config(format!("{}:{}: expected four positive integers", path.display(), i + 1)));
        }
        out.push(([v[0], v[1]], [v[2], v[3]]));
    }
    Ok(out)
}

fn mode_label(m: [u32; 2]) -> String {
    format!("{}-{}", m[0], m[1])
}

fn execute(command: Command, config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::start(command.name(), config)?;
    let disc = config.discretization();
    let domain = config.domain;
    match command {
        Command::ShowConfig => unreachable!("handled before any output is written"),
        Command::Mesh => {
            let mesh = run.stage("mesh", || {
                build_mesh(&domain, config.mesh.resolution, config.mesh.arc_points).map_err(tag("mesh"))
            })?;
            run.write_file("mesh.txt", |w| mesh.write_text(w))?;
            println!(
                "{} vertices, {} triangles, area {:.6} (exact {:.6})",
                mesh.n_vertices(),
                mesh.triangles.len(),
                mesh.total_area(),
                domain_area(&domain).map_err(tag("mesh"))?.total()
            );
        }
        Command::Spectrum { vectors } => {
            let mesh = run.stage("mesh", || {
                build_mesh(&domain, config.mesh.resolution, config.mesh.arc_points).map_err(tag("mesh"))
            })?;
            let system = run.stage("fem", || assemble(&mesh, config.mesh.order).map_err(tag("fem")))?;
            let opts = EigenOptions { tol: config.eigen.tol, vectors, ..EigenOptions::default() };
            let spectrum = run.stage("eigensolve", || {
                lowest_eigenpairs_with(&system, config.eigen.levels, &opts).map_err(tag("eigensolve"))
            })?;
            run.write_csv("spectrum.csv", |w| spectrum.write_csv(w))?;
            if vectors {
                run.write_file("vectors.txt", |w| spectrum.write_vectors(w))?;
            }
            let area = domain_area(&domain).map_err(tag("eigensolve"))?.total();
            let dev = weyl_deviation(&spectrum.energies, area, domain.perimeter());
            println!(
                "{} levels up to E = {:.4}; Weyl deviation {:+.3}%; {} factorisations, {} iterations",
                spectrum.len(),
                spectrum.energies.last().unwrap(),
                100.0 * dev,
                spectrum.meta.factorizations,
                spectrum.meta.iterations
            );
        }
        Command::Pressure => {
            let p = config.pressure.parameter;
            let curve = run.stage("level_curve", || {
                level_curve(&domain, p, config.pressure.delta, config.pressure.samples, config.eigen.levels, &disc)
                    .map_err(tag("level_curve"))
            })?;
            let records = pressure_from_curve(&curve, &domain).map_err(tag("pressure"))?;
            let flagged = curve.flagged_fraction();
            if flagged > 0.0 {
                run.warn(format!("{:.2}% of levels exceed the cubic-fit residual threshold", 100.0 * flagged));
            }
            let name = format!("pressure_{}.csv", p.name().to_ascii_lowercase());
            run.write_csv(&name, |w| {
                writeln!(w, "level,E,minus_dE_dlam,P,PA,flagged")?;
                for r in &records {
                    writeln!(
                        w,
                        "{},{:.12e},{:.12e},{:.12e},{:.12e},{}",
                        r.level, r.energy, r.derivative, r.pressure, r.pressure_area, r.flagged as u8
                    )?;
                }
                Ok(())
            })?;
            println!("{} levels along {}; {:.2}% flagged", records.len(), p.name(), 100.0 * flagged);
        }
        Command::Boyle => {
            let curves = run.stage("level_curves", || {
                level_curves(
                    &domain,
                    &[Parameter::Lx, Parameter::Ly],
                    config.pressure.delta,
                    config.pressure.samples,
                    config.eigen.levels,
                    &disc,
                )
                .map_err(tag("level_curves"))
            })?;
            for c in &curves {
                let f = c.flagged_fraction();
                if f > 0.0 {
                    run.warn(format!("{}: {:.2}% of levels flagged by the cubic-fit residual", c.parameter.name(), 100.0 * f));
                }
            }
            let px = pressure_from_curve(&curves[0], &domain).map_err(tag("pressure"))?;
            let py = pressure_from_curve(&curves[1], &domain).map_err(tag("pressure"))?;
            let area = domain_area(&domain).map_err(tag("boyle"))?.total();
            let fx = boyle_fit(&px, area, config.pressure.window).map_err(tag("boyle"))?;
            let fy = boyle_fit(&py, area, config.pressure.window).map_err(tag("boyle"))?;
            run.write_csv("boyle.csv", |w| write_boyle_csv(w, &px, &py, &fx))?;
            let (q2, q4) = fx.quarter_means();
            let n = px.len();
            let spread = isotropy_spread(&px, &py, n / 2, n);
            println!("a_x = {:.4}  b_x = {:.3}", fx.slope, fx.intercept);
            println!("a_y = {:.4}  b_y = {:.3}", fy.slope, fy.intercept);
            println!("windowed fluctuation: second quarter {q2:.4}, last quarter {q4:.4}");
            let verdict = if spread < ISOTROPY_LIMIT { "isotropic" } else { "ANISOTROPIC" };
            println!("isotropy over levels {}-{n}: median spread {spread:.4} -> {verdict}", n / 2);
        }
        Command::Assemble2p => {
            let s = coupled_spectrum(&mut run, config)?;
            run.write_csv("spectrum2p.csv", |w| {
                writeln!(w, "j,E_j")?;
                for (j, e) in s.energies.iter().enumerate() {
                    writeln!(w, "{},{:.12e}", j + 1, e)?;
                }
                Ok(())
            })?;
            println!("{} product states below E_cut = {}; E_1 = {:.6}", s.dim(), config.two_particle.e_cut, s.energies[0]);
        }
        Command::Quench { m0, n0 } => {
            let s = coupled_spectrum(&mut run, config)?;
            let times = time_grid(config.two_particle.t_max, config.two_particle.t_points);
            let q = run.stage("quench", || quench(&s, m0, n0, &times).map_err(tag("quench")))?;
            if q.ensemble.leak.abs() > 1e-3 {
                run.warn(format!("truncation leak {:.2e}", q.ensemble.leak));
            }
            let name = format!("quench_{}_{}.csv", mode_label(m0), mode_label(n0));
            run.write_csv(&name, |w| q.write_csv(w))?;
            let e = &q.ensemble;
            println!(
                "eps_l = {:.4}, eps_r = {:.4}, E_tot = {:.4}; Ebar_l = {:.4}, Ebar_r = {:.4}; dQ = {:.4}; leak = {:.1e}",
                e.eps_left, e.eps_right, q.e_total, e.mean_left, e.mean_right, e.heat(), e.leak
            );
        }
        Command::Balance { m0, n0 } => {
            let s = coupled_spectrum(&mut run, config)?;
            let count = config.two_particle.balance_states.min(s.dim());
            if count < config.two_particle.balance_states {
                run.warn(format!("basis holds only {count} states"));
            }
            let ratios = energy_balance_ratios(&s, count).map_err(tag("balance"))?;
            let d = s.diagonal_ensemble(m0, n0).map_err(tag("balance"))?;
            run.write_csv("balance_ratios.csv", |w| write_balance_csv(w, &ratios, &d.overlaps))?;
            println!("{count} balance ratios written");
        }
        Command::Thermo { initial_set } => {
            let s = coupled_spectrum(&mut run, config)?;
            let initial = match &initial_set {
                Some(path) => read_initial_set(path)?,
                None => initial_states_below(&s, config.thermo.initial_max_energy),
            };
            let samples = run.stage("equilibria", || sample_equilibria(&s, &initial).map_err(tag("equilibria")))?;
            let worst_leak = samples.iter().map(|x| x.leak.abs()).fold(0.0, f64::max);
            if worst_leak > 1e-3 {
                run.warn(format!("largest truncation leak {worst_leak:.2e}"));
            }
            run.write_csv("thermo_samples.csv", |w| write_samples_csv(w, &samples))?;
            let analysis = analyse(&samples, &config.thresholds()).map_err(tag("thermo"))?;
            run.write_csv("temperature_offsets.csv", |w| write_offsets_csv(w, &analysis.offsets))?;
            println!(
                "{} of {} samples accepted; alpha_l = {:.4}, alpha_r = {:.4}",
                analysis.accepted.len(),
                samples.len(),
                analysis.left.alpha,
                analysis.right.alpha
            );
        }
    }
    run.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = effective_config(&cli.overrides).and_then(|config| match cli.command {
        Command::ShowConfig => {
            print!("{}", config.to_toml());
            Ok(())
        }
        command => execute(command, &config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

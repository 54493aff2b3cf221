//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Criteria can be selected by name:
//! `cargo test -p billiard-thermo --test acceptance -- A1 A5`.

use std::process::ExitCode;
use std::time::Instant;

use billiard_thermo::fem::ElementOrder;
use billiard_thermo::fit::interquartile_range;
use billiard_thermo::geometry::{domain_area, DomainSpec, MeshLayout, Parameter};
use billiard_thermo::pressure::{
    boyle_fit, energies_at, isotropy_spread, level_curves_with_reference, perturbative_derivatives,
    pressure_from_curve, Discretization,
};
use billiard_thermo::spectral::{rectangle_levels, weyl_deviation};
use billiard_thermo::thermo::{analyse, equal_count_bins, initial_states_below, sample_equilibria, Thresholds};
use billiard_thermo::twoparticle::{
    coupled_spectrum, energy_balance_ratios, power_concentration, quench, time_grid, CoupledSpectrum,
};

// A1
const A1_RESOLUTION: usize = 64;
const A1_LEVELS: usize = 100;
const A1_REL_TOL: f64 = 1e-3;
const A1_SECONDS: f64 = 60.0;

// A2
const SINAI: (f64, f64, f64) = (1.09, 1.00, 0.5);
const A2_RESOLUTION: usize = 100;
const A2_LEVELS: usize = 800;
const A2_WEYL_TOL: f64 = 0.03;
const A2_SECONDS: f64 = 900.0;

// A3
const A3_DELTA: f64 = 0.01;
const A3_SAMPLES: usize = 5;
const A3_WINDOW: usize = 25;
const A3_SLOPE: (f64, f64) = (0.98, 1.04);
const A3_INTERCEPT_MAX: f64 = 50.0;

// A4
const A4_RATIO: f64 = 0.4;
const A4_RATIO_TOL: f64 = 5e-3;
const A4_LEVEL_RANGE: (usize, usize) = (400, 800);
const A4_SPREAD_MAX: f64 = 0.10;
const A4_RECT_RESOLUTION: usize = 32;
const A4_RECT_STEP: f64 = 1e-4;

// two-particle configuration
const CHAMBER: DomainSpec = DomainSpec::TwoBox { lx_left: 1.1, lx_right: 1.3, ly: 1.4, wall: 0.001 };
const STRENGTH: f64 = -50.0;
const E_CUT: f64 = 300.0;
const QUAD_POINTS: usize = 40;
const T_MAX: f64 = 100.0;
const T_POINTS: usize = 2000;
const EQUILIBRATING: ([u32; 2], [u32; 2]) = ([2, 4], [1, 1]);
const NON_EQUILIBRATING: ([u32; 2], [u32; 2]) = ([1, 3], [4, 1]);

// A5
const A5_CONSERVATION: f64 = 1e-10;
const A5_LEAK: f64 = 1e-3;
const A5_CUTOFF_CHANGE: f64 = 0.02;

// A6
const A6_WINDOW_START: f64 = 50.0;
const A6_TOP_BINS: usize = 5;
const A6_POWER_FRACTION: f64 = 0.8;

// A7
const A7_STATES: usize = 1000;
const A7_IQR_RATIO: f64 = 0.5;

// A8
const A8_INITIAL_MAX_ENERGY: f64 = 150.0;
const A8_MIN_SAMPLES: usize = 20;
const A8_BINS: usize = 4;
const A8_CHECKED_BINS: usize = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Outcome { pass: false, detail: format!("error: {e}") }
    }
}

/// Expensive inputs shared between criteria, computed on first use.
#[derive(Default)]
struct Shared {
    sinai_reference: Option<(Vec<f64>, f64)>,
    coupled: Option<CoupledSpectrum>,
    uncoupled: Option<CoupledSpectrum>,
}

fn sinai() -> DomainSpec {
    DomainSpec::sinai(SINAI.0, SINAI.1, SINAI.2)
}

fn sinai_disc() -> Discretization {
    Discretization { resolution: A2_RESOLUTION, order: ElementOrder::Quadratic, ..Discretization::default() }
}

impl Shared {
    fn sinai_reference(&mut self) -> Result<&(Vec<f64>, f64), String> {
        if self.sinai_reference.is_none() {
            let spec = sinai();
            let disc = sinai_disc();
            let start = Instant::now();
            let layout = MeshLayout::for_spec(&spec, disc.resolution, disc.arc_points).map_err(|e| e.to_string())?;
            let e = energies_at(&spec, &layout, A2_LEVELS, &disc).map_err(|e| e.to_string())?;
            self.sinai_reference = Some((e, start.elapsed().as_secs_f64()));
        }
        Ok(self.sinai_reference.as_ref().unwrap())
    }

    fn coupled(&mut self) -> Result<&CoupledSpectrum, String> {
        if self.coupled.is_none() {
            self.coupled = Some(coupled_spectrum(&CHAMBER, E_CUT, STRENGTH, QUAD_POINTS).map_err(|e| e.to_string())?);
        }
        Ok(self.coupled.as_ref().unwrap())
    }

    fn uncoupled(&mut self) -> Result<&CoupledSpectrum, String> {
        if self.uncoupled.is_none() {
            self.uncoupled = Some(coupled_spectrum(&CHAMBER, E_CUT, 0.0, QUAD_POINTS).map_err(|e| e.to_string())?);
        }
        Ok(self.uncoupled.as_ref().unwrap())
    }
}

fn a1(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let spec = DomainSpec::rectangle(1.0, 1.0);
    let disc = Discretization { resolution: A1_RESOLUTION, ..Discretization::default() };
    let layout = match MeshLayout::for_spec(&spec, disc.resolution, None) {
        Ok(l) => l,
        Err(e) => return Outcome::error(e),
    };
    let e = match energies_at(&spec, &layout, A1_LEVELS, &disc) {
        Ok(e) => e,
        Err(e) => return Outcome::error(e),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let exact = rectangle_levels(1.0, 1.0, A1_LEVELS);
    let worst = e.iter().zip(&exact).map(|(a, b)| (a - b.0).abs() / b.0).fold(0.0, f64::max);
    Outcome::new(
        worst < A1_REL_TOL && elapsed < A1_SECONDS,
        format!(
            "max relative error {worst:.2e} (< {A1_REL_TOL:.0e}) over {A1_LEVELS} levels, {elapsed:.1} s (< {A1_SECONDS} s)"
        ),
    )
}

fn a2(shared: &mut Shared) -> Outcome {
    let spec = sinai();
    let (e, elapsed) = match shared.sinai_reference() {
        Ok(r) => r.clone(),
        Err(e) => return Outcome::error(e),
    };
    let area = domain_area(&spec).unwrap().total();
    let dev = weyl_deviation(&e, area, spec.perimeter());
    Outcome::new(
        dev.abs() < A2_WEYL_TOL && elapsed < A2_SECONDS,
        format!(
            "Weyl deviation {:+.3}% at E_800 = {:.2} (< {}%), {elapsed:.0} s (< {A2_SECONDS} s)",
            100.0 * dev,
            e[A2_LEVELS - 1],
            100.0 * A2_WEYL_TOL
        ),
    )
}

type Pressures = (Vec<billiard_thermo::pressure::PressureRecord>, Vec<billiard_thermo::pressure::PressureRecord>, f64);

fn sinai_pressures(shared: &mut Shared) -> Result<Pressures, String> {
    let spec = sinai();
    let reference = shared.sinai_reference()?.0.clone();
    let curves = level_curves_with_reference(
        &spec,
        &[Parameter::Lx, Parameter::Ly],
        A3_DELTA,
        A3_SAMPLES,
        A2_LEVELS,
        &sinai_disc(),
        Some(reference),
    )
    .map_err(|e| e.to_string())?;
    let flagged = curves.iter().map(|c| c.flagged_fraction()).fold(0.0, f64::max);
    let px = pressure_from_curve(&curves[0], &spec).map_err(|e| e.to_string())?;
    let py = pressure_from_curve(&curves[1], &spec).map_err(|e| e.to_string())?;
    Ok((px, py, flagged))
}

fn a3_a4_sinai(shared: &mut Shared) -> (Outcome, Outcome) {
    let (px, py, flagged) = match sinai_pressures(shared) {
        Ok(r) => r,
        Err(e) => return (Outcome::error(&e), Outcome::error(&e)),
    };
    let area = domain_area(&sinai()).unwrap().total();
    let (fx, fy) = match (boyle_fit(&px, area, A3_WINDOW), boyle_fit(&py, area, A3_WINDOW)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return (Outcome::error(&e), Outcome::error(&e)),
    };
    let in_band = |a: f64| a >= A3_SLOPE.0 && a <= A3_SLOPE.1;
    let (second, last) = fx.quarter_means();
    let a3 = Outcome::new(
        in_band(fx.slope)
            && in_band(fy.slope)
            && fx.intercept.abs() < A3_INTERCEPT_MAX
            && fy.intercept.abs() < A3_INTERCEPT_MAX
            && last < second,
        format!(
            "a_x = {:.4}, a_y = {:.4} (in [{}, {}]); b_x = {:.2}, b_y = {:.2} (|b| < {}); window fluctuation Q2 {:.4} > Q4 {:.4}; flagged {:.2}%",
            fx.slope,
            fy.slope,
            A3_SLOPE.0,
            A3_SLOPE.1,
            fx.intercept,
            fy.intercept,
            A3_INTERCEPT_MAX,
            second,
            last,
            100.0 * flagged
        ),
    );
    let spread = isotropy_spread(&px, &py, A4_LEVEL_RANGE.0, A4_LEVEL_RANGE.1);
    (a3, Outcome::new(spread < A4_SPREAD_MAX, format!("{spread:.4}")))
}

/// `P_x A / E` for the two branches of the (1,2)/(2,1) pair of the unit
/// square, smaller first.
fn a4_rectangle() -> Result<[f64; 2], String> {
    let spec = DomainSpec::rectangle(1.0, 1.0);
    let disc = Discretization { resolution: A4_RECT_RESOLUTION, ..Discretization::default() };
    let d = perturbative_derivatives(&spec, Parameter::Lx, A4_RECT_STEP, 3, &disc).map_err(|e| e.to_string())?;
    let da = spec.area_derivative(Parameter::Lx).unwrap();
    let area = domain_area(&spec).unwrap().total();
    let mut r = [1, 2].map(|i| -d[i].1 / da * area / d[i].0);
    r.sort_by(f64::total_cmp);
    Ok(r)
}

fn a4(rect: Result<[f64; 2], String>, sinai: Outcome) -> Outcome {
    let r = match rect {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    let rect_ok = (r[0] / A4_RATIO - 1.0).abs() < A4_RATIO_TOL;
    let spread_ok = sinai.pass;
    Outcome::new(
        rect_ok && spread_ok,
        format!(
            "rectangle (1,2): P_x A / E = {:.5} (target {A4_RATIO} within {}%), partner (2,1) {:.5}; Sinai median |Px-Py|/mean over levels {}-{} = {} (< {A4_SPREAD_MAX})",
            r[0],
            100.0 * A4_RATIO_TOL,
            r[1],
            A4_LEVEL_RANGE.0,
            A4_LEVEL_RANGE.1,
            sinai.detail
        ),
    )
}

fn a5(shared: &mut Shared) -> Outcome {
    let times = time_grid(T_MAX, T_POINTS);
    let (m0, n0) = EQUILIBRATING;
    let base = match shared.coupled().and_then(|s| quench(s, m0, n0, &times).map_err(|e| e.to_string())) {
        Ok(q) => q,
        Err(e) => return Outcome::error(e),
    };
    let conservation = base.conservation_error();
    let leak = base.ensemble.leak.abs();
    let doubled = match coupled_spectrum(&CHAMBER, 2.0 * E_CUT, STRENGTH, QUAD_POINTS)
        .and_then(|s| s.diagonal_ensemble(m0, n0))
    {
        Ok(d) => d,
        Err(e) => return Outcome::error(e),
    };
    let change_l = (doubled.mean_left - base.ensemble.mean_left).abs() / base.ensemble.mean_left;
    let change_r = (doubled.mean_right - base.ensemble.mean_right).abs() / base.ensemble.mean_right;
    Outcome::new(
        conservation < A5_CONSERVATION && leak < A5_LEAK && change_l < A5_CUTOFF_CHANGE && change_r < A5_CUTOFF_CHANGE,
        format!(
            "energy drift {conservation:.1e} (< {A5_CONSERVATION:.0e}); leak {leak:.1e} (< {A5_LEAK:.0e}); E_cut {E_CUT} -> {}: Ebar_l {:.3} -> {:.3} ({:.2}%), Ebar_r {:.3} -> {:.3} ({:.2}%) (< {}%)",
            2.0 * E_CUT,
            base.ensemble.mean_left,
            doubled.mean_left,
            100.0 * change_l,
            base.ensemble.mean_right,
            doubled.mean_right,
            100.0 * change_r,
            100.0 * A5_CUTOFF_CHANGE
        ),
    )
}

fn a6(shared: &mut Shared) -> Outcome {
    let times = time_grid(T_MAX, T_POINTS);
    let spec = match shared.coupled() {
        Ok(s) => s,
        Err(e) => return Outcome::error(e),
    };
    let run = |(m0, n0): ([u32; 2], [u32; 2])| quench(spec, m0, n0, &times);
    let (qa, qb) = match (run(EQUILIBRATING), run(NON_EQUILIBRATING)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::error(e),
    };
    let (mean_a, amp_a) = qa.left_window(A6_WINDOW_START);
    let transfer_a = (qa.ensemble.eps_left - mean_a).abs();
    let (mean_b, amp_b) = qb.left_window(A6_WINDOW_START);
    let transfer_b = (qb.ensemble.eps_left - mean_b).abs();
    let power_b = power_concentration(&qb.left, A6_TOP_BINS);
    let ok_a = amp_a < transfer_a;
    let ok_b = transfer_b < amp_b && power_b >= A6_POWER_FRACTION;
    Outcome::new(
        ok_a && ok_b,
        format!(
            "(2,4),(1,1): amplitude {amp_a:.2} < transfer {transfer_a:.2} [{}]; (1,3),(4,1): transfer {transfer_b:.2} < amplitude {amp_b:.2} [{}], top-{A6_TOP_BINS} power {:.1}% (>= {}%) [{}]; V_int std {:.2} / {:.2} vs 10% of |E_tot| {:.2} / {:.2}",
            if ok_a { "ok" } else { "no" },
            if transfer_b < amp_b { "ok" } else { "no" },
            100.0 * power_b,
            100.0 * A6_POWER_FRACTION,
            if power_b >= A6_POWER_FRACTION { "ok" } else { "no" },
            qa.interaction_std(),
            qb.interaction_std(),
            0.1 * qa.e_total.abs(),
            0.1 * qb.e_total.abs()
        ),
    )
}

fn a7(shared: &mut Shared) -> Outcome {
    let coupled = match shared.coupled().and_then(|s| {
        let r = energy_balance_ratios(s, s.dim()).map_err(|e| e.to_string())?;
        let dom = |(m0, n0): ([u32; 2], [u32; 2])| -> Result<usize, String> {
            let d = s.diagonal_ensemble(m0, n0).map_err(|e| e.to_string())?;
            Ok((0..d.overlaps.len()).max_by(|&a, &b| d.overlaps[a].total_cmp(&d.overlaps[b])).unwrap())
        };
        Ok((r, dom(EQUILIBRATING)?, dom(NON_EQUILIBRATING)?))
    }) {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    let (ratios, dom_a, dom_b) = coupled;
    let free = match shared.uncoupled() {
        Ok(s) => s,
        Err(e) => return Outcome::error(e),
    };
    let free_ratios = match energy_balance_ratios(free, A7_STATES) {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    let b = &free.basis;
    let exact = free_ratios.iter().all(|r| {
        let j = r.j - 1;
        let i = (0..b.len()).find(|&i| free.vectors[(i, j)] == 1.0);
        i.is_some_and(|i| r.ln_ratio == (b.left_energy(i) / b.right_energy(i)).ln())
    });
    let iqr_k = interquartile_range(&ratios[..A7_STATES].iter().map(|r| r.ln_ratio).collect::<Vec<_>>());
    let iqr_0 = interquartile_range(&free_ratios.iter().map(|r| r.ln_ratio).collect::<Vec<_>>());
    let (ra, rb) = (ratios[dom_a].ln_ratio.abs(), ratios[dom_b].ln_ratio.abs());
    Outcome::new(
        iqr_k <= A7_IQR_RATIO * iqr_0 && exact && ra < rb,
        format!(
            "IQR {iqr_k:.3} at k = {STRENGTH} vs {iqr_0:.3} at k = 0 (ratio {:.3} <= {A7_IQR_RATIO}); k = 0 ratios exact: {exact}; dominant |ln ratio| (2,4),(1,1) {ra:.3} < (1,3),(4,1) {rb:.3}",
            iqr_k / iqr_0
        ),
    )
}

fn a8(shared: &mut Shared) -> Outcome {
    let spec = match shared.coupled() {
        Ok(s) => s,
        Err(e) => return Outcome::error(e),
    };
    let initial = initial_states_below(spec, A8_INITIAL_MAX_ENERGY);
    let samples = match sample_equilibria(spec, &initial) {
        Ok(s) => s,
        Err(e) => return Outcome::error(e),
    };
    let analysis = match analyse(&samples, &Thresholds::default()) {
        Ok(a) => a,
        Err(e) => return Outcome::error(e),
    };
    let n = analysis.accepted.len();
    let second_law = analysis.accepted.iter().all(|s| s.s_left + s.s_right > 0.0);
    if n < A8_BINS {
        return Outcome::new(false, format!("{n} filtered samples (>= {A8_MIN_SAMPLES})"));
    }
    let bins = equal_count_bins(&analysis.offsets, A8_BINS, |o| o.dt_rel);
    let trend = bins[..A8_CHECKED_BINS].windows(2).all(|w| w[1].1 <= w[0].1);
    let shown: Vec<String> = bins.iter().map(|(e, v)| format!("{e:.0}:{v:.3}")).collect();
    Outcome::new(
        n >= A8_MIN_SAMPLES && trend && second_law && analysis.left.alpha > 0.0 && analysis.right.alpha > 0.0,
        format!(
            "{n} of {} samples pass the filters (>= {A8_MIN_SAMPLES}); binned dT_rel (E:value) [{}], first {A8_CHECKED_BINS} non-increasing: {trend}; S_l + S_r > 0 for all: {second_law}; alpha_l = {:.3}, alpha_r = {:.3}",
            samples.len(),
            shown.join(", "),
            analysis.left.alpha,
            analysis.right.alpha
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wants = |name: &str| selected.is_empty() || selected.iter().any(|s| s.eq_ignore_ascii_case(name));
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| {
        println!("{name} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };

    if wants("A1") {
        report("A1", a1(&mut shared));
    }
    if wants("A2") {
        report("A2", a2(&mut shared));
    }
    if wants("A3") || wants("A4") {
        let (a3, sinai) = a3_a4_sinai(&mut shared);
        if wants("A3") {
            report("A3", a3);
        }
        if wants("A4") {
            report("A4", a4(a4_rectangle(), sinai));
        }
    }
    if wants("A5") {
        report("A5", a5(&mut shared));
    }
    if wants("A6") {
        report("A6", a6(&mut shared));
    }
    if wants("A7") {
        report("A7", a7(&mut shared));
    }
    if wants("A8") {
        report("A8", a8(&mut shared));
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

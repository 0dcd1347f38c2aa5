//! Experiment runner: one subcommand per figure or theorem check, each
//! writing a CSV file and printing a summary block.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{harmonic, HamiltonianState, Observable, OdeScheme, SdeScheme};
use crate::error::{invalid, Error, Result};
use crate::measure::{
    energy_check, fit_order, ode_order_curve, optimizer_order_curve, ou_order_curve, random_quadratic_and_point,
    sigma_check, stability_experiment, ErrorCurve, OrderFit, Reference, StabilityConfig, Verdict, WeakErrorMode,
};
use crate::objective::Quadratic;

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "modsde", version, about = "Modified-equation experiments for SDE integrators and stochastic optimizers")]
pub struct Cli {
    #[command(subcommand)]
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// CSV output path [default: ./out/<experiment>.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit with status 4 when the acceptance window is missed
    #[arg(long)]
    pub check: bool,
    /// Worker threads for Monte Carlo paths [default: all cores]
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Experiment {
    /// Global error of Euler / symplectic Euler on the harmonic oscillator
    OdeOrder(OdeOrderArgs),
    /// Exact, Euler and symplectic Euler trajectories of the harmonic oscillator
    OdeTrajectory(OdeTrajectoryArgs),
    /// Weak error of Euler-Maruyama / implicit Euler on the OU process
    OuWeakOrder(OuWeakOrderArgs),
    /// Weak error of random coordinate descent against its modified SDE
    OptimizerWeakOrder(OptimizerWeakOrderArgs),
    /// Closed-form vs enumerated covariance of single-coordinate descent
    SigmaCheck(SigmaCheckArgs),
    /// Mean-square decay of the modified SDE vs the theoretical bound
    Stability(StabilityArgs),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::OdeOrder(_) => "ode-order",
            Experiment::OdeTrajectory(_) => "ode-trajectory",
            Experiment::OuWeakOrder(_) => "ou-weak-order",
            Experiment::OptimizerWeakOrder(_) => "optimizer-weak-order",
            Experiment::SigmaCheck(_) => "sigma-check",
            Experiment::Stability(_) => "stability",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Experiment::OdeOrder(a) => &a.common,
            Experiment::OdeTrajectory(a) => &a.common,
            Experiment::OuWeakOrder(a) => &a.common,
            Experiment::OptimizerWeakOrder(a) => &a.common,
            Experiment::SigmaCheck(a) => &a.common,
            Experiment::Stability(a) => &a.common,
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.common().out.clone().unwrap_or_else(|| Path::new("out").join(format!("{}.csv", self.name())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OdeMethod {
    Euler,
    #[value(alias = "symplectic-euler")]
    Symplectic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SdeMethod {
    #[value(alias = "euler-maruyama")]
    Em,
    #[value(alias = "implicit-euler")]
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    Exact,
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Recursion,
    Mc,
}

#[derive(Debug, Clone, Args)]
pub struct OdeOrderArgs {
    #[arg(long, value_enum, default_value_t = OdeMethod::Euler)]
    pub method: OdeMethod,
    #[arg(long, value_enum, default_value_t = ReferenceArg::Exact)]
    pub reference: ReferenceArg,
    #[arg(long = "T", default_value_t = 15.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p0: f64,
    #[arg(long, default_value_t = 0.0)]
    pub q0: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.03,0.015,0.0075,0.00375,0.001875")]
    pub h_grid: Vec<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct OdeTrajectoryArgs {
    #[arg(long, default_value_t = 0.0375)]
    pub h: f64,
    #[arg(long = "T", default_value_t = 15.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p0: f64,
    #[arg(long, default_value_t = 0.0)]
    pub q0: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct OuWeakOrderArgs {
    #[arg(long, value_enum, default_value_t = SdeMethod::Em)]
    pub method: SdeMethod,
    #[arg(long, value_enum, default_value_t = ReferenceArg::Exact)]
    pub reference: ReferenceArg,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 10.0)]
    pub x0: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.0125,0.00625")]
    pub h_grid: Vec<f64>,
    /// Test function: x1 or x1^2
    #[arg(long, default_value = "x1^2")]
    pub phi: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Recursion)]
    pub mode: ModeArg,
    /// Monte Carlo paths (mc mode only)
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerWeakOrderArgs {
    /// `diag:a,b,...` or `full:a11,a12;a21,a22`
    #[arg(long, default_value = "diag:1,2")]
    pub matrix: String,
    /// Linear term b of F(x) = x'Ax/2 + b'x [default: zero]
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub linear: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "3,-2")]
    pub x0: Vec<f64>,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.04,0.02,0.01,0.005")]
    pub h_grid: Vec<f64>,
    /// Test function: xi, xi^2 or xi*xj (1-based)
    #[arg(long, default_value = "x1^2")]
    pub phi: String,
    /// Measure the one-step error (T = h) instead of the error at T
    #[arg(long)]
    pub local: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct SigmaCheckArgs {
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct StabilityArgs {
    #[arg(long, default_value = "diag:1,2")]
    pub matrix: String,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub linear: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "3,-2")]
    pub x0: Vec<f64>,
    #[arg(long = "T", default_value_t = 3.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Inner Euler-Maruyama step, at most h/100
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
    #[arg(long, default_value_t = 30)]
    pub grid: usize,
    #[command(flatten)]
    pub common: Common,
}

/// What an experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub csv: String,
    pub summary: String,
    /// Whether the acceptance window was met.
    pub passed: bool,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses `diag:a,b,...` or `full:a11,a12;a21,a22`.
pub fn parse_matrix(spec: &str) -> Result<DMatrix<f64>> {
    let bad = |why: &str| invalid(format!("--matrix '{spec}': {why}"));
    let (kind, body) = spec.split_once(':').ok_or_else(|| bad("expected 'diag:' or 'full:' prefix"))?;
    let numbers = |row: &str| -> Result<Vec<f64>> {
        row.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad(&format!("'{}' is not a number", s.trim()))))
            .collect()
    };
    match kind.trim() {
        "diag" => {
            let d = numbers(body)?;
            Ok(DMatrix::from_diagonal(&DVector::from_vec(d)))
        }
        "full" => {
            let rows = body.split(';').map(numbers).collect::<Result<Vec<_>>>()?;
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(bad("rows must all have as many entries as there are rows"));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        }
        other => Err(bad(&format!("unknown kind '{other}'"))),
    }
}

/// Parses `xi`, `xi^2` or `xi*xj` with 1-based indices.
pub fn parse_observable(s: &str) -> Result<Observable> {
    let bad = || invalid(format!("--phi '{s}': expected xi, xi^2 or xi*xj"));
    let index = |t: &str| -> Result<usize> {
        t.trim().strip_prefix('x').and_then(|n| n.parse::<usize>().ok()).filter(|&i| i >= 1).map(|i| i - 1).ok_or_else(bad)
    };
    if let Some(base) = s.strip_suffix("^2") {
        let i = index(base)?;
        Ok(Observable::Product(i, i))
    } else if let Some((a, b)) = s.split_once('*') {
        Ok(Observable::Product(index(a)?, index(b)?))
    } else {
        Ok(Observable::Component(index(s)?))
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("--{name} must be positive and finite, got {value}")))
    }
}

fn finite(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(invalid(format!("--{name} must be finite, got {v}"))),
        None => Ok(()),
    }
}

fn check_grid(grid: &[f64], horizon: Option<f64>) -> Result<()> {
    if grid.len() < 3 {
        return Err(invalid(format!("--h-grid needs at least 3 values, got {}", grid.len())));
    }
    for &h in grid {
        positive("h-grid", h)?;
        if let Some(t) = horizon {
            crate::integrate::steps_to(h, t).map_err(|_| invalid(format!("--h-grid value {h} does not divide --T {t}")))?;
        }
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("--h-grid must be strictly decreasing"));
    }
    Ok(())
}

fn quadratic(matrix: &str, linear: &Option<Vec<f64>>) -> Result<Quadratic> {
    let a = parse_matrix(matrix)?;
    let d = a.nrows();
    let b = match linear {
        Some(b) if b.len() != d => {
            return Err(invalid(format!("--linear has {} entries, --matrix is {d}x{d}", b.len())));
        }
        Some(b) => {
            finite("linear", b)?;
            DVector::from_column_slice(b)
        }
        None => DVector::zeros(d),
    };
    Quadratic::new(a, b).map_err(|e| invalid(format!("--matrix: {e}")))
}

fn curve_csv(curve: &ErrorCurve) -> String {
    let mut out = String::from("h,error,stderr\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", fmt_f64(p.h), fmt_f64(p.error), fmt_f64(p.stderr));
    }
    out
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn fit_summary(curve: &ErrorCurve, window: (f64, f64)) -> Result<(OrderFit, bool, String)> {
    let kept = curve.without_zeros();
    let fit = fit_order(&kept)?;
    let passed = fit.within(window.0, window.1);
    let mut s = String::new();
    let _ = writeln!(s, "slope: {}", fit.slope);
    let _ = writeln!(s, "r_squared: {}", fit.r_squared);
    if kept.points.len() < curve.points.len() {
        let _ = writeln!(s, "zero_error_points_dropped: {}", curve.points.len() - kept.points.len());
    }
    let _ = writeln!(s, "window: [{}, {}]", window.0, window.1);
    let _ = writeln!(s, "verdict: {}", verdict(passed));
    Ok((fit, passed, s))
}

fn ode_order(a: &OdeOrderArgs) -> Result<Outcome> {
    positive("T", a.horizon)?;
    finite("p0", &[a.p0])?;
    finite("q0", &[a.q0])?;
    check_grid(&a.h_grid, Some(a.horizon))?;
    let scheme = match a.method {
        OdeMethod::Euler => OdeScheme::Euler,
        OdeMethod::Symplectic => OdeScheme::SymplecticEuler,
    };
    let (reference, window) = match a.reference {
        ReferenceArg::Exact => (Reference::Exact, (0.9, 1.1)),
        ReferenceArg::Modified => (Reference::Modified, (1.8, 2.2)),
    };
    let x0 = HamiltonianState::new(a.p0, a.q0).to_vector();
    let curve = ode_order_curve(scheme, reference, &x0, a.horizon, &a.h_grid)?;
    let (_, passed, fit) = fit_summary(&curve, window)?;
    let summary = format!("method: {:?}\nreference: {:?}\nT: {}\n{fit}", a.method, a.reference, a.horizon);
    Ok(Outcome { csv: curve_csv(&curve), summary, passed })
}

/// Relative tolerances for the energy laws of the trajectory experiment.
pub const EULER_ENERGY_TOL: f64 = 1e-10;
pub const SYMPLECTIC_ENERGY_TOL: f64 = 1e-12;

fn ode_trajectory(a: &OdeTrajectoryArgs) -> Result<Outcome> {
    positive("h", a.h)?;
    positive("T", a.horizon)?;
    finite("p0", &[a.p0])?;
    finite("q0", &[a.q0])?;
    crate::integrate::steps_to(a.h, a.horizon).map_err(|_| invalid(format!("--h {} does not divide --T {}", a.h, a.horizon)))?;
    let x0 = HamiltonianState::new(a.p0, a.q0).to_vector();
    if x0.norm() == 0.0 {
        return Err(invalid("--p0 and --q0 are both zero; energies are identically zero"));
    }
    let check = energy_check(&x0, a.h, a.horizon)?;
    let prob = harmonic();
    let mut csv = String::from("t,series,dim0,dim1\n");
    for (name, traj) in [("euler", &check.euler), ("symplectic", &check.symplectic)] {
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let _ = writeln!(csv, "{},{name},{},{}", fmt_f64(*t), fmt_f64(x[0]), fmt_f64(x[1]));
        }
    }
    for &t in &check.euler.times {
        let x = prob.exact(&x0, t)?;
        let _ = writeln!(csv, "{},exact,{},{}", fmt_f64(t), fmt_f64(x[0]), fmt_f64(x[1]));
    }
    let radius = check.euler.final_state().norm() / x0.norm();
    let predicted_radius = (1.0 + a.h * a.h).powf(check.steps as f64 / 2.0);
    let euler_ok = check.euler_relative_error() < EULER_ENERGY_TOL;
    let symplectic_ok = check.symplectic_max_drift < SYMPLECTIC_ENERGY_TOL;
    let passed = euler_ok && symplectic_ok;
    let summary = format!(
        "h: {}\nsteps: {}\neuler_final_radius_ratio: {radius}\npredicted_radius_ratio: {predicted_radius}\n\
         euler_energy_relative_error: {:e}\nsymplectic_modified_energy_max_drift: {:e}\nverdict: {}\n",
        a.h,
        check.steps,
        check.euler_relative_error(),
        check.symplectic_max_drift,
        verdict(passed)
    );
    Ok(Outcome { csv, summary, passed })
}

fn ou_weak_order(a: &OuWeakOrderArgs) -> Result<Outcome> {
    positive("gamma", a.gamma)?;
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(invalid(format!("--sigma must be non-negative, got {}", a.sigma)));
    }
    finite("x0", &[a.x0])?;
    positive("T", a.horizon)?;
    check_grid(&a.h_grid, Some(a.horizon))?;
    let phi = parse_observable(&a.phi)?;
    phi.check(1).map_err(|_| invalid(format!("--phi '{}' indexes past the OU dimension 1", a.phi)))?;
    let mode = match a.mode {
        ModeArg::Recursion => WeakErrorMode::Recursion,
        ModeArg::Mc => {
            if a.paths < 2 {
                return Err(invalid(format!("--paths must be at least 2, got {}", a.paths)));
            }
            WeakErrorMode::MonteCarlo { paths: a.paths, seed: a.common.seed, workers: a.common.workers }
        }
    };
    let scheme = match a.method {
        SdeMethod::Em => SdeScheme::EulerMaruyama,
        SdeMethod::Implicit => SdeScheme::ImplicitEuler,
    };
    let (reference, window) = match a.reference {
        ReferenceArg::Exact => (Reference::Exact, (0.9, 1.1)),
        ReferenceArg::Modified => (Reference::Modified, (1.8, 2.2)),
    };
    let curve = ou_order_curve(scheme, reference, a.gamma, a.sigma, a.x0, a.horizon, &a.h_grid, phi, mode)?;
    let (_, passed, fit) = fit_summary(&curve, window)?;
    let summary = format!(
        "method: {:?}\nreference: {:?}\nphi: {phi}\ngamma: {}\nsigma: {}\nx0: {}\nT: {}\nmode: {:?}\n{fit}",
        a.method, a.reference, a.gamma, a.sigma, a.x0, a.horizon, a.mode
    );
    Ok(Outcome { csv: curve_csv(&curve), summary, passed })
}

fn optimizer_weak_order(a: &OptimizerWeakOrderArgs) -> Result<Outcome> {
    let q = quadratic(&a.matrix, &a.linear)?;
    let d = q.b().len();
    if a.x0.len() != d {
        return Err(invalid(format!("--x0 has {} entries, --matrix is {d}x{d}", a.x0.len())));
    }
    finite("x0", &a.x0)?;
    positive("T", a.horizon)?;
    check_grid(&a.h_grid, if a.local { None } else { Some(a.horizon) })?;
    let phi = parse_observable(&a.phi)?;
    phi.check(d).map_err(|_| invalid(format!("--phi '{}' indexes past dimension {d}", a.phi)))?;
    let x0 = DVector::from_column_slice(&a.x0);
    let curve = optimizer_order_curve(&q, &x0, a.horizon, &a.h_grid, phi, a.local)?;
    let window = if a.local { (2.7, 3.3) } else { (1.8, 2.2) };
    let (_, passed, fit) = fit_summary(&curve, window)?;
    let summary = format!(
        "matrix: {}\nphi: {phi}\nerror: {}\n{fit}",
        a.matrix,
        if a.local { "one-step".to_string() } else { format!("global at T = {}", a.horizon) }
    );
    Ok(Outcome { csv: curve_csv(&curve), summary, passed })
}

/// Tolerances of the covariance check.
pub const SIGMA_MATCH_TOL: f64 = 1e-12;
pub const SIGMA_TRACE_TOL: f64 = 1e-10;

fn sigma_check_experiment(a: &SigmaCheckArgs) -> Result<Outcome> {
    if !(1..=64).contains(&a.d) {
        return Err(invalid(format!("--d must lie in 1..=64, got {}", a.d)));
    }
    if a.trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let mut csv = String::from("trial,d,max_abs_diff,trace_residual\n");
    let (mut worst_diff, mut worst_trace, mut worst_magnitude) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..a.trials {
        let (q, x) = random_quadratic_and_point(&mut rng, a.d)?;
        let c = sigma_check(&q, &x)?;
        worst_diff = worst_diff.max(c.max_abs_diff);
        worst_trace = worst_trace.max(c.trace_residual);
        worst_magnitude = worst_magnitude.max(c.magnitude);
        let _ = writeln!(csv, "{trial},{},{},{}", a.d, fmt_f64(c.max_abs_diff), fmt_f64(c.trace_residual));
    }
    let mut passed = worst_diff < SIGMA_MATCH_TOL && worst_trace < SIGMA_TRACE_TOL;
    if a.d == 1 {
        passed &= worst_magnitude == 0.0;
    }
    let summary = format!(
        "d: {}\ntrials: {}\nmax_abs_diff: {worst_diff:e}\nmax_trace_residual: {worst_trace:e}\nverdict: {}\n",
        a.d,
        a.trials,
        verdict(passed)
    );
    Ok(Outcome { csv, summary, passed })
}

fn stability(a: &StabilityArgs) -> Result<Outcome> {
    let q = quadratic(&a.matrix, &a.linear)?;
    let d = q.b().len();
    if a.x0.len() != d {
        return Err(invalid(format!("--x0 has {} entries, --matrix is {d}x{d}", a.x0.len())));
    }
    finite("x0", &a.x0)?;
    positive("h", a.h)?;
    positive("T", a.horizon)?;
    positive("delta", a.delta)?;
    if a.delta > a.h / 100.0 * (1.0 + 1e-12) {
        return Err(invalid(format!("--delta {} exceeds h/100 = {}", a.delta, a.h / 100.0)));
    }
    if a.paths < 2 {
        return Err(invalid(format!("--paths must be at least 2, got {}", a.paths)));
    }
    if a.grid == 0 {
        return Err(invalid("--grid must be at least 1"));
    }
    crate::integrate::steps_to(a.delta, a.horizon / a.grid as f64)
        .map_err(|_| invalid(format!("--delta {} does not divide the grid spacing T/grid = {}", a.delta, a.horizon / a.grid as f64)))?;
    let cfg = StabilityConfig {
        h: a.h,
        x0: DVector::from_column_slice(&a.x0),
        horizon: a.horizon,
        paths: a.paths,
        delta: a.delta,
        grid_points: a.grid,
        seed: a.common.seed,
        workers: a.common.workers,
    };
    let report = stability_experiment(&q, &cfg)?;
    let mut csv = String::from("t,msq,stderr,bound\n");
    for r in &report.rows {
        let _ = writeln!(csv, "{},{},{},{}", fmt_f64(r.t), fmt_f64(r.msq), fmt_f64(r.stderr), fmt_f64(r.bound));
    }
    let c = report.constants;
    let verdict_text = match report.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::NotClaimed => "NOT CLAIMED (h > h_max)",
    };
    let summary = format!(
        "matrix: {}\nh: {}\nL: {}\nmu: {}\nK: {}\nalpha: {}\nalpha_sign_flipped: {}\nh_max: {}\npaths: {}\ndelta: {}\n\
         fitted_rate: {}\nbound_holds: {}\nrate_holds: {}\ndelta_halving_relative_change: {:e}\nverdict: {verdict_text}\n",
        a.matrix,
        a.h,
        c.l,
        c.mu,
        c.k,
        report.alpha,
        report.alpha_alt,
        report.h_max,
        a.paths,
        a.delta,
        report.fitted_rate,
        report.bound_holds,
        report.rate_holds,
        report.delta_sensitivity,
    );
    // Outside the theorem's range there is nothing to pass or fail.
    let passed = report.verdict != Verdict::Fail;
    Ok(Outcome { csv, summary, passed })
}

/// Runs an experiment without touching the filesystem.
pub fn execute(experiment: &Experiment) -> Result<Outcome> {
    if experiment.common().workers == Some(0) {
        return Err(invalid("--workers must be at least 1"));
    }
    match experiment {
        Experiment::OdeOrder(a) => ode_order(a),
        Experiment::OdeTrajectory(a) => ode_trajectory(a),
        Experiment::OuWeakOrder(a) => ou_weak_order(a),
        Experiment::OptimizerWeakOrder(a) => optimizer_weak_order(a),
        Experiment::SigmaCheck(a) => sigma_check_experiment(a),
        Experiment::Stability(a) => stability(a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

/// Runs an experiment, writes its CSV, prints the summary and returns the
/// process exit status.
pub fn run(cli: &Cli) -> i32 {
    let experiment = &cli.experiment;
    let start = Instant::now();
    let outcome = match execute(experiment) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("modsde {}: {e}", experiment.name());
            return exit_code(&e);
        }
    };
    let path = experiment.output_path();
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("modsde {}: cannot create {}: {e}", experiment.name(), dir.display());
            return EXIT_VALIDATION;
        }
    }
    if let Err(e) = std::fs::write(&path, &outcome.csv) {
        eprintln!("modsde {}: cannot write --out {}: {e}", experiment.name(), path.display());
        return EXIT_VALIDATION;
    }
    print!("experiment: {}\nseed: {}\n{}", experiment.name(), experiment.common().seed, outcome.summary);
    println!("csv: {}", path.display());
    println!("wall_time_s: {:.3}", start.elapsed().as_secs_f64());
    if experiment.common().check && !outcome.passed {
        eprintln!("modsde {}: acceptance check failed", experiment.name());
        return EXIT_CHECK_FAILED;
    }
    EXIT_SUCCESS
}

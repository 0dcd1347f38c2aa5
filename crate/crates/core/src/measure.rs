//! Error metrics, exact moment recursions of linear chains, the Monte Carlo
//! engine, convergence-order fits and the mean-square stability experiment.
//!
//! Wherever a chain is linear (OU family, coordinate descent on a quadratic)
//! weak errors come from exact moment recursions, so order fits carry no
//! sampling noise.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{
    build_modified_sde, harmonic, harmonic_modified, modified_moments, ou, ou_modified, AffineSde, HamiltonianState,
    Moments, Observable, OdeScheme, Sde, SdeScheme,
};
use crate::error::{check_dim, invalid, Error, Result};
use crate::estimator::EstimatorKind;
use crate::integrate::{self, standard_normals, steps_to, AffineKernel, Method, Problem, StepperConfig, Trajectory};
use crate::objective::{ConvexityConstants, Objective, Quadratic};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPoint {
    pub h: f64,
    pub error: f64,
    /// Zero when the error is exact.
    pub stderr: f64,
}

/// Error as a function of stepsize, `h` strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub points: Vec<ErrorPoint>,
}

impl ErrorCurve {
    pub fn new(points: Vec<ErrorPoint>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !(p.h.is_finite() && p.h > 0.0)) {
            return Err(invalid(format!("stepsize {} is not positive and finite", p.h)));
        }
        for w in points.windows(2) {
            if w[1].h >= w[0].h {
                return Err(invalid(format!("h values must be strictly decreasing ({} then {})", w[0].h, w[1].h)));
            }
        }
        if let Some(p) = points.iter().find(|p| !(p.error.is_finite() && p.error >= 0.0)) {
            return Err(invalid(format!("error {} at h = {} is not finite and non-negative", p.error, p.h)));
        }
        Ok(Self { points })
    }

    /// Drops points whose error is exactly zero.
    pub fn without_zeros(&self) -> Self {
        Self { points: self.points.iter().copied().filter(|p| p.error > 0.0).collect() }
    }
}

/// Least-squares line through `(log h, log error)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl OrderFit {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.slope >= lo && self.slope <= hi
    }
}

fn least_squares(xs: &[f64], ys: &[f64]) -> OrderFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0) };
    OrderFit { slope, intercept, r_squared }
}

pub fn fit_order(curve: &ErrorCurve) -> Result<OrderFit> {
    if curve.points.len() < 3 {
        return Err(invalid(format!("order fit needs at least 3 points, got {}", curve.points.len())));
    }
    if let Some(p) = curve.points.iter().find(|p| p.error <= 0.0) {
        return Err(invalid(format!("error at h = {} is {}; drop zero points before fitting", p.h, p.error)));
    }
    let xs: Vec<f64> = curve.points.iter().map(|p| p.h.ln()).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.error.ln()).collect();
    Ok(least_squares(&xs, &ys))
}

/// `‖x_n − X(T)‖` at the trajectory's final time.
pub fn global_error(numeric: &Trajectory, exact: impl Fn(f64) -> DVector<f64>) -> f64 {
    (numeric.final_state() - exact(numeric.final_time())).norm()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
}

impl McEstimate {
    /// Accumulates in slice order.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(invalid(format!("Monte Carlo needs at least 2 paths, got {n}")));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(Self { mean, stderr: (var / n as f64).sqrt(), paths: n })
    }
}

/// Per-path stream: ChaCha8 keyed by the master seed, stream = path index.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Evaluates `f` for every path index and returns the results in index
/// order, independent of `workers` and of completion order.
pub fn parallel_paths<T, F>(paths: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let work = || (0..paths as u64).into_par_iter().map(&f).collect::<Vec<Result<T>>>();
    let results = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| invalid(format!("cannot start {n} workers: {e}")))?
            .install(work),
        None => work(),
    };
    results.into_iter().collect()
}

fn check_finite(x: &DVector<f64>, step: usize, path: u64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { step, path: Some(path) })
    }
}

/// Monte Carlo estimate of `E φ(x_n)` for `n = T/h` steps of `scheme` on `prob`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_moment(
    prob: &dyn Sde,
    scheme: SdeScheme,
    h: f64,
    x0: &DVector<f64>,
    horizon: f64,
    phi: Observable,
    paths: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<McEstimate> {
    check_dim(prob.dim(), x0.len())?;
    phi.check(prob.dim())?;
    if paths < 2 {
        return Err(invalid(format!("Monte Carlo needs at least 2 paths, got {paths}")));
    }
    let steps = steps_to(h, horizon)?;
    integrate::kernel(prob, scheme, h)?;
    let samples = parallel_paths(paths, workers, |path| {
        let mut kernel = integrate::kernel(prob, scheme, h)?;
        let mut rng = path_rng(seed, path);
        let mut x = x0.clone();
        for k in 1..=steps {
            let xi = standard_normals(&mut rng, kernel.noise_dim());
            kernel.step(&mut x, &xi)?;
            check_finite(&x, k, path)?;
        }
        Ok(phi.eval(&x))
    })?;
    McEstimate::from_samples(&samples)
}

/// Exact `E x_n`, `E x_n x_nᵀ` of `n` steps of `scheme` on an affine SDE,
/// propagating `x' = Px + q + Nξ`:
/// `μ' = Pμ + q`, `S' = PSPᵀ + Pμqᵀ + qμᵀPᵀ + qqᵀ + NNᵀ`.
pub fn affine_chain_moments(affine: &AffineSde, scheme: SdeScheme, h: f64, steps: usize, x0: &DVector<f64>) -> Result<Moments> {
    check_dim(affine.c.len(), x0.len())?;
    let k = AffineKernel::new(affine, scheme, h)?;
    let noise = &k.n * k.n.transpose();
    let mut m = Moments::deterministic(x0);
    for _ in 0..steps {
        let pm = &k.p * &m.mean;
        let cross = &pm * k.q.transpose();
        m.second = &k.p * &m.second * k.p.transpose() + &cross + cross.transpose() + &k.q * k.q.transpose() + &noise;
        m.mean = pm + &k.q;
    }
    Ok(m)
}

/// Exact moments of `n` steps of single-coordinate descent
/// `x' = x − d·h·U_w(Ax + b)` on a quadratic. With `g = Ax + b`:
/// `E[x'x'ᵀ | x] = xxᵀ − h(xgᵀ + gxᵀ) + d·h²·Diag(ggᵀ)`.
pub fn coordinate_chain_moments(q: &Quadratic, h: f64, steps: usize, x0: &DVector<f64>) -> Result<Moments> {
    let d = q.b().len();
    check_dim(d, x0.len())?;
    let (a, b) = (q.a(), q.b());
    let mut m = Moments::deterministic(x0);
    for _ in 0..steps {
        let mean_g = a * &m.mean + b;
        let x_g = &m.second * a + &m.mean * b.transpose();
        let amb = a * &m.mean * b.transpose();
        let g_g = a * &m.second * a + &amb + amb.transpose() + b * b.transpose();
        let mut second = &m.second - (&x_g + x_g.transpose()) * h;
        for i in 0..d {
            second[(i, i)] += d as f64 * h * h * g_g[(i, i)];
        }
        m.mean -= mean_g * h;
        m.second = second;
    }
    Ok(m)
}

/// How a chain's expectation is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeakErrorMode {
    /// Exact moment recursion of a linear chain.
    Recursion,
    MonteCarlo { paths: usize, seed: u64, workers: Option<usize> },
}

/// `e_h(T, φ) = |E φ(X(T)) − E φ(x_n)|` for `n = T/h` steps of `scheme` on
/// `chain`, measured against `reference`'s exact moment.
#[allow(clippy::too_many_arguments)]
pub fn weak_error(
    scheme: SdeScheme,
    chain: &dyn Sde,
    reference: &dyn Sde,
    x0: &DVector<f64>,
    horizon: f64,
    h: f64,
    phi: Observable,
    mode: WeakErrorMode,
) -> Result<ErrorPoint> {
    phi.check(chain.dim())?;
    let steps = steps_to(h, horizon)?;
    let exact = reference.exact_moment(x0, horizon, phi)?;
    let (chain_value, stderr) = match mode {
        WeakErrorMode::Recursion => {
            let affine = chain
                .affine()
                .ok_or_else(|| invalid("recursion mode needs an affine SDE with constant diffusion"))?;
            (phi.from_moments(&affine_chain_moments(&affine, scheme, h, steps, x0)?), 0.0)
        }
        WeakErrorMode::MonteCarlo { paths, seed, workers } => {
            let est = monte_carlo_moment(chain, scheme, h, x0, horizon, phi, paths, seed, workers)?;
            (est.mean, est.stderr)
        }
    };
    Ok(ErrorPoint { h, error: (exact - chain_value).abs(), stderr })
}

/// What a numerical solution is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// The original equation.
    Exact,
    /// The method's first modified equation.
    Modified,
}

/// `h_k = h₀·2⁻ᵏ`, `k = 0..count`.
pub fn halving_grid(h0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| h0 / f64::powi(2.0, k as i32)).collect()
}

/// Global error of Euler or symplectic Euler on the harmonic oscillator at `T`.
pub fn ode_order_curve(scheme: OdeScheme, reference: Reference, x0: &DVector<f64>, horizon: f64, grid: &[f64]) -> Result<ErrorCurve> {
    let prob = harmonic();
    let method = match scheme {
        OdeScheme::Euler => Method::Euler,
        OdeScheme::SymplecticEuler => Method::SymplecticEuler,
    };
    let mut points = Vec::with_capacity(grid.len());
    for &h in grid {
        let config = StepperConfig::to_horizon(method.clone(), h, horizon)?;
        let traj = integrate::run(Problem::Ode(&prob), &config, x0, &mut ChaCha8Rng::seed_from_u64(0))?;
        let target = match reference {
            Reference::Exact => prob.clone(),
            Reference::Modified => harmonic_modified(scheme, h)?,
        };
        let error = global_error(&traj, |t| target.exact(x0, t).expect("harmonic family has exact flows"));
        points.push(ErrorPoint { h, error, stderr: 0.0 });
    }
    ErrorCurve::new(points)
}

/// Weak error of EM or implicit Euler on the OU process.
#[allow(clippy::too_many_arguments)]
pub fn ou_order_curve(
    scheme: SdeScheme,
    reference: Reference,
    gamma: f64,
    sigma: f64,
    x0: f64,
    horizon: f64,
    grid: &[f64],
    phi: Observable,
    mode: WeakErrorMode,
) -> Result<ErrorCurve> {
    let chain = ou(gamma, sigma)?;
    let x0 = DVector::from_element(1, x0);
    let mut points = Vec::with_capacity(grid.len());
    for &h in grid {
        let target = match reference {
            Reference::Exact => chain,
            Reference::Modified => ou_modified(scheme, gamma, sigma, h)?,
        };
        points.push(weak_error(scheme, &chain, &target, &x0, horizon, h, phi, mode)?);
    }
    ErrorCurve::new(points)
}

/// Weak error of single-coordinate descent against its modified SDE, either
/// after one step (`local`, `T = h`) or at a fixed horizon.
pub fn optimizer_order_curve(q: &Quadratic, x0: &DVector<f64>, horizon: f64, grid: &[f64], phi: Observable, local: bool) -> Result<ErrorCurve> {
    phi.check(q.b().len())?;
    let obj: Arc<dyn Objective> = Arc::new(q.clone());
    let mut points = Vec::with_capacity(grid.len());
    for &h in grid {
        let (steps, t) = if local { (1, h) } else { (steps_to(h, horizon)?, horizon) };
        let chain = coordinate_chain_moments(q, h, steps, x0)?;
        let msde = build_modified_sde(obj.clone(), EstimatorKind::single_coordinate(), h)?;
        let oracle = modified_moments(&msde, x0, t)?;
        let error = (phi.from_moments(&chain) - phi.from_moments(&oracle)).abs();
        points.push(ErrorPoint { h, error, stderr: 0.0 });
    }
    ErrorCurve::new(points)
}

/// Hamiltonian diagnostics of `n` Euler and symplectic Euler steps on the
/// harmonic oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCheck {
    pub h: f64,
    pub steps: usize,
    pub euler_energy: f64,
    /// `(1 + h²)ⁿ·H₀`, what Euler's map produces exactly.
    pub euler_predicted: f64,
    pub symplectic_modified_initial: f64,
    /// Largest relative deviation of `H̃` from its initial value.
    pub symplectic_max_drift: f64,
    pub euler: Trajectory,
    pub symplectic: Trajectory,
}

impl EnergyCheck {
    pub fn euler_relative_error(&self) -> f64 {
        ((self.euler_energy - self.euler_predicted) / self.euler_predicted).abs()
    }
}

pub fn energy_check(x0: &DVector<f64>, h: f64, horizon: f64) -> Result<EnergyCheck> {
    let prob = harmonic();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let euler = integrate::run(Problem::Ode(&prob), &StepperConfig::to_horizon(Method::Euler, h, horizon)?, x0, &mut rng)?;
    let symplectic =
        integrate::run(Problem::Ode(&prob), &StepperConfig::to_horizon(Method::SymplecticEuler, h, horizon)?, x0, &mut rng)?;
    let steps = euler.len() - 1;
    let h0 = HamiltonianState::from_vector(x0)?;
    let euler_energy = HamiltonianState::from_vector(euler.final_state())?.energy();
    let euler_predicted = (1.0 + h * h).powi(steps as i32) * h0.energy();
    let m0 = h0.modified_energy(h);
    let mut drift = 0.0f64;
    for s in &symplectic.states {
        let m = HamiltonianState::from_vector(s)?.modified_energy(h);
        drift = drift.max(((m - m0) / m0).abs());
    }
    Ok(EnergyCheck {
        h,
        steps,
        euler_energy,
        euler_predicted,
        symplectic_modified_initial: m0,
        symplectic_max_drift: drift,
        euler,
        symplectic,
    })
}

/// Stability experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    pub h: f64,
    pub x0: DVector<f64>,
    pub horizon: f64,
    pub paths: usize,
    /// Inner Euler–Maruyama step for the modified SDE.
    pub delta: f64,
    pub grid_points: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRow {
    pub t: f64,
    /// `Ê‖X(t) − X⋆‖²`
    pub msq: f64,
    pub stderr: f64,
    /// `e^{−αt}‖X(0) − X⋆‖²`
    pub bound: f64,
    /// Same estimate at inner step `δ/2` on coupled Brownian paths.
    pub msq_half_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// `h > h_max`: the decay theorem does not apply, nothing is claimed.
    NotClaimed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub constants: ConvexityConstants,
    pub dim: usize,
    pub h: f64,
    /// `2μ − h((d−1)L² − K)`
    pub alpha: f64,
    /// `2μ − hK + h(d−1)L²`, the sign-flipped variant, reported for comparison.
    pub alpha_alt: f64,
    /// `2μ/((d−1)L² − K)`, or `+∞` when `(d−1)L² ≤ K`.
    pub h_max: f64,
    pub rows: Vec<StabilityRow>,
    /// `−slope` of a least-squares fit of `ln m̂(t)` against `t`.
    pub fitted_rate: f64,
    /// Largest `|m̂_δ − m̂_{δ/2}| / m̂_{δ/2}` over the grid.
    pub delta_sensitivity: f64,
    pub bound_holds: bool,
    pub rate_holds: bool,
    pub delta_converged: bool,
    pub verdict: Verdict,
}

/// Stderr multiple allowed above the bound.
pub const STABILITY_STDERR_MARGIN: f64 = 3.0;
/// Fitted decay rate must reach `(1 − slack)·α`.
pub const STABILITY_RATE_SLACK: f64 = 0.1;
/// Largest tolerated relative change of `m̂` when `δ` halves.
pub const STABILITY_DELTA_TOL: f64 = 0.01;

/// Decay rate and stepsize bound of the mean-square stability theorem.
pub fn stability_constants(c: &ConvexityConstants, dim: usize, h: f64) -> (f64, f64, f64) {
    let excess = (dim as f64 - 1.0) * c.l * c.l - c.k;
    let alpha = 2.0 * c.mu - h * excess;
    let alpha_alt = 2.0 * c.mu - h * c.k + h * (dim as f64 - 1.0) * c.l * c.l;
    let h_max = if excess > 0.0 { 2.0 * c.mu / excess } else { f64::INFINITY };
    (alpha, alpha_alt, h_max)
}

/// Simulates the modified SDE of single-coordinate descent on `q` with
/// Euler–Maruyama at step `δ` (and, on the same Brownian paths, `δ/2`) and
/// compares `Ê‖X(t) − X⋆‖²` with `e^{−αt}‖X(0) − X⋆‖²` on a uniform grid
/// `t_k = kT/grid_points`, `k = 1..=grid_points`.
pub fn stability_experiment(q: &Quadratic, cfg: &StabilityConfig) -> Result<StabilityReport> {
    let d = q.b().len();
    check_dim(d, cfg.x0.len())?;
    if !(cfg.h > 0.0 && cfg.h.is_finite()) {
        return Err(invalid(format!("h must be positive, got {}", cfg.h)));
    }
    if !(cfg.delta > 0.0 && cfg.delta <= cfg.h / 100.0 * (1.0 + 1e-12)) {
        return Err(invalid(format!("inner step delta = {} must lie in (0, h/100]", cfg.delta)));
    }
    if cfg.grid_points == 0 {
        return Err(invalid("grid needs at least one point"));
    }
    if cfg.paths < 2 {
        return Err(invalid(format!("paths must be at least 2, got {}", cfg.paths)));
    }
    let spacing = cfg.horizon / cfg.grid_points as f64;
    let per_point = steps_to(cfg.delta, spacing)
        .map_err(|_| invalid(format!("grid spacing T/grid = {spacing} is not a multiple of delta = {}", cfg.delta)))?;
    if per_point == 0 {
        return Err(invalid("grid spacing is shorter than delta"));
    }

    let constants = q.constants();
    let (alpha, alpha_alt, h_max) = stability_constants(&constants, d, cfg.h);
    let star = q.minimizer().clone();
    let initial = (&cfg.x0 - &star).norm_squared();
    let obj: Arc<dyn Objective> = Arc::new(q.clone());
    let msde = build_modified_sde(obj, EstimatorKind::single_coordinate(), cfg.h)?;
    let root_half = std::f64::consts::FRAC_1_SQRT_2;

    let per_path = parallel_paths(cfg.paths, cfg.workers, |path| {
        let mut coarse = integrate::kernel(&msde, SdeScheme::EulerMaruyama, cfg.delta)?;
        let mut fine = integrate::kernel(&msde, SdeScheme::EulerMaruyama, 0.5 * cfg.delta)?;
        let mut rng = path_rng(cfg.seed, path);
        let mut xc = cfg.x0.clone();
        let mut xf = cfg.x0.clone();
        let mut out = Vec::with_capacity(2 * cfg.grid_points);
        let mut step = 0;
        for _ in 0..cfg.grid_points {
            for _ in 0..per_point {
                step += 1;
                let xa = standard_normals(&mut rng, d);
                let xb = standard_normals(&mut rng, d);
                fine.step(&mut xf, &xa)?;
                fine.step(&mut xf, &xb)?;
                coarse.step(&mut xc, &((xa + xb) * root_half))?;
                check_finite(&xc, step, path)?;
                check_finite(&xf, 2 * step, path)?;
            }
            out.push((&xc - &star).norm_squared());
            out.push((&xf - &star).norm_squared());
        }
        Ok(out)
    })?;

    let mut rows = Vec::with_capacity(cfg.grid_points);
    let mut column = vec![0.0; cfg.paths];
    for k in 0..cfg.grid_points {
        let t = (k + 1) as f64 * spacing;
        for (slot, row) in column.iter_mut().zip(&per_path) {
            *slot = row[2 * k];
        }
        let est = McEstimate::from_samples(&column)?;
        for (slot, row) in column.iter_mut().zip(&per_path) {
            *slot = row[2 * k + 1];
        }
        let fine = McEstimate::from_samples(&column)?;
        rows.push(StabilityRow {
            t,
            msq: est.mean,
            stderr: est.stderr,
            bound: (-alpha * t).exp() * initial,
            msq_half_step: fine.mean,
        });
    }

    let bound_holds = rows.iter().all(|r| r.msq <= r.bound + STABILITY_STDERR_MARGIN * r.stderr);
    let positive: Vec<&StabilityRow> = rows.iter().filter(|r| r.msq > 0.0).collect();
    let fitted_rate = if positive.len() >= 2 {
        let ts: Vec<f64> = positive.iter().map(|r| r.t).collect();
        let ls: Vec<f64> = positive.iter().map(|r| r.msq.ln()).collect();
        -least_squares(&ts, &ls).slope
    } else {
        f64::INFINITY
    };
    let rate_holds = fitted_rate >= (1.0 - STABILITY_RATE_SLACK) * alpha;
    let delta_sensitivity = rows
        .iter()
        .filter(|r| r.msq_half_step > 0.0)
        .map(|r| ((r.msq - r.msq_half_step) / r.msq_half_step).abs())
        .fold(0.0, f64::max);
    let delta_converged = delta_sensitivity < STABILITY_DELTA_TOL;
    let verdict = if cfg.h > h_max {
        Verdict::NotClaimed
    } else if bound_holds && rate_holds && delta_converged {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(StabilityReport {
        constants,
        dim: d,
        h: cfg.h,
        alpha,
        alpha_alt,
        h_max,
        rows,
        fitted_rate,
        delta_sensitivity,
        bound_holds,
        rate_holds,
        delta_converged,
        verdict,
    })
}

/// Closed-form vs enumerated covariance of single-coordinate descent at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaCheck {
    pub dim: usize,
    /// `max |Σ_closed − Σ_enumerated|`
    pub max_abs_diff: f64,
    /// `|tr Σ − (d − 1)‖∇F‖²|`
    pub trace_residual: f64,
    /// `max |Σ_closed|`
    pub magnitude: f64,
}

pub fn sigma_check(q: &Quadratic, x: &DVector<f64>) -> Result<SigmaCheck> {
    use crate::estimator::{sigma_closed_form, sigma_empirical};
    let d = q.b().len();
    let closed = sigma_closed_form(q, x)?;
    let enumerated = sigma_empirical(&EstimatorKind::single_coordinate(), q, x)?;
    let g = q.grad(x)?;
    Ok(SigmaCheck {
        dim: d,
        max_abs_diff: (closed.matrix() - enumerated.matrix()).amax(),
        trace_residual: (closed.trace() - (d as f64 - 1.0) * g.norm_squared()).abs(),
        magnitude: closed.matrix().amax(),
    })
}

/// Random SPD quadratic with eigenvalues in roughly `[0.5, 2.5]` and a point,
/// both scaled to keep `Σ` entries of order one.
pub fn random_quadratic_and_point<R: rand::Rng + ?Sized>(rng: &mut R, d: usize) -> Result<(Quadratic, DVector<f64>)> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)) / (d as f64).sqrt();
    let a = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;
    let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let x = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    Ok((Quadratic::new(a, b)?, x))
}

//! One-step integrators and the optimizer-as-integrator adapter.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{AffineSde, HamiltonianState, OdeProblem, OdeStructure, SdeScheme, Sde};
use crate::error::{check_dim, invalid, Error, Result};
use crate::estimator::{self, Draw, EstimatorKind};
use crate::objective::{Objective, Quadratic};

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Euler,
    SymplecticEuler,
    EulerMaruyama,
    ImplicitEulerAffine,
    OptimizerIteration(EstimatorKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepperConfig {
    pub method: Method,
    pub h: f64,
    pub steps: usize,
}

impl StepperConfig {
    pub fn new(method: Method, h: f64, steps: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("stepsize h must be positive, got {h}")));
        }
        Ok(Self { method, h, steps })
    }

    /// `n = T/h` steps; `T` must be an integer multiple of `h` up to roundoff.
    pub fn to_horizon(method: Method, h: f64, horizon: f64) -> Result<Self> {
        Self::new(method, h, steps_to(h, horizon)?)
    }

    pub fn end_time(&self) -> f64 {
        self.steps as f64 * self.h
    }
}

/// Number of steps of size `h` that land on `horizon`.
pub fn steps_to(h: f64, horizon: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("stepsize h must be positive, got {h}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon T must be non-negative, got {horizon}")));
    }
    let n = (horizon / h).round();
    if (n * h - horizon).abs() > 1e-9 * horizon.max(h) {
        return Err(invalid(format!("T = {horizon} is not a multiple of h = {h}")));
    }
    Ok(n as usize)
}

/// States at uniformly spaced times `t_k = k·h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds the initial time")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `x + h·f(x)`.
pub fn euler_step(prob: &OdeProblem, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    Ok(x + prob.drift(x)? * h)
}

/// `q ← q + h·f_q(p, q)`, then `p ← p + h·f_p(p, q_new)`. On the harmonic
/// oscillator this is `q' = q − hp`, `p' = p + hq'`.
pub fn symplectic_euler_step(prob: &OdeProblem, state: HamiltonianState, h: f64) -> Result<HamiltonianState> {
    if prob.structure != OdeStructure::SeparableHamiltonian || prob.dim != 2 {
        return Err(invalid(format!("symplectic Euler needs a separable Hamiltonian system, got {}", prob.name)));
    }
    let q = state.q + h * prob.drift(&state.to_vector())?[1];
    let p = state.p + h * prob.drift(&HamiltonianState::new(state.p, q).to_vector())?[0];
    Ok(HamiltonianState::new(p, q))
}

pub fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `x + h·f(x) + √h·g(x)·ξ` with a given `ξ`.
pub fn euler_maruyama_step_with_noise(
    prob: &dyn Sde,
    x: &DVector<f64>,
    h: f64,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim(prob.noise_dim(), xi.len())?;
    let drift = prob.drift(x)?;
    let diffusion = prob.diffusion(x)?;
    Ok(x + drift * h + diffusion * xi * h.sqrt())
}

pub fn euler_maruyama_step<R: Rng + ?Sized>(
    prob: &dyn Sde,
    x: &DVector<f64>,
    h: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let xi = standard_normals(rng, prob.noise_dim());
    euler_maruyama_step_with_noise(prob, x, h, &xi)
}

/// Solves `x' = x + h(−Mx' + c) + √h·G·ξ` exactly:
/// `x' = (I + hM)⁻¹(x + hc + √h·G·ξ)`.
pub fn implicit_euler_affine_step_with_noise(
    prob: &dyn Sde,
    x: &DVector<f64>,
    h: f64,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let affine = prob
        .affine()
        .ok_or_else(|| invalid("implicit Euler needs an affine drift with constant diffusion"))?;
    check_dim(prob.dim(), x.len())?;
    check_dim(prob.noise_dim(), xi.len())?;
    let d = x.len();
    let lhs = DMatrix::identity(d, d) + &affine.m * h;
    let rhs = x + &affine.c * h + &affine.g * xi * h.sqrt();
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Domain(format!("I + hM is singular at h = {h}")))
}

pub fn implicit_euler_affine_step<R: Rng + ?Sized>(
    prob: &dyn Sde,
    x: &DVector<f64>,
    h: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let xi = standard_normals(rng, prob.noise_dim());
    implicit_euler_affine_step_with_noise(prob, x, h, &xi)
}

/// `x − h·∇̂F(x, w)` with a fresh draw `w`.
///
/// The Lipschitz-weighted coordinate variant ignores `h` and steps
/// `x − (1/L_w)·∇_wF(x)·e_w`.
pub fn optimizer_step<R: Rng + ?Sized>(
    kind: &EstimatorKind,
    obj: &dyn Objective,
    x: &DVector<f64>,
    h: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    match (kind, estimator::sample(kind, obj, x, rng)?) {
        (EstimatorKind::LipschitzCoordinate { lipschitz }, Draw::Coordinate { index, partial }) => {
            let mut next = x.clone();
            next[index] -= partial / lipschitz[index];
            Ok(next)
        }
        (_, draw) => Ok(x - draw.into_gradient(x.len()) * h),
    }
}

/// What a [`run`] integrates.
#[derive(Clone, Copy)]
pub enum Problem<'a> {
    Ode(&'a OdeProblem),
    Sde(&'a dyn Sde),
    Objective(&'a dyn Objective),
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        match self {
            Problem::Ode(p) => p.dim,
            Problem::Sde(p) => p.dim(),
            Problem::Objective(p) => p.dim(),
        }
    }
}

fn step<R: Rng + ?Sized>(
    prob: Problem<'_>,
    method: &Method,
    x: &DVector<f64>,
    h: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    match (method, prob) {
        (Method::Euler, Problem::Ode(p)) => euler_step(p, x, h),
        (Method::SymplecticEuler, Problem::Ode(p)) => {
            Ok(symplectic_euler_step(p, HamiltonianState::from_vector(x)?, h)?.to_vector())
        }
        (Method::EulerMaruyama, Problem::Sde(p)) => euler_maruyama_step(p, x, h, rng),
        (Method::ImplicitEulerAffine, Problem::Sde(p)) => implicit_euler_affine_step(p, x, h, rng),
        (Method::OptimizerIteration(kind), Problem::Objective(obj)) => optimizer_step(kind, obj, x, h, rng),
        (method, _) => Err(invalid(format!("{method:?} does not apply to this problem type"))),
    }
}

/// `n` steps from `x0`, recording every state. Random draws are consumed in
/// step order; a non-finite state aborts with its step index.
pub fn run<R: Rng + ?Sized>(
    prob: Problem<'_>,
    config: &StepperConfig,
    x0: &DVector<f64>,
    rng: &mut R,
) -> Result<Trajectory> {
    check_dim(prob.dim(), x0.len())?;
    let mut times = Vec::with_capacity(config.steps + 1);
    let mut states = Vec::with_capacity(config.steps + 1);
    times.push(0.0);
    states.push(x0.clone());
    let mut x = x0.clone();
    for k in 1..=config.steps {
        x = step(prob, &config.method, &x, config.h, rng)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k, path: None });
        }
        times.push(k as f64 * config.h);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// An allocation-light stepper with its stepsize baked in, used by the Monte
/// Carlo engine. `xi` holds the standard normals for one step.
pub trait StepKernel {
    fn noise_dim(&self) -> usize;

    fn step(&mut self, x: &mut DVector<f64>, xi: &DVector<f64>) -> Result<()>;
}

struct GenericEm<'a> {
    prob: &'a dyn Sde,
    h: f64,
}

impl StepKernel for GenericEm<'_> {
    fn noise_dim(&self) -> usize {
        self.prob.noise_dim()
    }

    fn step(&mut self, x: &mut DVector<f64>, xi: &DVector<f64>) -> Result<()> {
        *x = euler_maruyama_step_with_noise(self.prob, x, self.h, xi)?;
        Ok(())
    }
}

/// `x' = Px + q + Nξ`: both Euler–Maruyama and implicit Euler on an affine SDE.
#[derive(Debug, Clone)]
pub struct AffineKernel {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub n: DMatrix<f64>,
    buf: DVector<f64>,
}

impl AffineKernel {
    pub fn new(affine: &AffineSde, scheme: SdeScheme, h: f64) -> Result<Self> {
        let d = affine.c.len();
        let root_h = h.sqrt();
        let (p, q, n) = match scheme {
            SdeScheme::EulerMaruyama => {
                (DMatrix::identity(d, d) - &affine.m * h, &affine.c * h, &affine.g * root_h)
            }
            SdeScheme::ImplicitEuler => {
                let resolvent = (DMatrix::identity(d, d) + &affine.m * h)
                    .try_inverse()
                    .ok_or_else(|| Error::Domain(format!("I + hM is singular at h = {h}")))?;
                let q = &resolvent * &affine.c * h;
                let n = &resolvent * &affine.g * root_h;
                (resolvent, q, n)
            }
        };
        Ok(Self { p, q, n, buf: DVector::zeros(d) })
    }
}

impl StepKernel for AffineKernel {
    fn noise_dim(&self) -> usize {
        self.n.ncols()
    }

    fn step(&mut self, x: &mut DVector<f64>, xi: &DVector<f64>) -> Result<()> {
        self.buf.copy_from(&self.q);
        self.buf.gemv(1.0, &self.p, x, 1.0);
        self.buf.gemv(1.0, &self.n, xi, 1.0);
        std::mem::swap(x, &mut self.buf);
        Ok(())
    }
}

/// Euler–Maruyama at step `dt` on the modified SDE of a quadratic under
/// single-coordinate noise: drift `−(I + (h/2)A)(Ax + b)`, diffusion
/// `√h·√(d·diag(g²) − ggᵀ)`.
#[derive(Debug, Clone)]
pub struct QuadraticCoordinateKernel {
    a: DMatrix<f64>,
    b: DVector<f64>,
    half_h: f64,
    root_h: f64,
    dt: f64,
    g: DVector<f64>,
    ag: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl QuadraticCoordinateKernel {
    pub fn new(q: &Quadratic, h: f64, dt: f64) -> Self {
        let d = q.b().len();
        Self {
            a: q.a().clone(),
            b: q.b().clone(),
            half_h: 0.5 * h,
            root_h: h.sqrt(),
            dt,
            g: DVector::zeros(d),
            ag: DVector::zeros(d),
            sigma: DMatrix::zeros(d, d),
        }
    }
}

impl StepKernel for QuadraticCoordinateKernel {
    fn noise_dim(&self) -> usize {
        self.b.len()
    }

    fn step(&mut self, x: &mut DVector<f64>, xi: &DVector<f64>) -> Result<()> {
        let d = self.b.len();
        self.g.copy_from(&self.b);
        self.g.gemv(1.0, &self.a, x, 1.0);
        self.ag.gemv(1.0, &self.a, &self.g, 0.0);
        let noise_scale = self.root_h * self.dt.sqrt();
        match d {
            // Σ vanishes identically in one dimension.
            1 => {}
            2 => {
                let (g0, g1) = (self.g[0], self.g[1]);
                let (s00, s01, s11) = (g0 * g0, -g0 * g1, g1 * g1);
                // 2×2 principal root: (Σ + √det·I)/√(tr + 2√det) with det(Σ) = 0.
                let t = (s00 + s11).sqrt();
                if t > 0.0 {
                    let c = noise_scale / t;
                    x[0] += c * (s00 * xi[0] + s01 * xi[1]);
                    x[1] += c * (s01 * xi[0] + s11 * xi[1]);
                }
            }
            _ => {
                for i in 0..d {
                    for j in 0..d {
                        self.sigma[(i, j)] = -self.g[i] * self.g[j];
                    }
                    self.sigma[(i, i)] += d as f64 * self.g[i] * self.g[i];
                }
                let root = crate::linalg::psd_sqrt(&self.sigma, crate::estimator::PSD_REL_TOL)?;
                x.gemv(noise_scale, &root, xi, 1.0);
            }
        }
        for i in 0..d {
            x[i] -= self.dt * (self.g[i] + self.half_h * self.ag[i]);
        }
        Ok(())
    }
}

/// The fastest available kernel for `scheme` at step `h` on `prob`.
pub fn kernel<'a>(prob: &'a dyn Sde, scheme: SdeScheme, h: f64) -> Result<Box<dyn StepKernel + 'a>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("stepsize h must be positive, got {h}")));
    }
    if let Some(affine) = prob.affine() {
        return Ok(Box::new(AffineKernel::new(&affine, scheme, h)?));
    }
    match scheme {
        SdeScheme::ImplicitEuler => Err(invalid("implicit Euler needs an affine drift with constant diffusion")),
        SdeScheme::EulerMaruyama => Ok(prob.em_kernel(h).unwrap_or_else(|| Box::new(GenericEm { prob, h }))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_modified_sde, harmonic, ou, OdeProblem};
    use crate::objective::Quadratic;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn euler_step_examples() {
        let prob = harmonic();
        let x = v(&[1.0, 0.0]);
        assert!((euler_step(&prob, &x, 0.1).unwrap() - v(&[1.0, -0.1])).amax() < 1e-15);
        assert_eq!(euler_step(&prob, &x, 0.0).unwrap(), x);
        let h = 0.3;
        let y = v(&[0.6, -1.7]);
        let before = HamiltonianState::from_vector(&y).unwrap().energy();
        let after = HamiltonianState::from_vector(&euler_step(&prob, &y, h).unwrap()).unwrap().energy();
        assert_relative_eq!(after, (1.0 + h * h) * before, max_relative = 1e-14);
    }

    #[test]
    fn symplectic_step_examples() {
        let prob = harmonic();
        let s = symplectic_euler_step(&prob, HamiltonianState::new(1.0, 0.0), 0.1).unwrap();
        assert_relative_eq!(s.q, -0.1, epsilon = 1e-15);
        assert_relative_eq!(s.p, 0.99, epsilon = 1e-15);
        let start = HamiltonianState::new(0.3, 0.8);
        assert_eq!(symplectic_euler_step(&prob, start, 0.0).unwrap(), start);
        let h = 0.25;
        let next = symplectic_euler_step(&prob, start, h).unwrap();
        assert!((next.modified_energy(h) - start.modified_energy(h)).abs() < 1e-14);

        let general = OdeProblem::new("decay", 2, Arc::new(|x: &DVector<f64>| -x));
        assert!(symplectic_euler_step(&general, start, 0.1).is_err());
    }

    #[test]
    fn stochastic_steps_with_fixed_noise() {
        let p = ou(1.0, 0.1).unwrap();
        let x = v(&[10.0]);
        let zero = v(&[0.0]);
        assert_relative_eq!(euler_maruyama_step_with_noise(&p, &x, 0.01, &zero).unwrap()[0], 9.9, epsilon = 1e-14);
        assert_relative_eq!(
            implicit_euler_affine_step_with_noise(&p, &x, 0.1, &zero).unwrap()[0],
            10.0 / 1.1,
            epsilon = 1e-13
        );
        assert_eq!(implicit_euler_affine_step_with_noise(&p, &x, 0.0, &v(&[0.5])).unwrap(), x);

        let quiet = ou(2.0, 0.0).unwrap();
        let ode = OdeProblem::new("decay", 1, Arc::new(|x: &DVector<f64>| x * -2.0));
        assert_eq!(
            euler_maruyama_step_with_noise(&quiet, &x, 0.05, &v(&[1.3])).unwrap(),
            euler_step(&ode, &x, 0.05).unwrap()
        );
    }

    struct PureDiffusion;

    impl Sde for PureDiffusion {
        fn dim(&self) -> usize {
            2
        }
        fn noise_dim(&self) -> usize {
            2
        }
        fn drift(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::zeros(2))
        }
        fn diffusion(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]))
        }
        fn affine(&self) -> Option<AffineSde> {
            Some(AffineSde { m: DMatrix::zeros(2, 2), c: DVector::zeros(2), g: self.diffusion(&DVector::zeros(2)).unwrap() })
        }
    }

    #[test]
    fn implicit_step_of_pure_diffusion() {
        let x = v(&[1.0, -1.0]);
        let xi = v(&[0.3, -0.4]);
        let h: f64 = 0.04;
        let expected = &x + DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]) * &xi * h.sqrt();
        let got = implicit_euler_affine_step_with_noise(&PureDiffusion, &x, h, &xi).unwrap();
        assert!((got - expected).amax() < 1e-14);
    }

    #[test]
    fn em_one_step_mean() {
        let p = ou(1.5, 0.8).unwrap();
        let x = v(&[2.0]);
        let h = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| euler_maruyama_step(&p, &x, h, &mut rng).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let stderr = (var / n as f64).sqrt();
        assert!((mean - (2.0 - h * 1.5 * 2.0)).abs() < 4.0 * stderr);
    }

    #[test]
    fn optimizer_step_examples() {
        let q = Quadratic::diagonal(&[1.0, 1.0], &[3.0, 4.0]).unwrap();
        let x = v(&[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let next = optimizer_step(&EstimatorKind::single_coordinate(), &q, &x, 0.1, &mut rng).unwrap();
            let ok = (&next - v(&[-0.6, 0.0])).amax() < 1e-15 || (&next - v(&[0.0, -0.8])).amax() < 1e-15;
            assert!(ok, "{next}");
        }
        let s = Quadratic::scalar(3.0).unwrap();
        let y = v(&[1.2]);
        let next = optimizer_step(&EstimatorKind::single_coordinate(), &s, &y, 0.05, &mut rng).unwrap();
        assert_relative_eq!(next[0], 1.2 - 0.05 * 3.6, epsilon = 1e-15);

        for d in [1usize, 3, 5] {
            let l = 2.5;
            let q = Quadratic::new(DMatrix::identity(d, d) * l, DVector::from_element(d, 1.0)).unwrap();
            let x = DVector::from_fn(d, |i, _| 0.3 * i as f64 - 0.4);
            let g = q.grad(&x).unwrap();
            let kind = EstimatorKind::LipschitzCoordinate { lipschitz: vec![l; d] };
            let next = optimizer_step(&kind, &q, &x, 123.0, &mut rng).unwrap();
            let delta = &x - &next;
            let moved: Vec<usize> = (0..d).filter(|&i| delta[i] != 0.0).collect();
            assert!(moved.len() <= 1);
            if let Some(&i) = moved.first() {
                assert_relative_eq!(delta[i].abs(), g[i].abs() / l, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn run_examples() {
        let prob = harmonic();
        let x0 = v(&[1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = run(Problem::Ode(&prob), &StepperConfig::new(Method::Euler, 0.1, 0).unwrap(), &x0, &mut rng).unwrap();
        assert_eq!(empty.times, vec![0.0]);
        assert_eq!(empty.states, vec![x0.clone()]);

        let h = 0.0375;
        let cfg = StepperConfig::to_horizon(Method::Euler, h, 15.0).unwrap();
        assert_eq!(cfg.steps, 400);
        let traj = run(Problem::Ode(&prob), &cfg, &x0, &mut rng).unwrap();
        let energy = HamiltonianState::from_vector(traj.final_state()).unwrap().energy();
        assert_relative_eq!(energy, (1.0 + h * h).powi(400) * 0.5, max_relative = 1e-12);
        for (k, t) in traj.times.iter().enumerate() {
            assert_eq!(*t, k as f64 * h);
        }

        let quiet = ou(1.0, 0.0).unwrap();
        let cfg = StepperConfig::new(Method::EulerMaruyama, 0.1, 25).unwrap();
        let traj = run(Problem::Sde(&quiet), &cfg, &v(&[10.0]), &mut rng).unwrap();
        for (k, x) in traj.states.iter().enumerate() {
            assert_relative_eq!(x[0], 0.9f64.powi(k as i32) * 10.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn run_reports_divergence_and_mismatch() {
        let prob = harmonic();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = StepperConfig::new(Method::Euler, 1e150, 10).unwrap();
        let err = run(Problem::Ode(&prob), &cfg, &v(&[1.0, 0.0]), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 3, path: None }), "{err:?}");
        let cfg = StepperConfig::new(Method::EulerMaruyama, 0.1, 1).unwrap();
        assert!(run(Problem::Ode(&prob), &cfg, &v(&[1.0, 0.0]), &mut rng).is_err());
        assert!(StepperConfig::new(Method::Euler, 0.0, 1).is_err());
        assert!(StepperConfig::to_horizon(Method::Euler, 0.4, 1.0).is_err());
    }

    #[test]
    fn run_is_deterministic_per_seed() {
        let q = Quadratic::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), v(&[0.5, -1.0])).unwrap();
        let cfg = StepperConfig::new(Method::OptimizerIteration(EstimatorKind::single_coordinate()), 0.05, 200).unwrap();
        let x0 = v(&[2.0, 2.0]);
        let a = run(Problem::Objective(&q), &cfg, &x0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = run(Problem::Objective(&q), &cfg, &x0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let c = run(Problem::Objective(&q), &cfg, &x0, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn affine_kernels_match_generic_steps() {
        let p = ou(1.3, 0.4).unwrap();
        let h = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for scheme in [SdeScheme::EulerMaruyama, SdeScheme::ImplicitEuler] {
            let mut k = kernel(&p, scheme, h).unwrap();
            for _ in 0..20 {
                let x = standard_normals(&mut rng, 1) * 3.0;
                let xi = standard_normals(&mut rng, 1);
                let expected = match scheme {
                    SdeScheme::EulerMaruyama => euler_maruyama_step_with_noise(&p, &x, h, &xi).unwrap(),
                    SdeScheme::ImplicitEuler => implicit_euler_affine_step_with_noise(&p, &x, h, &xi).unwrap(),
                };
                let mut y = x.clone();
                k.step(&mut y, &xi).unwrap();
                assert!((y - expected).amax() < 1e-13);
            }
        }
    }

    #[test]
    fn quadratic_kernel_matches_generic_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let matrices = [
            DMatrix::from_row_slice(1, 1, &[1.7]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.0, 0.4, 1.0, 0.3, 0.0, 0.3, 1.5]),
        ];
        for a in matrices {
            let d = a.nrows();
            let q = Quadratic::new(a, DVector::from_fn(d, |i, _| 0.2 * i as f64 - 0.1)).unwrap();
            let h = 0.2;
            let dt = 0.01;
            let msde = build_modified_sde(Arc::new(q.clone()), EstimatorKind::single_coordinate(), h).unwrap();
            let mut fast = kernel(&msde, SdeScheme::EulerMaruyama, dt).unwrap();
            let mut generic = GenericEm { prob: &msde, h: dt };
            for _ in 0..20 {
                let x = standard_normals(&mut rng, d) * 2.0;
                let xi = standard_normals(&mut rng, d);
                let (mut y, mut z) = (x.clone(), x.clone());
                fast.step(&mut y, &xi).unwrap();
                generic.step(&mut z, &xi).unwrap();
                // Σ is singular for d ≥ 2, so roundoff in the generic root is amplified to O(√ε).
                let tol = if d >= 2 { 1e-7 } else { 1e-12 };
                assert!((&y - &z).amax() < tol, "d = {d}: {y} vs {z}");
            }
        }
    }
}

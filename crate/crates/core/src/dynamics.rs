//! The dynamical systems under study: the harmonic oscillator and its
//! Euler/symplectic-Euler modified equations, the Ornstein–Uhlenbeck process
//! and its Euler–Maruyama/implicit-Euler modified equations, gradient flow,
//! and the modified SDE of a stochastic optimization iteration.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};
use crate::estimator::{self, CovarianceMatrix, EstimatorKind};
use crate::integrate::{QuadraticCoordinateKernel, StepKernel};
use crate::objective::{Objective, Quadratic};

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type Flow = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;

/// A test function `φ` whose expectation is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// `φ(x) = xᵢ`
    Component(usize),
    /// `φ(x) = xᵢxⱼ`
    Product(usize, usize),
}

impl Observable {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match *self {
            Observable::Component(i) => x[i],
            Observable::Product(i, j) => x[i] * x[j],
        }
    }

    /// `E φ` from the mean and the (uncentered) second-moment matrix.
    pub fn from_moments(&self, moments: &Moments) -> f64 {
        match *self {
            Observable::Component(i) => moments.mean[i],
            Observable::Product(i, j) => moments.second[(i, j)],
        }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let max = match *self {
            Observable::Component(i) => i,
            Observable::Product(i, j) => i.max(j),
        };
        if max >= dim {
            return Err(invalid(format!("observable {self} indexes past dimension {dim}")));
        }
        Ok(())
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Component(i) => write!(f, "x{}", i + 1),
            Observable::Product(i, j) if i == j => write!(f, "x{}^2", i + 1),
            Observable::Product(i, j) => write!(f, "x{}*x{}", i + 1, j + 1),
        }
    }
}

/// First and second moments `E X`, `E XXᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl Moments {
    pub fn deterministic(x: &DVector<f64>) -> Self {
        Self { mean: x.clone(), second: x * x.transpose() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeStructure {
    General,
    /// Separable Hamiltonian system on `(p, q)`: `ṗ` depends only on `q` and
    /// `q̇` only on `p`.
    SeparableHamiltonian,
}

/// `dX/dt = f(X)`, optionally with its exact flow.
#[derive(Clone)]
pub struct OdeProblem {
    pub name: String,
    pub dim: usize,
    pub structure: OdeStructure,
    drift: VectorField,
    exact: Option<Flow>,
}

impl fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("structure", &self.structure)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl OdeProblem {
    pub fn new(name: impl Into<String>, dim: usize, drift: VectorField) -> Self {
        Self { name: name.into(), dim, structure: OdeStructure::General, drift, exact: None }
    }

    pub fn with_exact(mut self, exact: Flow) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn with_structure(mut self, structure: OdeStructure) -> Self {
        self.structure = structure;
        self
    }

    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((self.drift)(x))
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn exact(&self, x0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        check_dim(self.dim, x0.len())?;
        let flow = self
            .exact
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("{} has no exact solution", self.name)))?;
        Ok(flow(x0, t))
    }
}

/// `(p, q)` for the one-degree-of-freedom oscillator; stored as the vector `[p, q]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianState {
    pub p: f64,
    pub q: f64,
}

impl HamiltonianState {
    pub fn new(p: f64, q: f64) -> Self {
        Self { p, q }
    }

    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        check_dim(2, x.len())?;
        Ok(Self { p: x[0], q: x[1] })
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_column_slice(&[self.p, self.q])
    }

    /// `H = ½p² + ½q²`.
    pub fn energy(&self) -> f64 {
        0.5 * (self.p * self.p + self.q * self.q)
    }

    /// `H̃ = ½(p² + q²) − (h/2)pq`, conserved exactly by symplectic Euler
    /// (q updated first) with step `h`.
    pub fn modified_energy(&self, h: f64) -> f64 {
        self.energy() - 0.5 * h * self.p * self.q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeScheme {
    Euler,
    SymplecticEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdeScheme {
    EulerMaruyama,
    ImplicitEuler,
}

fn rotation(x0: &DVector<f64>, t: f64) -> DVector<f64> {
    let (s, c) = t.sin_cos();
    DVector::from_column_slice(&[x0[0] * c + x0[1] * s, -x0[0] * s + x0[1] * c])
}

/// `dp/dt = q, dq/dt = −p`.
pub fn harmonic() -> OdeProblem {
    OdeProblem::new("harmonic", 2, Arc::new(|x: &DVector<f64>| DVector::from_column_slice(&[x[1], -x[0]])))
        .with_structure(OdeStructure::SeparableHamiltonian)
        .with_exact(Arc::new(rotation))
}

/// First modified equation of Euler or symplectic Euler applied to [`harmonic`].
///
/// Euler: `ṗ = q + (h/2)p, q̇ = −p + (h/2)q`, whose flow is `e^{ht/2}` times a
/// rotation. Symplectic Euler: `ṗ = q − (h/2)p, q̇ = −p + (h/2)q`; its matrix
/// `M` satisfies `M² = −ω²I` with `ω = √(1 − h²/4)`, so the flow is
/// `cos(ωt)I + sin(ωt)/ω·M` and needs `h < 2`.
pub fn harmonic_modified(scheme: OdeScheme, h: f64) -> Result<OdeProblem> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("stepsize must be positive, got {h}")));
    }
    let half = 0.5 * h;
    Ok(match scheme {
        OdeScheme::Euler => OdeProblem::new(
            "harmonic-modified-euler",
            2,
            Arc::new(move |x: &DVector<f64>| DVector::from_column_slice(&[x[1] + half * x[0], -x[0] + half * x[1]])),
        )
        .with_exact(Arc::new(move |x0: &DVector<f64>, t: f64| rotation(x0, t) * (half * t).exp())),
        OdeScheme::SymplecticEuler => {
            if h >= 2.0 {
                return Err(invalid(format!("symplectic modified flow needs h < 2, got {h}")));
            }
            let omega = (1.0 - half * half).sqrt();
            OdeProblem::new(
                "harmonic-modified-symplectic",
                2,
                Arc::new(move |x: &DVector<f64>| {
                    DVector::from_column_slice(&[x[1] - half * x[0], -x[0] + half * x[1]])
                }),
            )
            .with_exact(Arc::new(move |x0: &DVector<f64>, t: f64| {
                let (s, c) = (omega * t).sin_cos();
                let k = s / omega;
                let (p, q) = (x0[0], x0[1]);
                DVector::from_column_slice(&[c * p + k * (-half * p + q), c * q + k * (-p + half * q)])
            }))
        }
    })
}

/// `dX/dt = −∇F(X)`; for a quadratic the flow is `X⋆ + e^{−At}(x₀ − X⋆)`.
pub fn gradient_flow(obj: Arc<dyn Objective>) -> OdeProblem {
    let dim = obj.dim();
    let field_obj = obj.clone();
    let drift: VectorField = Arc::new(move |x: &DVector<f64>| -field_obj.grad(x).expect("dimension checked by caller"));
    let problem = OdeProblem::new("gradient-flow", dim, drift);
    match obj.as_quadratic() {
        Some(q) => problem.with_exact(Arc::new(move |x0: &DVector<f64>, t: f64| {
            let decay = q.spectral(|l| (-l * t).exp());
            q.minimizer() + decay * (x0 - q.minimizer())
        })),
        None => problem,
    }
}

/// Affine SDE `dX = (−MX + c)dt + G dW` with constant diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSde {
    pub m: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
}

/// `dX = f(X)dt + g(X)dW` with `W` an `m`-dimensional Brownian motion.
pub trait Sde: Send + Sync {
    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// `d × m` diffusion matrix.
    fn diffusion(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// The affine form, when the drift is affine and the diffusion constant.
    fn affine(&self) -> Option<AffineSde> {
        None
    }

    /// A specialized Euler–Maruyama kernel at step `h`, if the problem has one.
    fn em_kernel(&self, _h: f64) -> Option<Box<dyn StepKernel + '_>> {
        None
    }

    /// `E φ(X(t))` given `X(0) = x0`.
    fn exact_moment(&self, _x0: &DVector<f64>, _t: f64, phi: Observable) -> Result<f64> {
        Err(Error::Unsupported(format!("no exact moment for {phi}")))
    }
}

/// One-dimensional Ornstein–Uhlenbeck process `dX = −γX dt + σ dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuProcess {
    pub gamma: f64,
    pub sigma: f64,
}

/// Validated [`OuProcess`].
pub fn ou(gamma: f64, sigma: f64) -> Result<OuProcess> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("OU rate gamma must be positive, got {gamma}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("OU noise sigma must be non-negative, got {sigma}")));
    }
    Ok(OuProcess { gamma, sigma })
}

/// First modified equation of Euler–Maruyama or implicit Euler applied to the
/// OU process: rate `γ ± (h/2)γ²` (plus for EM, minus for implicit) and noise
/// `σ(1 + γh/2)`.
pub fn ou_modified(scheme: SdeScheme, gamma: f64, sigma: f64, h: f64) -> Result<OuProcess> {
    ou(gamma, sigma)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("stepsize must be positive, got {h}")));
    }
    let correction = 0.5 * h * gamma * gamma;
    let rate = match scheme {
        SdeScheme::EulerMaruyama => gamma + correction,
        SdeScheme::ImplicitEuler => gamma - correction,
    };
    if rate <= 0.0 {
        return Err(invalid(format!("modified OU rate {rate} is not positive (h = {h} too large)")));
    }
    ou(rate, sigma * (1.0 + 0.5 * gamma * h))
}

impl OuProcess {
    pub fn mean(&self, x0: f64, t: f64) -> f64 {
        x0 * (-self.gamma * t).exp()
    }

    pub fn second_moment(&self, x0: f64, t: f64) -> f64 {
        let decay = (-2.0 * self.gamma * t).exp();
        x0 * x0 * decay - self.sigma * self.sigma / (2.0 * self.gamma) * (-2.0 * self.gamma * t).exp_m1()
    }
}

impl Sde for OuProcess {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(1, x.len())?;
        Ok(x * -self.gamma)
    }

    fn diffusion(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(1, x.len())?;
        Ok(DMatrix::from_element(1, 1, self.sigma))
    }

    fn affine(&self) -> Option<AffineSde> {
        Some(AffineSde {
            m: DMatrix::from_element(1, 1, self.gamma),
            c: DVector::zeros(1),
            g: DMatrix::from_element(1, 1, self.sigma),
        })
    }

    fn exact_moment(&self, x0: &DVector<f64>, t: f64, phi: Observable) -> Result<f64> {
        check_dim(1, x0.len())?;
        phi.check(1)?;
        Ok(match phi {
            Observable::Component(_) => self.mean(x0[0], t),
            Observable::Product(..) => self.second_moment(x0[0], t),
        })
    }
}

/// `dX̃ = −∇(F + (h/4)‖∇F‖²)dt + √h·√Σ(X̃) dW` for the iteration
/// `x ← x − h∇̂F(x, w)`.
#[derive(Debug, Clone)]
pub struct ModifiedSde {
    objective: Arc<dyn Objective>,
    kind: EstimatorKind,
    h: f64,
}

/// Modified SDE of the stochastic iteration with estimator `kind` and step `h`.
/// `h = 0` gives gradient flow.
pub fn build_modified_sde(obj: Arc<dyn Objective>, kind: EstimatorKind, h: f64) -> Result<ModifiedSde> {
    if !(h >= 0.0 && h.is_finite()) {
        return Err(invalid(format!("stepsize must be non-negative, got {h}")));
    }
    kind.validate(obj.as_ref())?;
    Ok(ModifiedSde { objective: obj, kind, h })
}

impl ModifiedSde {
    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.objective
    }

    pub fn kind(&self) -> &EstimatorKind {
        &self.kind
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn sigma(&self, x: &DVector<f64>) -> Result<CovarianceMatrix> {
        estimator::sigma(&self.kind, self.objective.as_ref(), x)
    }
}

impl Sde for ModifiedSde {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn noise_dim(&self) -> usize {
        self.objective.dim()
    }

    /// `−∇F − (h/2)(∇∇F)∇F`.
    fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.objective.grad(x)?;
        let hg = self.objective.hessian_vec(x, &g)?;
        Ok(-(g + hg * (0.5 * self.h)))
    }

    fn diffusion(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if self.h == 0.0 {
            check_dim(self.dim(), x.len())?;
            return Ok(DMatrix::zeros(self.dim(), self.dim()));
        }
        let root = estimator::matrix_sqrt(&self.sigma(x)?)?;
        Ok(root * self.h.sqrt())
    }

    fn em_kernel(&self, h: f64) -> Option<Box<dyn StepKernel + '_>> {
        if !self.kind.is_single_coordinate() {
            return None;
        }
        let q = self.objective.as_quadratic()?;
        Some(Box::new(QuadraticCoordinateKernel::new(&q, self.h, h)))
    }

    fn exact_moment(&self, x0: &DVector<f64>, t: f64, phi: Observable) -> Result<f64> {
        moment_oracle(self, x0, t, phi)
    }
}

/// Relative tolerance of the step-halving check on the moment integrator.
pub const ORACLE_RICHARDSON_TOL: f64 = 1e-9;
const ORACLE_MIN_STEPS: usize = 10_000;

/// Linear moment equations of a [`ModifiedSde`] over a quadratic with
/// single-coordinate noise.
///
/// With `g = AX + b`, `C = I + (h/2)A`, the drift is `−C g`, and
/// `E Σ = d·Diag(G) − G` for `G = E ggᵀ = ASA + Aμbᵀ + bμᵀA + bbᵀ`, so
/// `μ̇ = −CAμ − Cb` and `Ṡ = −(CAS + Cbμᵀ) − (…)ᵀ + h·E Σ`.
struct MomentSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    ca: DMatrix<f64>,
    cb: DVector<f64>,
    h: f64,
}

impl MomentSystem {
    fn new(q: &Quadratic, h: f64) -> Self {
        let d = q.b().len();
        let c = DMatrix::identity(d, d) + q.a() * (0.5 * h);
        Self { a: q.a().clone(), b: q.b().clone(), ca: &c * q.a(), cb: &c * q.b(), h }
    }

    fn rhs(&self, m: &Moments) -> Moments {
        let d = m.mean.len();
        let mean = -(&self.ca * &m.mean) - &self.cb;
        let amb = &self.a * &m.mean * self.b.transpose();
        let g = &self.a * &m.second * &self.a + &amb + amb.transpose() + &self.b * self.b.transpose();
        let mut noise = -g.clone();
        for i in 0..d {
            noise[(i, i)] += d as f64 * g[(i, i)];
        }
        let flow = &self.ca * &m.second + &self.cb * m.mean.transpose();
        let second = -(&flow + flow.transpose()) + noise * self.h;
        Moments { mean, second }
    }

    fn integrate(&self, x0: &DVector<f64>, t: f64, steps: usize) -> Moments {
        let dt = t / steps as f64;
        let axpy = |base: &Moments, k: &Moments, s: f64| Moments {
            mean: &base.mean + &k.mean * s,
            second: &base.second + &k.second * s,
        };
        let mut m = Moments::deterministic(x0);
        for _ in 0..steps {
            let k1 = self.rhs(&m);
            let k2 = self.rhs(&axpy(&m, &k1, 0.5 * dt));
            let k3 = self.rhs(&axpy(&m, &k2, 0.5 * dt));
            let k4 = self.rhs(&axpy(&m, &k3, dt));
            m.mean += (k1.mean + k2.mean * 2.0 + k3.mean * 2.0 + k4.mean) * (dt / 6.0);
            m.second += (k1.second + k2.second * 2.0 + k3.second * 2.0 + k4.second) * (dt / 6.0);
        }
        m
    }
}

fn moments_distance(a: &Moments, b: &Moments) -> (f64, f64) {
    let diff = (&a.mean - &b.mean).amax().max((&a.second - &b.second).amax());
    let scale = a.mean.amax().max(a.second.amax());
    (diff, scale)
}

/// `E X̃(t)` and `E X̃(t)X̃(t)ᵀ` of the modified SDE, from its closed moment
/// equations integrated by classical RK4 at `δ ≤ 10⁻⁴·t`, with the result
/// accepted only once halving `δ` moves it by less than
/// [`ORACLE_RICHARDSON_TOL`] relative.
pub fn modified_moments(msde: &ModifiedSde, x0: &DVector<f64>, t: f64) -> Result<Moments> {
    let q = msde
        .objective
        .as_quadratic()
        .ok_or_else(|| Error::Unsupported("moment oracle needs a quadratic objective".into()))?;
    if !msde.kind.is_single_coordinate() {
        return Err(Error::Unsupported(format!(
            "moment oracle supports single-coordinate noise, not {:?}",
            msde.kind
        )));
    }
    check_dim(q.b().len(), x0.len())?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(Moments::deterministic(x0));
    }
    let system = MomentSystem::new(&q, msde.h);
    let mut steps = ORACLE_MIN_STEPS;
    let mut coarse = system.integrate(x0, t, steps);
    for _ in 0..4 {
        let fine = system.integrate(x0, t, 2 * steps);
        let (diff, scale) = moments_distance(&fine, &coarse);
        if diff <= ORACLE_RICHARDSON_TOL * scale {
            return Ok(fine);
        }
        steps *= 2;
        coarse = fine;
    }
    Err(Error::Domain(format!("moment integrator did not settle at {steps} steps")))
}

/// `E φ(X̃(t))` for the modified SDE of a quadratic under single-coordinate noise.
pub fn moment_oracle(msde: &ModifiedSde, x0: &DVector<f64>, t: f64, phi: Observable) -> Result<f64> {
    phi.check(msde.dim())?;
    Ok(phi.from_moments(&modified_moments(msde, x0, t)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn residual(prob: &OdeProblem, x0: &DVector<f64>, t: f64) -> f64 {
        let eps = 1e-5;
        let fd = (prob.exact(x0, t + eps).unwrap() - prob.exact(x0, t - eps).unwrap()) / (2.0 * eps);
        (fd - prob.drift(&prob.exact(x0, t).unwrap()).unwrap()).norm()
    }

    #[test]
    fn harmonic_exact_solution() {
        let prob = harmonic();
        let x0 = v(&[1.0, 0.0]);
        assert_eq!(prob.exact(&x0, 0.0).unwrap(), x0);
        let quarter = prob.exact(&x0, FRAC_PI_2).unwrap();
        assert!((quarter - v(&[0.0, -1.0])).amax() < 1e-15);
        for k in 0..50 {
            let t = 0.37 * k as f64;
            let s = HamiltonianState::from_vector(&prob.exact(&x0, t).unwrap()).unwrap();
            assert_relative_eq!(s.energy(), 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn exact_flows_solve_their_odes() {
        let x0 = v(&[0.7, -1.3]);
        let q: Arc<dyn Objective> = Arc::new(
            Quadratic::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), v(&[0.3, -0.2])).unwrap(),
        );
        let problems = [
            harmonic(),
            harmonic_modified(OdeScheme::Euler, 0.1).unwrap(),
            harmonic_modified(OdeScheme::SymplecticEuler, 0.1).unwrap(),
            harmonic_modified(OdeScheme::SymplecticEuler, 1.5).unwrap(),
            gradient_flow(q),
        ];
        for prob in &problems {
            for k in 1..20 {
                assert!(residual(prob, &x0, 0.25 * k as f64) <= 1e-8, "{}", prob.name);
            }
        }
    }

    #[test]
    fn modified_hamiltonian_laws() {
        let h = 0.1;
        let x0 = v(&[1.0, 0.0]);
        let euler = harmonic_modified(OdeScheme::Euler, h).unwrap();
        let sympl = harmonic_modified(OdeScheme::SymplecticEuler, h).unwrap();
        let h0 = HamiltonianState::from_vector(&x0).unwrap();
        for k in 0..40 {
            let t = 0.5 * k as f64;
            let e = HamiltonianState::from_vector(&euler.exact(&x0, t).unwrap()).unwrap();
            assert_relative_eq!(e.energy() / h0.energy(), (h * t).exp(), max_relative = 1e-8);
            let s = HamiltonianState::from_vector(&sympl.exact(&x0, t).unwrap()).unwrap();
            assert!((s.modified_energy(h) - h0.modified_energy(h)).abs() <= 1e-10);
        }
    }

    #[test]
    fn modified_harmonic_tends_to_harmonic() {
        let x = v(&[0.4, -0.9]);
        let base = harmonic().drift(&x).unwrap();
        for scheme in [OdeScheme::Euler, OdeScheme::SymplecticEuler] {
            let m = harmonic_modified(scheme, 1e-12).unwrap();
            assert!((m.drift(&x).unwrap() - &base).amax() < 1e-11);
        }
        assert!(harmonic_modified(OdeScheme::Euler, 0.0).is_err());
        assert!(harmonic_modified(OdeScheme::SymplecticEuler, 2.0).is_err());
    }

    #[test]
    fn ou_moments() {
        let p = ou(1.0, 0.1).unwrap();
        let x0 = v(&[10.0]);
        assert_eq!(p.exact_moment(&x0, 0.0, Observable::Product(0, 0)).unwrap(), 100.0);
        let expected = 100.0 * (-2.0f64).exp() + 0.005 * (1.0 - (-2.0f64).exp());
        assert_relative_eq!(p.exact_moment(&x0, 1.0, Observable::Product(0, 0)).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 13.5378, epsilon = 1e-4);
        let quiet = ou(0.7, 0.0).unwrap();
        assert_relative_eq!(quiet.second_moment(3.0, 2.0), 9.0 * (-2.8f64).exp(), max_relative = 1e-15);
        assert!(ou(0.0, 1.0).is_err());
        assert!(ou(1.0, -1.0).is_err());
    }

    #[test]
    fn ou_modified_parameters() {
        let em = ou_modified(SdeScheme::EulerMaruyama, 1.0, 0.2, 0.1).unwrap();
        assert_relative_eq!(em.gamma, 1.05, epsilon = 1e-15);
        assert_relative_eq!(em.sigma, 1.05 * 0.2, epsilon = 1e-15);
        let ie = ou_modified(SdeScheme::ImplicitEuler, 1.0, 0.2, 0.1).unwrap();
        assert_relative_eq!(ie.gamma, 0.95, epsilon = 1e-15);
        assert_relative_eq!(ie.sigma, 1.05 * 0.2, epsilon = 1e-15);
        for scheme in [SdeScheme::EulerMaruyama, SdeScheme::ImplicitEuler] {
            let m = ou_modified(scheme, 1.3, 0.4, 1e-12).unwrap();
            assert_relative_eq!(m.gamma, 1.3, epsilon = 1e-11);
            assert_relative_eq!(m.sigma, 0.4, epsilon = 1e-11);
        }
        assert!(ou_modified(SdeScheme::ImplicitEuler, 1.0, 0.1, 2.0).is_err());
    }

    #[test]
    fn gradient_flow_exact() {
        let q = Arc::new(Quadratic::diagonal(&[1.0, 2.0], &[0.0, 0.0]).unwrap());
        let flow = gradient_flow(q.clone());
        let x = flow.exact(&v(&[1.0, 1.0]), 1.0).unwrap();
        assert!((x - v(&[(-1.0f64).exp(), (-2.0f64).exp()])).amax() < 1e-15);
        assert!(flow.exact(&v(&[1.0, 1.0]), 200.0).unwrap().amax() < 1e-80);
        let star = q.minimizer().clone();
        assert_eq!(flow.exact(&star, 3.0).unwrap(), star);
    }

    #[test]
    fn modified_sde_drift_and_diffusion() {
        let q: Arc<dyn Objective> = Arc::new(Quadratic::diagonal(&[1.0, 2.0], &[0.0, 0.0]).unwrap());
        let m = build_modified_sde(q.clone(), EstimatorKind::single_coordinate(), 0.1).unwrap();
        let drift = m.drift(&v(&[1.0, 1.0])).unwrap();
        assert!((drift - v(&[-1.05, -2.2])).amax() < 1e-14);
        let star = v(&[0.0, 0.0]);
        assert_eq!(m.drift(&star).unwrap(), star);
        assert_eq!(m.diffusion(&star).unwrap(), DMatrix::zeros(2, 2));

        let lambda = 3.0;
        let h = 0.2;
        let s: Arc<dyn Objective> = Arc::new(Quadratic::scalar(lambda).unwrap());
        let m1 = build_modified_sde(s, EstimatorKind::single_coordinate(), h).unwrap();
        let x = v(&[0.8]);
        assert_relative_eq!(m1.drift(&x).unwrap()[0], -lambda * 0.8 - 0.5 * h * lambda * lambda * 0.8, epsilon = 1e-14);
        assert_eq!(m1.diffusion(&x).unwrap()[(0, 0)], 0.0);

        let m0 = build_modified_sde(q.clone(), EstimatorKind::single_coordinate(), 0.0).unwrap();
        let x = v(&[0.3, -1.2]);
        assert_eq!(m0.drift(&x).unwrap(), -q.grad(&x).unwrap());
        assert_eq!(m0.diffusion(&x).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn modified_drift_is_gradient_of_modified_objective() {
        let q: Arc<dyn Objective> = Arc::new(
            Quadratic::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), v(&[0.3, -0.2])).unwrap(),
        );
        let h = 0.3;
        let m = build_modified_sde(q.clone(), EstimatorKind::single_coordinate(), h).unwrap();
        let modified = |x: &DVector<f64>| q.value(x).unwrap() + 0.25 * h * q.grad(x).unwrap().norm_squared();
        let x = v(&[0.9, -0.4]);
        let eps = 1e-5;
        let fd = DVector::from_fn(2, |i, _| {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += eps;
            lo[i] -= eps;
            -(modified(&hi) - modified(&lo)) / (2.0 * eps)
        });
        assert!((fd - m.drift(&x).unwrap()).amax() < 1e-8);
    }

    #[test]
    fn moment_oracle_examples() {
        let lambda = 2.0;
        let h = 0.1;
        let s: Arc<dyn Objective> = Arc::new(Quadratic::scalar(lambda).unwrap());
        let m = build_modified_sde(s, EstimatorKind::single_coordinate(), h).unwrap();
        let x0 = v(&[1.5]);
        assert_eq!(moment_oracle(&m, &x0, 0.0, Observable::Component(0)).unwrap(), 1.5);
        let t = 1.3;
        let exact = 1.5 * (-(lambda + 0.5 * h * lambda * lambda) * t).exp();
        assert_relative_eq!(moment_oracle(&m, &x0, t, Observable::Component(0)).unwrap(), exact, max_relative = 1e-12);
        assert_relative_eq!(
            moment_oracle(&m, &x0, t, Observable::Product(0, 0)).unwrap(),
            exact * exact,
            max_relative = 1e-12
        );
    }

    #[test]
    fn moment_oracle_decoupled_mean_square() {
        // For diagonal A with d = 2, E xᵢ² decays at exactly 2λᵢ.
        let q: Arc<dyn Objective> = Arc::new(Quadratic::diagonal(&[1.0, 2.0], &[0.0, 0.0]).unwrap());
        let m = build_modified_sde(q, EstimatorKind::single_coordinate(), 0.1).unwrap();
        let x0 = v(&[3.0, -2.0]);
        let t = 1.0;
        let mom = modified_moments(&m, &x0, t).unwrap();
        assert_relative_eq!(mom.second[(0, 0)], 9.0 * (-2.0f64).exp(), max_relative = 1e-11);
        assert_relative_eq!(mom.second[(1, 1)], 4.0 * (-4.0f64).exp(), max_relative = 1e-11);
    }

    #[test]
    fn moment_oracle_rejects_unsupported() {
        let q: Arc<dyn Objective> = Arc::new(Quadratic::diagonal(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap());
        let m = build_modified_sde(q, EstimatorKind::coordinate(2), 0.1).unwrap();
        assert!(matches!(
            moment_oracle(&m, &v(&[1.0, 1.0, 1.0]), 1.0, Observable::Component(0)),
            Err(Error::Unsupported(_))
        ));
    }
}

//! Objective functions `F: ℝᵈ → ℝ` with the derivative information the
//! modified equations need, plus the convexity constants that control the
//! mean-square stability rate.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg;

/// A smooth objective.
///
/// Implementors provide the value, the gradient and the Hessian action. The
/// additive structure `F = (1/N) Σ Fᵢ` is exposed through [`Objective::num_terms`]
/// and [`Objective::term_grad`]; a plain objective is a single term.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> Result<f64>;

    fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// `∇∇F(x) · v`.
    fn hessian_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>>;

    /// `(∇∇F(x))·∇F(x)`, which equals `½∇‖∇F(x)‖²`.
    fn hessian_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.grad(x)?;
        self.hessian_vec(x, &g)
    }

    fn num_terms(&self) -> usize {
        1
    }

    /// Gradient of the `i`-th additive term.
    fn term_grad(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        if i != 0 {
            return Err(invalid(format!("term index {i} out of range for a single-term objective")));
        }
        self.grad(x)
    }

    /// The objective as a quadratic, when it is one.
    fn as_quadratic(&self) -> Option<Quadratic> {
        None
    }
}

/// Constants of the Lipschitz, strong-convexity and `⟨x−y, ∇∇F∇F(x) − ∇∇F∇F(y)⟩`
/// lower-bound assumptions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityConstants {
    /// Lipschitz constant of `∇F`.
    pub l: f64,
    /// Strong-convexity constant.
    pub mu: f64,
    pub k: f64,
}

/// `F(x) = ½xᵀAx + bᵀx` with `A` symmetric positive definite.
#[derive(Clone)]
pub struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    minimizer: DVector<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;
const PD_REL_TOL: f64 = 1e-12;

impl Quadratic {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 {
            return Err(invalid("quadratic needs dimension ≥ 1"));
        }
        if a.ncols() != d {
            return Err(invalid(format!("matrix is {}×{}, not square", d, a.ncols())));
        }
        check_dim(d, b.len())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("quadratic coefficients must be finite"));
        }
        let asym = linalg::max_asymmetry(&a);
        if asym > SYMMETRY_TOL {
            return Err(Error::Domain(format!("matrix is not symmetric (max |aᵢⱼ − aⱼᵢ| = {asym:e})")));
        }
        let a = linalg::symmetrize(a);
        let (eigenvalues, eigenvectors) = linalg::sym_eigen(&a);
        let lmin = eigenvalues[0];
        let lmax = eigenvalues[d - 1];
        if lmax <= 0.0 || lmin <= PD_REL_TOL * lmax {
            return Err(Error::Domain(format!(
                "matrix is not positive definite (eigenvalues in [{lmin:e}, {lmax:e}])"
            )));
        }
        let a_inv = linalg::spectral_map(&eigenvalues, &eigenvectors, |l| 1.0 / l);
        let minimizer = -(&a_inv * &b);
        Ok(Self { a, b, eigenvalues, eigenvectors, minimizer })
    }

    pub fn diagonal(diag: &[f64], b: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            DVector::from_column_slice(b),
        )
    }

    /// `F(x) = ½λx²` in one dimension.
    pub fn scalar(lambda: f64) -> Result<Self> {
        Self::diagonal(&[lambda], &[0.0])
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// `X⋆ = −A⁻¹b`.
    pub fn minimizer(&self) -> &DVector<f64> {
        &self.minimizer
    }

    /// Eigenvalues of `A`, ascending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `L = λ_max`, `μ = λ_min`, `K = λ_min²`.
    pub fn constants(&self) -> ConvexityConstants {
        let lmin = self.eigenvalues[0];
        let lmax = self.eigenvalues[self.eigenvalues.len() - 1];
        ConvexityConstants { l: lmax, mu: lmin, k: lmin * lmin }
    }

    /// `f(A)` through the stored eigendecomposition.
    pub fn spectral(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        linalg::spectral_map(&self.eigenvalues, &self.eigenvectors, f)
    }
}

impl fmt::Debug for Quadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Quadratic").field("a", &self.a).field("b", &self.b).finish()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(0.5 * x.dot(&(&self.a * x)) + self.b.dot(x))
    }

    fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.a * x + &self.b)
    }

    fn hessian_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), v.len())?;
        Ok(&self.a * v)
    }

    fn as_quadratic(&self) -> Option<Quadratic> {
        Some(self.clone())
    }
}

/// `F(x) = (1/N) Σᵢ Fᵢ(x)`.
#[derive(Debug, Clone)]
pub struct SumObjective {
    terms: Vec<Arc<dyn Objective>>,
    dim: usize,
}

impl SumObjective {
    pub fn new(terms: Vec<Arc<dyn Objective>>) -> Result<Self> {
        let first = terms.first().ok_or_else(|| invalid("sum objective needs at least one term"))?;
        let dim = first.dim();
        for t in &terms {
            check_dim(dim, t.dim())?;
        }
        Ok(Self { terms, dim })
    }

    pub fn terms(&self) -> &[Arc<dyn Objective>] {
        &self.terms
    }

    fn mean_of<F>(&self, x: &DVector<f64>, f: F) -> Result<DVector<f64>>
    where
        F: Fn(&dyn Objective) -> Result<DVector<f64>>,
    {
        check_dim(self.dim, x.len())?;
        let mut acc = DVector::zeros(self.dim);
        for t in &self.terms {
            acc += f(t.as_ref())?;
        }
        Ok(acc / self.terms.len() as f64)
    }
}

impl Objective for SumObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let mut acc = 0.0;
        for t in &self.terms {
            acc += t.value(x)?;
        }
        Ok(acc / self.terms.len() as f64)
    }

    fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.mean_of(x, |t| t.grad(x))
    }

    fn hessian_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, v.len())?;
        self.mean_of(x, |t| t.hessian_vec(x, v))
    }

    fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn term_grad(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let t = self
            .terms
            .get(i)
            .ok_or_else(|| invalid(format!("term index {i} out of range (N = {})", self.terms.len())))?;
        t.grad(x)
    }

    fn as_quadratic(&self) -> Option<Quadratic> {
        let quads: Option<Vec<Quadratic>> = self.terms.iter().map(|t| t.as_quadratic()).collect();
        let quads = quads?;
        let n = quads.len() as f64;
        let a = quads.iter().fold(DMatrix::zeros(self.dim, self.dim), |acc, q| acc + q.a()) / n;
        let b = quads.iter().fold(DVector::zeros(self.dim), |acc, q| acc + q.b()) / n;
        Quadratic::new(a, b).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn shifted(c: f64) -> Arc<dyn Objective> {
        Arc::new(Quadratic::diagonal(&[1.0], &[-c]).unwrap())
    }

    /// Smooth, strongly convex, not quadratic: `Σ log cosh(xᵢ) + ½‖x‖²`.
    #[derive(Debug)]
    struct LogCosh(usize);

    impl Objective for LogCosh {
        fn dim(&self) -> usize {
            self.0
        }
        fn value(&self, x: &DVector<f64>) -> Result<f64> {
            Ok(x.iter().map(|t| t.cosh().ln() + 0.5 * t * t).sum())
        }
        fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x.map(|t| t.tanh() + t))
        }
        fn hessian_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x.zip_map(v, |t, vi| (1.0 - t.tanh().powi(2) + 1.0) * vi))
        }
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Quadratic {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let a = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;
        let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        Quadratic::new(a, b).unwrap()
    }

    #[test]
    fn grad_of_diagonal_quadratic() {
        let q = Quadratic::diagonal(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(q.grad(&v(&[1.0, 1.0])).unwrap(), v(&[1.0, 2.0]));
    }

    #[test]
    fn grad_vanishes_at_minimizer() {
        let q = Quadratic::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), v(&[1.0, -3.0])).unwrap();
        let g = q.grad(q.minimizer()).unwrap();
        assert!(g.norm() < 1e-10);
    }

    #[test]
    fn sum_objective_gradient_is_the_mean() {
        let s = SumObjective::new(vec![shifted(0.0), shifted(2.0)]).unwrap();
        assert_relative_eq!(s.grad(&v(&[0.0])).unwrap()[0], -1.0, epsilon = 1e-15);
        assert_eq!(s.num_terms(), 2);
        let q = s.as_quadratic().unwrap();
        assert_relative_eq!(q.minimizer()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hessian_grad_examples() {
        let q = Quadratic::diagonal(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(q.hessian_grad(&v(&[1.0, 1.0])).unwrap(), v(&[1.0, 4.0]));
        assert!(q.hessian_grad(q.minimizer()).unwrap().norm() < 1e-15);
        let lambda = 3.5;
        let s = Quadratic::scalar(lambda).unwrap();
        assert_relative_eq!(s.hessian_grad(&v(&[1.0])).unwrap()[0], lambda * lambda);
    }

    #[test]
    fn constants_from_spectrum() {
        let c = Quadratic::diagonal(&[1.0, 2.0], &[0.0, 0.0]).unwrap().constants();
        assert_eq!((c.l, c.mu, c.k), (2.0, 1.0, 1.0));
        for d in 1..5 {
            let c = Quadratic::new(DMatrix::identity(d, d), DVector::zeros(d)).unwrap().constants();
            assert_relative_eq!(c.l, 1.0, epsilon = 1e-14);
            assert_relative_eq!(c.mu, 1.0, epsilon = 1e-14);
            assert_relative_eq!(c.k, 1.0, epsilon = 1e-14);
        }
        let c = Quadratic::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), v(&[0.0, 0.0]))
            .unwrap()
            .constants();
        assert_relative_eq!(c.l, 3.0, epsilon = 1e-14);
        assert_relative_eq!(c.mu, 1.0, epsilon = 1e-14);
        assert_relative_eq!(c.k, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = Quadratic::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), v(&[0.0, 0.0]));
        assert!(matches!(asym, Err(Error::Domain(_))));
        let indefinite = Quadratic::diagonal(&[1.0, -1.0], &[0.0, 0.0]);
        assert!(matches!(indefinite, Err(Error::Domain(_))));
        let singular = Quadratic::diagonal(&[1.0, 0.0], &[0.0, 0.0]);
        assert!(matches!(singular, Err(Error::Domain(_))));
        let nearly_singular = Quadratic::diagonal(&[1.0, 1e-13], &[0.0, 0.0]);
        assert!(matches!(nearly_singular, Err(Error::Domain(_))));
        let q = Quadratic::scalar(1.0).unwrap();
        assert!(matches!(q.grad(&v(&[1.0, 2.0])), Err(Error::DimensionMismatch { expected: 1, got: 2 })));
    }

    fn fd_grad(obj: &dyn Objective, x: &DVector<f64>, step: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += step;
            lo[i] -= step;
            (obj.value(&hi).unwrap() - obj.value(&lo).unwrap()) / (2.0 * step)
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let objs: Vec<Box<dyn Objective>> = vec![
            Box::new(random_spd(&mut rng, 3)),
            Box::new(LogCosh(4)),
            Box::new(SumObjective::new(vec![shifted(0.5), shifted(-1.5), shifted(4.0)]).unwrap()),
        ];
        for obj in &objs {
            for _ in 0..10 {
                let x = DVector::from_fn(obj.dim(), |_, _| rng.random_range(-2.0..2.0));
                let g = obj.grad(&x).unwrap();
                let fd = fd_grad(obj.as_ref(), &x, 1e-5);
                assert!((&fd - &g).norm() <= 1e-6 * g.norm().max(1.0), "{obj:?}");
            }
        }
    }

    #[test]
    fn hessian_action_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let objs: Vec<Box<dyn Objective>> = vec![Box::new(random_spd(&mut rng, 4)), Box::new(LogCosh(3))];
        for obj in &objs {
            for _ in 0..10 {
                let x = DVector::from_fn(obj.dim(), |_, _| rng.random_range(-2.0..2.0));
                let g = obj.grad(&x).unwrap();
                let eps = 1e-5;
                let fd = (obj.grad(&(&x + &g * eps)).unwrap() - obj.grad(&(&x - &g * eps)).unwrap()) / (2.0 * eps);
                let hg = obj.hessian_grad(&x).unwrap();
                assert!((&fd - &hg).norm() <= 1e-5 * hg.norm().max(1.0));
                // ∇‖∇F‖² = 2(∇∇F)∇F
                let sq = |y: &DVector<f64>| obj.grad(y).unwrap().norm_squared();
                let fd_sq = DVector::from_fn(x.len(), |i, _| {
                    let mut hi = x.clone();
                    let mut lo = x.clone();
                    hi[i] += eps;
                    lo[i] -= eps;
                    (sq(&hi) - sq(&lo)) / (2.0 * eps)
                });
                assert!((&fd_sq - &hg * 2.0).norm() <= 1e-5 * hg.norm().max(1.0));
            }
        }
    }

    #[test]
    fn assumption_witnesses_hold_for_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in 1..6 {
            let q = random_spd(&mut rng, d);
            let c = q.constants();
            assert!(0.0 < c.mu && c.mu <= c.l);
            for _ in 0..20 {
                let x = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
                let y = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
                let dx = &x - &y;
                let dg = q.grad(&x).unwrap() - q.grad(&y).unwrap();
                let dhg = q.hessian_grad(&x).unwrap() - q.hessian_grad(&y).unwrap();
                let n2 = dx.norm_squared();
                assert!(dg.norm() <= c.l * dx.norm() + 1e-10);
                assert!(dx.dot(&dg) >= c.mu * n2 - 1e-10);
                assert!(dx.dot(&dhg) >= c.k * n2 - 1e-10);
            }
        }
    }
}

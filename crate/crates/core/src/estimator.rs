//! Unbiased stochastic gradient estimators, their exact outcome
//! distributions, and the covariance `Σ(x) = E[(∇̂F − ∇F)(∇̂F − ∇F)ᵀ]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg;
use crate::objective::Objective;

/// Largest outcome space [`enumerate_outcomes`] will materialize.
pub const MAX_OUTCOMES: u128 = 1_000_000;

/// Relative eigenvalue tolerance below which a covariance is still treated as PSD.
pub const PSD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    /// `(1/m) Σ ∇F_{wᵢ}` over a uniformly drawn subset `w` of the `N` terms.
    Minibatch { batch: usize, with_replacement: bool },
    /// `(d/m) Σ (∇_{wᵢ}F) e_{wᵢ}` over a uniformly drawn subset of coordinates.
    Coordinate { block: usize, with_replacement: bool },
    /// Single uniform coordinate, stepped with `1/L_{w}`.
    LipschitzCoordinate { lipschitz: Vec<f64> },
}

impl EstimatorKind {
    pub fn minibatch(batch: usize) -> Self {
        Self::Minibatch { batch, with_replacement: false }
    }

    pub fn coordinate(block: usize) -> Self {
        Self::Coordinate { block, with_replacement: false }
    }

    /// Stochastic coordinate descent with one coordinate per step.
    pub fn single_coordinate() -> Self {
        Self::coordinate(1)
    }

    pub fn is_single_coordinate(&self) -> bool {
        matches!(self, Self::Coordinate { block: 1, .. })
    }

    pub fn validate(&self, obj: &dyn Objective) -> Result<()> {
        match self {
            Self::Minibatch { batch, .. } => {
                let n = obj.num_terms();
                if *batch < 1 || *batch > n {
                    return Err(invalid(format!("minibatch size {batch} outside 1..={n}")));
                }
            }
            Self::Coordinate { block, .. } => {
                let d = obj.dim();
                if *block < 1 || *block > d {
                    return Err(invalid(format!("coordinate block size {block} outside 1..={d}")));
                }
            }
            Self::LipschitzCoordinate { lipschitz } => {
                check_dim(obj.dim(), lipschitz.len())?;
                if let Some(bad) = lipschitz.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
                    return Err(invalid(format!("coordinate Lipschitz constants must be positive, got {bad}")));
                }
            }
        }
        Ok(())
    }
}

/// One realization of an estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    Gradient(DVector<f64>),
    /// The sampled direction and the raw partial derivative along it.
    Coordinate { index: usize, partial: f64 },
}

impl Draw {
    /// The unbiased gradient estimate carried by this draw. A coordinate draw
    /// maps to `d·(∇_wF)·e_w`.
    pub fn into_gradient(self, dim: usize) -> DVector<f64> {
        match self {
            Draw::Gradient(g) => g,
            Draw::Coordinate { index, partial } => {
                let mut g = DVector::zeros(dim);
                g[index] = dim as f64 * partial;
                g
            }
        }
    }
}

fn draw_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, with_replacement: bool) -> Vec<usize> {
    if with_replacement {
        (0..m).map(|_| rng.random_range(0..n)).collect()
    } else {
        rand::seq::index::sample(rng, n, m).into_vec()
    }
}

/// Draw `∇̂F(x, w)` with a fresh `w`.
pub fn sample<R: Rng + ?Sized>(kind: &EstimatorKind, obj: &dyn Objective, x: &DVector<f64>, rng: &mut R) -> Result<Draw> {
    kind.validate(obj)?;
    check_dim(obj.dim(), x.len())?;
    match kind {
        EstimatorKind::Minibatch { batch, with_replacement } => {
            let idx = draw_indices(rng, obj.num_terms(), *batch, *with_replacement);
            Ok(Draw::Gradient(minibatch_value(obj, x, &idx)?))
        }
        EstimatorKind::Coordinate { block, with_replacement } => {
            let d = obj.dim();
            let g = obj.grad(x)?;
            let idx = draw_indices(rng, d, *block, *with_replacement);
            Ok(Draw::Gradient(coordinate_value(&g, &idx, *block)))
        }
        EstimatorKind::LipschitzCoordinate { .. } => {
            let index = rng.random_range(0..obj.dim());
            let g = obj.grad(x)?;
            Ok(Draw::Coordinate { index, partial: g[index] })
        }
    }
}

fn minibatch_value(obj: &dyn Objective, x: &DVector<f64>, idx: &[usize]) -> Result<DVector<f64>> {
    let mut acc = DVector::zeros(obj.dim());
    for &i in idx {
        acc += obj.term_grad(i, x)?;
    }
    Ok(acc / idx.len() as f64)
}

fn coordinate_value(g: &DVector<f64>, idx: &[usize], block: usize) -> DVector<f64> {
    let scale = g.len() as f64 / block as f64;
    let mut out = DVector::zeros(g.len());
    for &i in idx {
        out[i] += scale * g[i];
    }
    out
}

/// Exact distribution of an estimator at a fixed point.
#[derive(Debug, Clone)]
pub struct OutcomeDistribution {
    pub outcomes: Vec<(f64, DVector<f64>)>,
}

impl OutcomeDistribution {
    pub fn total_probability(&self) -> f64 {
        self.outcomes.iter().map(|(p, _)| p).sum()
    }

    pub fn mean(&self) -> DVector<f64> {
        let d = self.outcomes.first().map_or(0, |(_, v)| v.len());
        self.outcomes.iter().fold(DVector::zeros(d), |acc, (p, v)| acc + v * *p)
    }

    /// `Σ p·(v − c)(v − c)ᵀ`.
    pub fn second_moment_about(&self, center: &DVector<f64>) -> DMatrix<f64> {
        let d = center.len();
        let mut acc = DMatrix::zeros(d, d);
        for (p, v) in &self.outcomes {
            let dev = v - center;
            acc.ger(*p, &dev, &dev, 1.0);
        }
        acc
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::MAX / (n as u128 + 1) {
            return u128::MAX;
        }
    }
    acc
}

fn outcome_count(n: usize, m: usize, with_replacement: bool) -> u128 {
    if with_replacement {
        (n as u128).checked_pow(m as u32).unwrap_or(u128::MAX)
    } else {
        binomial(n, m)
    }
}

/// Every index tuple the sampler can produce, each equally likely.
fn index_tuples(n: usize, m: usize, with_replacement: bool) -> Result<Vec<Vec<usize>>> {
    let size = outcome_count(n, m, with_replacement);
    if size > MAX_OUTCOMES {
        return Err(Error::Capacity { size, limit: MAX_OUTCOMES });
    }
    if with_replacement {
        let mut out = Vec::with_capacity(size as usize);
        let mut cur = vec![0usize; m];
        loop {
            out.push(cur.clone());
            let mut pos = m;
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                cur[pos] += 1;
                if cur[pos] < n {
                    break;
                }
                cur[pos] = 0;
            }
        }
    } else {
        use itertools::Itertools;
        Ok((0..n).combinations(m).collect())
    }
}

/// The full distribution of `∇̂F(x, w)` over `w`.
pub fn enumerate_outcomes(kind: &EstimatorKind, obj: &dyn Objective, x: &DVector<f64>) -> Result<OutcomeDistribution> {
    kind.validate(obj)?;
    check_dim(obj.dim(), x.len())?;
    let outcomes = match kind {
        EstimatorKind::Minibatch { batch, with_replacement } => {
            let tuples = index_tuples(obj.num_terms(), *batch, *with_replacement)?;
            let p = 1.0 / tuples.len() as f64;
            tuples
                .iter()
                .map(|idx| Ok((p, minibatch_value(obj, x, idx)?)))
                .collect::<Result<Vec<_>>>()?
        }
        EstimatorKind::Coordinate { block, with_replacement } => {
            let g = obj.grad(x)?;
            let tuples = index_tuples(obj.dim(), *block, *with_replacement)?;
            let p = 1.0 / tuples.len() as f64;
            tuples.iter().map(|idx| (p, coordinate_value(&g, idx, *block))).collect()
        }
        EstimatorKind::LipschitzCoordinate { .. } => {
            let d = obj.dim();
            let g = obj.grad(x)?;
            (0..d)
                .map(|i| (1.0 / d as f64, Draw::Coordinate { index: i, partial: g[i] }.into_gradient(d)))
                .collect()
        }
    };
    Ok(OutcomeDistribution { outcomes })
}

/// Symmetric positive semidefinite covariance of an estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    /// Wraps `m` after checking symmetry and semidefiniteness up to roundoff.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid("covariance must be square"));
        }
        let asym = linalg::max_asymmetry(&m);
        let scale = m.amax().max(1.0);
        if asym > 1e-12 * scale {
            return Err(Error::Domain(format!("covariance is not symmetric (asymmetry {asym:e})")));
        }
        let m = linalg::symmetrize(m);
        if m.nrows() > 0 {
            let (values, _) = linalg::sym_eigen(&m);
            if values[0] < -1e-10 * scale {
                return Err(Error::Domain(format!("covariance has negative eigenvalue {:e}", values[0])));
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// `d·diag(g₁², …, g_d²) − g·gᵀ` with `g = ∇F(x)`: the covariance of
/// single-coordinate descent.
pub fn sigma_closed_form(obj: &dyn Objective, x: &DVector<f64>) -> Result<CovarianceMatrix> {
    let g = obj.grad(x)?;
    Ok(CovarianceMatrix(coordinate_covariance(&g)))
}

pub(crate) fn coordinate_covariance(g: &DVector<f64>) -> DMatrix<f64> {
    let d = g.len();
    let mut sigma = -(g * g.transpose());
    for i in 0..d {
        sigma[(i, i)] += d as f64 * g[i] * g[i];
    }
    sigma
}

/// Exact covariance by probability-weighted outer products over every outcome.
pub fn sigma_empirical(kind: &EstimatorKind, obj: &dyn Objective, x: &DVector<f64>) -> Result<CovarianceMatrix> {
    let dist = enumerate_outcomes(kind, obj, x)?;
    let g = obj.grad(x)?;
    CovarianceMatrix::new(dist.second_moment_about(&g))
}

/// Covariance at `x`, closed form where available.
pub fn sigma(kind: &EstimatorKind, obj: &dyn Objective, x: &DVector<f64>) -> Result<CovarianceMatrix> {
    if kind.is_single_coordinate() {
        sigma_closed_form(obj, x)
    } else {
        sigma_empirical(kind, obj, x)
    }
}

/// Principal square root: the symmetric PSD `S` with `S·S = Σ`.
pub fn matrix_sqrt(sigma: &CovarianceMatrix) -> Result<DMatrix<f64>> {
    linalg::psd_sqrt(&sigma.0, PSD_REL_TOL)
}

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix, Vector};

use super::ScoreModel;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Finite mixture of full-covariance Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vector>,
    covs: Vec<Matrix>,
    precisions: Vec<Matrix>,
    chol_factors: Vec<Matrix>,
    /// `log wᵢ - ½(d log 2π + log det Σᵢ)`.
    log_norms: Vec<f64>,
}

/// Component-wise Gaussian conditioning of `U` given `V = aU + bW = v`.
#[derive(Debug, Clone)]
pub struct ComponentPosterior {
    pub responsibilities: Vec<f64>,
    pub means: Vec<Vector>,
    pub covs: Vec<Matrix>,
}

impl ComponentPosterior {
    pub fn moments(&self) -> (Vector, Matrix) {
        let d = self.means[0].len();
        let mut mean = Vector::zeros(d);
        for (r, m) in self.responsibilities.iter().zip(&self.means) {
            mean.axpy(*r, m, 1.0);
        }
        let mut cov = Matrix::zeros(d, d);
        for ((r, m), c) in self.responsibilities.iter().zip(&self.means).zip(&self.covs) {
            if *r == 0.0 {
                continue;
            }
            let diff = m - &mean;
            cov += c * *r;
            cov.ger(*r, &diff, &diff, 1.0);
        }
        (mean, linalg::symmetrize(&cov))
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vector>, covs: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidModel("mixture needs at least one component".into()));
        }
        if weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::InvalidModel(format!(
                "{} weights, {} means and {} covariances",
                weights.len(),
                means.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidModel("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidModel("zero-dimensional mixture".into()));
        }
        let mut precisions = Vec::with_capacity(covs.len());
        let mut chol_factors = Vec::with_capacity(covs.len());
        let mut log_norms = Vec::with_capacity(covs.len());
        for (i, (m, c)) in means.iter().zip(&covs).enumerate() {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                return Err(Error::InvalidModel(format!("component {i} has the wrong dimension")));
            }
            if linalg::max_asymmetry(c) > 1e-12 {
                return Err(Error::InvalidModel(format!("covariance {i} is not symmetric")));
            }
            let (lo, _) = linalg::eig_range(c);
            if !(lo > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "covariance {i} is not positive definite (smallest eigenvalue {lo:e})"
                )));
            }
            let chol = linalg::cholesky(c)?;
            let log_det = linalg::log_det_chol(&chol);
            log_norms.push(libm::log(weights[i]) - 0.5 * (d as f64 * LOG_2PI + log_det));
            precisions.push(linalg::symmetrize(&chol.inverse()));
            chol_factors.push(chol.l());
        }
        Ok(Self {
            weights,
            means,
            covs,
            precisions,
            chol_factors,
            log_norms,
        })
    }

    /// A single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: Vector, cov: Matrix) -> Result<Self> {
        Self::new(alloc::vec![1.0], alloc::vec![mean], alloc::vec![cov])
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::gaussian(Vector::zeros(d), Matrix::identity(d, d)).expect("identity covariance is valid")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vector] {
        &self.means
    }

    pub fn covs(&self) -> &[Matrix] {
        &self.covs
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> Vector {
        let mut mean = Vector::zeros(self.dim());
        for (w, m) in self.weights.iter().zip(&self.means) {
            mean.axpy(*w, m, 1.0);
        }
        mean
    }

    pub fn covariance(&self) -> Matrix {
        let mean = self.mean();
        let d = self.dim();
        let mut cov = Matrix::zeros(d, d);
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            let diff = m - &mean;
            cov += c * *w;
            cov.ger(*w, &diff, &diff, 1.0);
        }
        linalg::symmetrize(&cov)
    }

    /// Precision eigenvalue range of a one-component mixture, i.e. its
    /// `(m, M)` strong log-concavity constants.
    pub fn slc_bounds(&self) -> Option<(f64, f64)> {
        (self.n_components() == 1).then(|| linalg::eig_range(&self.precisions[0]))
    }

    /// Law of `c·X`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(crate::error::invalid("scale", format!("must be positive, got {c}")));
        }
        Self::new(
            self.weights.clone(),
            self.means.iter().map(|m| m * c).collect(),
            self.covs.iter().map(|s| linalg::symmetrize(&(s * (c * c)))).collect(),
        )
    }

    /// Law of `aX + bW`: means `a·μᵢ`, covariances `a²Σᵢ + b²I`.
    pub fn annealed(&self, a: f64, b: f64) -> Result<Self> {
        let d = self.dim();
        let noise = Matrix::identity(d, d) * (b * b);
        Self::new(
            self.weights.clone(),
            self.means.iter().map(|m| m * a).collect(),
            self.covs
                .iter()
                .map(|s| linalg::symmetrize(&(s * (a * a) + &noise)))
                .collect(),
        )
    }

    /// Per-component log of `wᵢ N(x; μᵢ, Σᵢ)` together with `Σᵢ⁻¹(x - μᵢ)`.
    fn component_terms(&self, x: &Vector) -> (Vec<f64>, Vec<Vector>) {
        let mut logs = Vec::with_capacity(self.n_components());
        let mut grads = Vec::with_capacity(self.n_components());
        for ((m, p), ln) in self.means.iter().zip(&self.precisions).zip(&self.log_norms) {
            let diff = x - m;
            let pd = p * &diff;
            logs.push(ln - 0.5 * diff.dot(&pd));
            grads.push(pd);
        }
        (logs, grads)
    }

    fn responsibilities_from_logs(logs: &[f64]) -> (Vec<f64>, f64) {
        let lse = linalg::log_sum_exp(logs);
        let resp = logs.iter().map(|l| libm::exp(l - lse)).collect();
        (resp, lse)
    }

    /// Posterior component weights at `x` (log-sum-exp normalized).
    pub fn responsibilities(&self, x: &Vector) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let (logs, _) = self.component_terms(x);
        Ok(Self::responsibilities_from_logs(&logs).0)
    }

    /// Components of the posterior of `U` given `aU + bW = v`, `U ~ self`.
    pub fn component_posterior(&self, a: f64, b: f64, v: &Vector) -> Result<ComponentPosterior> {
        check_dim(self.dim(), v.len())?;
        let d = self.dim();
        let mut logs = Vec::with_capacity(self.n_components());
        let mut means = Vec::with_capacity(self.n_components());
        let mut covs = Vec::with_capacity(self.n_components());
        for ((m, s), w) in self.means.iter().zip(&self.covs).zip(&self.weights) {
            // Marginal of V under component i: N(a μ, a²Σ + b²I).
            let sv = linalg::symmetrize(&(s * (a * a) + Matrix::identity(d, d) * (b * b)));
            let chol = linalg::cholesky(&sv)?;
            let resid = v - m * a;
            let solved = chol.solve(&resid);
            logs.push(
                libm::log(*w) - 0.5 * (d as f64 * LOG_2PI + linalg::log_det_chol(&chol) + resid.dot(&solved)),
            );
            // Gain a Σ (a²Σ + b²I)⁻¹.
            let cross = s * a;
            means.push(m + &cross * &solved);
            let gain_t = chol.solve(&cross.transpose());
            covs.push(linalg::symmetrize(&(s - &cross * gain_t)));
        }
        let (responsibilities, _) = Self::responsibilities_from_logs(&logs);
        Ok(ComponentPosterior {
            responsibilities,
            means,
            covs,
        })
    }

    /// `(E[U | V = v], cov(U | V = v))` for `V = aU + bW`.
    pub fn posterior_moments(&self, a: f64, b: f64, v: &Vector) -> Result<(Vector, Matrix)> {
        Ok(self.component_posterior(a, b, v)?.moments())
    }

    /// The posterior law of `U` given `aU + bW = v` as a mixture (requires `b > 0`).
    pub fn posterior_mixture(&self, a: f64, b: f64, v: &Vector) -> Result<Self> {
        if !(b > 0.0) {
            return Err(crate::error::invalid("b", "posterior is degenerate for b = 0"));
        }
        let post = self.component_posterior(a, b, v)?;
        // Renormalize so the weight sum check is exact to roundoff.
        let total: f64 = post.responsibilities.iter().sum();
        let weights = post.responsibilities.iter().map(|r| r / total).collect();
        Self::new(weights, post.means, post.covs)
    }
}

impl ScoreModel for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_density(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let (logs, _) = self.component_terms(x);
        Ok(linalg::log_sum_exp(&logs))
    }

    fn score(&self, x: &Vector) -> Result<Vector> {
        Ok(self.log_density_and_score(x)?.1)
    }

    fn log_density_and_score(&self, x: &Vector) -> Result<(f64, Vector)> {
        check_dim(self.dim(), x.len())?;
        let (logs, grads) = self.component_terms(x);
        let (resp, lse) = Self::responsibilities_from_logs(&logs);
        let mut score = Vector::zeros(self.dim());
        for (r, g) in resp.iter().zip(&grads) {
            score.axpy(-*r, g, 1.0);
        }
        Ok((lse, score))
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        check_dim(self.dim(), x.len())?;
        let d = self.dim();
        let (logs, grads) = self.component_terms(x);
        let (resp, _) = Self::responsibilities_from_logs(&logs);
        let mut h = Matrix::zeros(d, d);
        let mut mean_grad = Vector::zeros(d);
        for ((r, g), p) in resp.iter().zip(&grads).zip(&self.precisions) {
            if *r == 0.0 {
                continue;
            }
            h += p * *r;
            h.ger(-*r, g, g, 1.0);
            mean_grad.axpy(*r, g, 1.0);
        }
        h.ger(1.0, &mean_grad, &mean_grad, 1.0);
        Ok(linalg::symmetrize(&h))
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vector>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut idx = self.n_components() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc && *w > 0.0 {
                    idx = i;
                    break;
                }
            }
            while self.weights[idx] == 0.0 {
                idx -= 1;
            }
            let z = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            out.push(&self.means[idx] + &self.chol_factors[idx] * z);
        }
        Ok(out)
    }

    fn as_mixture(&self) -> Option<&GaussianMixture> {
        Some(self)
    }
}

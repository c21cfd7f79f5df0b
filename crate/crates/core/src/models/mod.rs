//! Target distributions and their annealed and conditional score algebra.

use alloc::vec::Vec;
use core::fmt::Debug;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{Matrix, Vector};

pub mod bundled;
mod conditional;
mod mixture;
mod slc_quadratic;

pub use conditional::BackwardConditional;
pub use mixture::{ComponentPosterior, GaussianMixture};
pub use slc_quadratic::{QuadraturePosterior, SlcQuadraticPlus, SmoothedSlc, DEFAULT_QUADRATURE_ORDER};

/// First- and second-order oracle for a density on `ℝᵈ`.
pub trait ScoreModel: Debug + Send + Sync {
    fn dim(&self) -> usize;

    /// Log-density, normalized for mixtures and possibly unnormalized otherwise.
    fn log_density(&self, x: &Vector) -> Result<f64>;

    /// `∇ log p(x)`.
    fn score(&self, x: &Vector) -> Result<Vector>;

    /// Negative log-density Hessian `-∇² log p(x)`.
    fn hessian(&self, x: &Vector) -> Result<Matrix>;

    fn log_density_and_score(&self, x: &Vector) -> Result<(f64, Vector)> {
        Ok((self.log_density(x)?, self.score(x)?))
    }

    fn exact_sample(&self, _n: usize, _rng: &mut dyn RngCore) -> Result<Vec<Vector>> {
        Err(Error::NoExactSampler)
    }

    fn as_mixture(&self) -> Option<&GaussianMixture> {
        None
    }
}

/// Any model the pipelines and the CLI know how to build.
#[derive(Debug, Clone)]
pub enum Model {
    Mixture(GaussianMixture),
    SlcQuadratic(SlcQuadraticPlus),
    Smoothed(SmoothedSlc),
}

impl From<GaussianMixture> for Model {
    fn from(m: GaussianMixture) -> Self {
        Model::Mixture(m)
    }
}

impl From<SlcQuadraticPlus> for Model {
    fn from(m: SlcQuadraticPlus) -> Self {
        Model::SlcQuadratic(m)
    }
}

impl Model {
    fn inner(&self) -> &dyn ScoreModel {
        match self {
            Model::Mixture(m) => m,
            Model::SlcQuadratic(m) => m,
            Model::Smoothed(m) => m,
        }
    }

    /// Certified `(m, M)` strong log-concavity constants, when known.
    pub fn slc_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Model::Mixture(m) => m.slc_bounds(),
            Model::SlcQuadratic(m) => Some(m.slc_bounds()),
            Model::Smoothed(s) => {
                let (lo, hi) = s.base().slc_bounds();
                let (a2, b2) = (s.scale() * s.scale(), s.noise() * s.noise());
                Some((lo / (lo * b2 + a2), hi / (hi * b2 + a2)))
            }
        }
    }

    /// Law of `c·X`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Ok(match self {
            Model::Mixture(m) => Model::Mixture(m.scaled(c)?),
            Model::SlcQuadratic(m) => Model::SlcQuadratic(m.scaled(c)?),
            Model::Smoothed(s) => {
                // c(aU + bW) = a(cU) + (cb)W
                let base = s.base().scaled(c)?;
                Model::Smoothed(SmoothedSlc::new(base, s.scale(), c * s.noise(), s.order())?)
            }
        })
    }

    /// Law of `aX + bW`, `W` standard Gaussian independent of `X`.
    pub fn anneal(&self, a: f64, b: f64) -> Result<Self> {
        check_anneal_params(a, b)?;
        if b == 0.0 {
            return if a == 1.0 { Ok(self.clone()) } else { self.scaled(a) };
        }
        Ok(match self {
            Model::Mixture(m) => Model::Mixture(m.annealed(a, b)?),
            Model::SlcQuadratic(m) => {
                Model::Smoothed(SmoothedSlc::new(m.clone(), a, b, DEFAULT_QUADRATURE_ORDER)?)
            }
            Model::Smoothed(s) => {
                let (a1, b1) = (s.scale(), s.noise());
                Model::Smoothed(s.with_params(a * a1, libm::sqrt(a * a * b1 * b1 + b * b))?)
            }
        })
    }

    pub fn as_mixture_ref(&self) -> Option<&GaussianMixture> {
        match self {
            Model::Mixture(m) => Some(m),
            _ => None,
        }
    }
}

impl ScoreModel for Model {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn log_density(&self, x: &Vector) -> Result<f64> {
        self.inner().log_density(x)
    }

    fn score(&self, x: &Vector) -> Result<Vector> {
        self.inner().score(x)
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        self.inner().hessian(x)
    }

    fn log_density_and_score(&self, x: &Vector) -> Result<(f64, Vector)> {
        self.inner().log_density_and_score(x)
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vector>> {
        self.inner().exact_sample(n, rng)
    }

    fn as_mixture(&self) -> Option<&GaussianMixture> {
        self.as_mixture_ref()
    }
}

fn check_anneal_params(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(invalid("a", alloc::format!("scale must be positive, got {a}")));
    }
    if !(b >= 0.0) || !b.is_finite() {
        return Err(invalid("b", alloc::format!("noise must be nonnegative, got {b}")));
    }
    Ok(())
}

/// The law of `V = aU + bW` together with the base law of `U`.
#[derive(Debug, Clone)]
pub struct AnnealedView {
    base: Model,
    a: f64,
    b: f64,
    view: Model,
}

/// Builds the annealed view of `base`; `b = 0` returns the (scaled) base itself.
pub fn anneal(base: &Model, a: f64, b: f64) -> Result<AnnealedView> {
    let view = base.anneal(a, b)?;
    Ok(AnnealedView {
        base: base.clone(),
        a,
        b,
        view,
    })
}

impl AnnealedView {
    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    pub fn noise(&self) -> f64 {
        self.b
    }

    /// The law of `V` as a standalone model.
    pub fn model(&self) -> &Model {
        &self.view
    }

    pub fn into_model(self) -> Model {
        self.view
    }

    /// `(E[U | V = v], cov(U | V = v))`.
    pub fn posterior_moments(&self, v: &Vector) -> Result<(Vector, Matrix)> {
        check_dim(self.dim(), v.len())?;
        match &self.base {
            Model::Mixture(m) => m.posterior_moments(self.a, self.b, v),
            Model::SlcQuadratic(q) => {
                if self.b == 0.0 {
                    let d = q.dim();
                    return Ok((v / self.a, Matrix::zeros(d, d)));
                }
                match &self.view {
                    Model::Smoothed(s) => {
                        let post = s.posterior(v)?;
                        Ok((post.mean, post.cov))
                    }
                    _ => Err(Error::NoClosedFormPosterior),
                }
            }
            Model::Smoothed(_) => Err(Error::NoClosedFormPosterior),
        }
    }
}

impl ScoreModel for AnnealedView {
    fn dim(&self) -> usize {
        self.view.dim()
    }

    fn log_density(&self, x: &Vector) -> Result<f64> {
        self.view.log_density(x)
    }

    fn score(&self, x: &Vector) -> Result<Vector> {
        self.view.score(x)
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        self.view.hessian(x)
    }

    fn log_density_and_score(&self, x: &Vector) -> Result<(f64, Vector)> {
        self.view.log_density_and_score(x)
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vector>> {
        self.view.exact_sample(n, rng)
    }

    fn as_mixture(&self) -> Option<&GaussianMixture> {
        self.view.as_mixture_ref()
    }
}

/// `n` i.i.d. draws from `model`, reproducible under `seed`.
pub fn exact_sample(model: &dyn ScoreModel, n: usize, seed: u64) -> Result<Vec<Vector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.exact_sample(n, &mut rng)
}

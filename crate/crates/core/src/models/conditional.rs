use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{Matrix, Vector};

use super::{GaussianMixture, ScoreModel};

/// Law of `Y_k` given `Y_{k+1} = y`, where `Y_{k+1} = a Y_k + √(1-a²) W`
/// and `Y_k ~ marginal`.
#[derive(Debug, Clone, Copy)]
pub struct BackwardConditional<'m> {
    marginal: &'m dyn ScoreModel,
    a: f64,
    y_next: &'m Vector,
    tether: f64,
}

impl<'m> BackwardConditional<'m> {
    pub fn new(marginal: &'m dyn ScoreModel, a: f64, y_next: &'m Vector) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(invalid("a_k", format!("tether scale must lie in (0, 1), got {a}")));
        }
        check_dim(marginal.dim(), y_next.len())?;
        Ok(Self {
            marginal,
            a,
            y_next,
            tether: a * a / (1.0 - a * a),
        })
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    /// `a²/(1-a²)`, the precision added by conditioning on `y_next`.
    pub fn tether(&self) -> f64 {
        self.tether
    }

    pub fn y_next(&self) -> &Vector {
        self.y_next
    }

    pub fn marginal(&self) -> &dyn ScoreModel {
        self.marginal
    }

    /// Mean of the tethering Gaussian, `y_next / a`.
    pub fn warm_start(&self) -> Vector {
        self.y_next / self.a
    }

    fn tether_residual(&self, u: &Vector) -> Vector {
        u * self.a - self.y_next
    }

    /// Exact conditional law when the marginal is a mixture.
    pub fn posterior_mixture(&self) -> Result<GaussianMixture> {
        let mix = self.marginal.as_mixture().ok_or(Error::NoClosedFormPosterior)?;
        mix.posterior_mixture(self.a, libm::sqrt(1.0 - self.a * self.a), self.y_next)
    }
}

impl ScoreModel for BackwardConditional<'_> {
    fn dim(&self) -> usize {
        self.marginal.dim()
    }

    /// Unnormalized: `log p_k(u) - |a u - y|² / (2(1-a²))`.
    fn log_density(&self, u: &Vector) -> Result<f64> {
        let r = self.tether_residual(u);
        Ok(self.marginal.log_density(u)? - r.norm_squared() / (2.0 * (1.0 - self.a * self.a)))
    }

    fn score(&self, u: &Vector) -> Result<Vector> {
        let s = self.marginal.score(u)?;
        Ok(s - self.tether_residual(u) * (self.a / (1.0 - self.a * self.a)))
    }

    fn log_density_and_score(&self, u: &Vector) -> Result<(f64, Vector)> {
        let (ld, s) = self.marginal.log_density_and_score(u)?;
        let r = self.tether_residual(u);
        let one_minus = 1.0 - self.a * self.a;
        Ok((ld - r.norm_squared() / (2.0 * one_minus), s - r * (self.a / one_minus)))
    }

    fn hessian(&self, u: &Vector) -> Result<Matrix> {
        let mut h = self.marginal.hessian(u)?;
        for i in 0..h.nrows() {
            h[(i, i)] += self.tether;
        }
        Ok(h)
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vector>> {
        match self.posterior_mixture() {
            Ok(post) => post.exact_sample(n, rng),
            Err(Error::NoClosedFormPosterior) => Err(Error::NoExactSampler),
            Err(e) => Err(e),
        }
    }
}

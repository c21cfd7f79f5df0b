use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::quadrature::GaussHermite;

use super::ScoreModel;

/// Default Gauss–Hermite order per coordinate for smoothed views.
pub const DEFAULT_QUADRATURE_ORDER: usize = 64;
/// Largest tensor-product grid used for non-diagonal precisions.
const MAX_TENSOR_NODES: usize = 1 << 13;
const MAX_REJECTION_TRIES: usize = 1_000_000;

/// Unnormalized log-density `-½ xᵀAx + amplitude·Σᵢ cos(freqᵢ xᵢ)`.
///
/// The negative log-Hessian is `A + amplitude·diag(freqᵢ² cos(freqᵢ xᵢ))`,
/// which lies in `[λmin(A) - amplitude·max freq², λmax(A) + amplitude·max freq²]`.
#[derive(Debug, Clone)]
pub struct SlcQuadraticPlus {
    precision: Matrix,
    amplitude: f64,
    frequency: Vector,
    m: f64,
    big_m: f64,
    diagonal: bool,
    cov_factor: Matrix,
}

impl SlcQuadraticPlus {
    pub fn new(precision: Matrix, amplitude: f64, frequency: Vector) -> Result<Self> {
        let d = precision.nrows();
        if d == 0 || precision.ncols() != d || frequency.len() != d {
            return Err(Error::InvalidModel("precision must be d×d and frequency length d".into()));
        }
        if linalg::max_asymmetry(&precision) > 1e-12 {
            return Err(Error::InvalidModel("precision is not symmetric".into()));
        }
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidModel(format!("amplitude must be ≥ 0, got {amplitude}")));
        }
        let (lo, hi) = linalg::eig_range(&precision);
        let max_f2 = frequency.iter().map(|f| f * f).fold(0.0, f64::max);
        let m = lo - amplitude * max_f2;
        let big_m = hi + amplitude * max_f2;
        if !(m > 0.0) {
            return Err(Error::InvalidModel(format!(
                "perturbation destroys strong log-concavity: λmin(A) - amplitude·max freq² = {m}"
            )));
        }
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || precision[(i, j)] == 0.0));
        let cov = linalg::spd_inverse(&precision)?;
        let cov_factor = linalg::cholesky(&cov)?.l();
        Ok(Self {
            precision,
            amplitude,
            frequency,
            m,
            big_m,
            diagonal,
            cov_factor,
        })
    }

    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn frequency(&self) -> &Vector {
        &self.frequency
    }

    /// Certified `(m, M)` with `m I ⪯ -∇² log p ⪯ M I`.
    pub fn slc_bounds(&self) -> (f64, f64) {
        (self.m, self.big_m)
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    fn perturbation(&self, x: &Vector) -> f64 {
        self.amplitude
            * x.iter()
                .zip(self.frequency.iter())
                .map(|(xi, fi)| libm::cos(fi * xi))
                .sum::<f64>()
    }

    /// Law of `c·X`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(crate::error::invalid("scale", format!("must be positive, got {c}")));
        }
        Self::new(
            linalg::symmetrize(&(&self.precision / (c * c))),
            self.amplitude,
            &self.frequency / c,
        )
    }
}

impl ScoreModel for SlcQuadraticPlus {
    fn dim(&self) -> usize {
        self.precision.nrows()
    }

    fn log_density(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(-0.5 * x.dot(&(&self.precision * x)) + self.perturbation(x))
    }

    fn score(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        let mut s = -(&self.precision * x);
        for i in 0..x.len() {
            let f = self.frequency[i];
            s[i] -= self.amplitude * f * libm::sin(f * x[i]);
        }
        Ok(s)
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        check_dim(self.dim(), x.len())?;
        let mut h = self.precision.clone();
        for i in 0..x.len() {
            let f = self.frequency[i];
            h[(i, i)] += self.amplitude * f * f * libm::cos(f * x[i]);
        }
        Ok(h)
    }

    /// Rejection from `N(0, A⁻¹)` with acceptance `exp(amplitude·(Σ cos - d))`.
    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vector>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut tries = 0;
            loop {
                tries += 1;
                if tries > MAX_REJECTION_TRIES {
                    return Err(Error::Numerical("rejection sampler acceptance too low".into()));
                }
                let z = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = &self.cov_factor * z;
                let log_accept = self.perturbation(&x) - self.amplitude * d as f64;
                let u: f64 = rng.random();
                if libm::log(u) <= log_accept {
                    out.push(x);
                    break;
                }
            }
        }
        Ok(out)
    }
}

/// Law of `aU + bW` for `U ~ SlcQuadraticPlus`, `b > 0`, evaluated through
/// Gauss–Hermite quadrature over the Gaussian part of the posterior of `U`.
///
/// Log-densities share the base's (unknown) normalizing constant.
#[derive(Debug, Clone)]
pub struct SmoothedSlc {
    base: SlcQuadraticPlus,
    a: f64,
    b: f64,
    rule: GaussHermite,
    /// `A + (a²/b²) I`
    post_precision: Matrix,
    /// Cholesky factor of the inverse of `post_precision`.
    post_factor: Matrix,
    post_log_det: f64,
}

/// Posterior summary of `U | V = v` for a smoothed view.
#[derive(Debug, Clone)]
pub struct QuadraturePosterior {
    pub mean: Vector,
    pub cov: Matrix,
    /// `log E[exp(g(U))]` under the Gaussian part, `g` the cosine perturbation.
    pub log_tilt: f64,
    pub gaussian_mean: Vector,
}

impl SmoothedSlc {
    pub fn new(base: SlcQuadraticPlus, a: f64, b: f64, order: usize) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(crate::error::invalid("a, b", "smoothed view needs a > 0 and b > 0"));
        }
        let d = base.dim();
        if !base.is_diagonal() && order.checked_pow(d as u32).is_none_or(|n| n > MAX_TENSOR_NODES) {
            return Err(crate::error::invalid(
                "order",
                format!("tensor grid {order}^{d} too large for a non-diagonal precision"),
            ));
        }
        let post_precision =
            linalg::symmetrize(&(base.precision() + Matrix::identity(d, d) * (a * a / (b * b))));
        let chol = linalg::cholesky(&post_precision)?;
        let post_log_det = linalg::log_det_chol(&chol);
        let post_factor = linalg::cholesky(&linalg::symmetrize(&chol.inverse()))?.l();
        Ok(Self {
            base,
            a,
            b,
            rule: GaussHermite::new(order),
            post_precision,
            post_factor,
            post_log_det,
        })
    }

    pub fn base(&self) -> &SlcQuadraticPlus {
        &self.base
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    pub fn noise(&self) -> f64 {
        self.b
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    /// Same base with the view parameters replaced.
    pub fn with_params(&self, a: f64, b: f64) -> Result<Self> {
        Self::new(self.base.clone(), a, b, self.rule.order())
    }

    /// `(E[U | V = v], cov(U | V = v))` and the tilt normalizer.
    pub fn posterior(&self, v: &Vector) -> Result<QuadraturePosterior> {
        check_dim(self.dim(), v.len())?;
        let d = self.dim();
        let h = v * (self.a / (self.b * self.b));
        let gaussian_mean = linalg::cholesky(&self.post_precision)?.solve(&h);
        let amp = self.base.amplitude();
        let freq = self.base.frequency();
        if self.base.is_diagonal() {
            let mut mean = Vector::zeros(d);
            let mut cov = Matrix::zeros(d, d);
            let mut log_tilt = 0.0;
            let mut logs = vec![0.0; self.rule.order()];
            for i in 0..d {
                let sd = self.post_factor[(i, i)];
                let mi = gaussian_mean[i];
                for (j, (xi, w)) in self.rule.nodes.iter().zip(&self.rule.weights).enumerate() {
                    let u = mi + sd * xi;
                    logs[j] = libm::log(*w) + amp * libm::cos(freq[i] * u);
                }
                let lse = linalg::log_sum_exp(&logs);
                let (mut m1, mut m2) = (0.0, 0.0);
                for (j, xi) in self.rule.nodes.iter().enumerate() {
                    let p = libm::exp(logs[j] - lse);
                    let t = sd * xi;
                    m1 += p * t;
                    m2 += p * t * t;
                }
                mean[i] = mi + m1;
                cov[(i, i)] = (m2 - m1 * m1).max(0.0);
                log_tilt += lse;
            }
            return Ok(QuadraturePosterior {
                mean,
                cov,
                log_tilt,
                gaussian_mean,
            });
        }

        let order = self.rule.order();
        let total = order.pow(d as u32);
        let mut logs = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let xi = Vector::from_fn(d, |k, _| self.rule.nodes[idx[k]]);
            let log_w: f64 = idx.iter().map(|&j| libm::log(self.rule.weights[j])).sum();
            let offset = &self.post_factor * xi;
            let u = &gaussian_mean + &offset;
            let g = amp
                * u.iter()
                    .zip(freq.iter())
                    .map(|(ui, fi)| libm::cos(fi * ui))
                    .sum::<f64>();
            logs.push(log_w + g);
            offsets.push(offset);
            for i in idx.iter_mut() {
                *i += 1;
                if *i < order {
                    break;
                }
                *i = 0;
            }
        }
        let lse = linalg::log_sum_exp(&logs);
        let mut m1 = Vector::zeros(d);
        let mut m2 = Matrix::zeros(d, d);
        for (l, t) in logs.iter().zip(&offsets) {
            let p = libm::exp(l - lse);
            m1.axpy(p, t, 1.0);
            m2.ger(p, t, t, 1.0);
        }
        let mut cov = m2;
        cov.ger(-1.0, &m1, &m1, 1.0);
        Ok(QuadraturePosterior {
            mean: &gaussian_mean + m1,
            cov: linalg::symmetrize(&cov),
            log_tilt: lse,
            gaussian_mean,
        })
    }

    fn log_density_from(&self, v: &Vector, post: &QuadraturePosterior) -> f64 {
        let d = self.dim() as f64;
        let b2 = self.b * self.b;
        let h = v * (self.a / b2);
        -0.5 * d * libm::log(b2) - 0.5 * self.post_log_det + 0.5 * h.dot(&post.gaussian_mean)
            - v.norm_squared() / (2.0 * b2)
            + post.log_tilt
    }
}

impl ScoreModel for SmoothedSlc {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn log_density(&self, v: &Vector) -> Result<f64> {
        let post = self.posterior(v)?;
        Ok(self.log_density_from(v, &post))
    }

    /// First-order Tweedie: `∇ log p(v) = -(v - a E[U | v]) / b²`.
    fn score(&self, v: &Vector) -> Result<Vector> {
        let post = self.posterior(v)?;
        Ok((v - post.mean * self.a) / (-self.b * self.b))
    }

    fn log_density_and_score(&self, v: &Vector) -> Result<(f64, Vector)> {
        let post = self.posterior(v)?;
        let ld = self.log_density_from(v, &post);
        Ok((ld, (v - post.mean * self.a) / (-self.b * self.b)))
    }

    /// Second-order Tweedie: `(I - (a²/b²) cov(U | v)) / b²`.
    fn hessian(&self, v: &Vector) -> Result<Matrix> {
        let post = self.posterior(v)?;
        let d = self.dim();
        let b2 = self.b * self.b;
        Ok((Matrix::identity(d, d) - post.cov * (self.a * self.a / b2)) / b2)
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vector>> {
        let d = self.dim();
        let draws = self.base.exact_sample(n, rng)?;
        Ok(draws
            .into_iter()
            .map(|u| u * self.a + Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)) * self.b)
            .collect())
    }
}

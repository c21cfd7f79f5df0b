//! Numerical checks of the inequalities the pipeline relies on, plus the
//! distance estimators used to score its output.
//!
//! Every check returns a [`CheckResult`]; checks on Gaussian instances use
//! closed forms so that they are exact up to roundoff.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::budget::Distance;
use crate::error::{check_dim, invalid, Error, Result};
use crate::finite_diff;
use crate::linalg::{self, Matrix, Vector};
use crate::models::{exact_sample, AnnealedView, BackwardConditional, Model, ScoreModel};
use crate::pipeline::Trajectory;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Default number of random directions for sliced W2.
pub const DEFAULT_PROJECTIONS: usize = 128;
/// Stepsize shift applied by the backward-sandwich negative control.
pub const STEPSIZE_PERTURBATION: f64 = 0.2;
const MAX_PERTURBED_STEPSIZE: f64 = 0.999;
const MIN_PERTURBED_STEPSIZE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Relation {
    /// Passes when `measured ≤ bound + tolerance`.
    AtMost,
    /// Passes when `measured ≥ bound − tolerance`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub passed: bool,
    /// Set for deliberately broken configurations, which are expected to fail.
    pub negative_control: bool,
    pub probes: usize,
    pub seed: Option<u64>,
    /// Auxiliary measurements, keyed by name.
    pub details: BTreeMap<String, f64>,
    pub note: Option<String>,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, measured: f64, relation: Relation, bound: f64, tolerance: f64) -> Self {
        let passed = match relation {
            Relation::AtMost => measured <= bound + tolerance,
            Relation::AtLeast => measured >= bound - tolerance,
        };
        Self {
            name: name.into(),
            measured,
            bound,
            tolerance,
            relation,
            passed,
            negative_control: false,
            probes: 0,
            seed: None,
            details: BTreeMap::new(),
            note: None,
        }
    }

    pub fn with_probes(mut self, probes: usize, seed: Option<u64>) -> Self {
        self.probes = probes;
        self.seed = seed;
        self
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Marks the result as a negative control.
    pub fn negative(mut self) -> Self {
        self.negative_control = true;
        self
    }

    /// Signed margin by which the inequality holds.
    pub fn slack(&self) -> f64 {
        match self.relation {
            Relation::AtMost => self.bound - self.measured,
            Relation::AtLeast => self.measured - self.bound,
        }
    }

    /// Whether the outcome is the expected one: a pass, or a failure for a
    /// negative control.
    pub fn as_expected(&self) -> bool {
        self.passed != self.negative_control
    }

    /// Forces a pass/fail after extra conditions have been evaluated.
    fn and(mut self, ok: bool) -> Self {
        self.passed &= ok;
        self
    }
}

/// A list of checks, serialized as the verification report.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    /// Checks that failed and are not negative controls.
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed && !c.negative_control)
    }

    pub fn all_passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

// ---------------------------------------------------------------------------
// Distances

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum DistanceKind {
    #[cfg_attr(feature = "serde", serde(rename = "W2-exact-1D"))]
    W2Exact1d,
    #[cfg_attr(feature = "serde", serde(rename = "W2-sliced"))]
    W2Sliced,
    #[cfg_attr(feature = "serde", serde(rename = "W2-gaussian-closed-form"))]
    W2GaussianClosedForm,
    #[cfg_attr(feature = "serde", serde(rename = "KL-gaussian-closed-form"))]
    KlGaussianClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DistanceEstimate {
    pub kind: DistanceKind,
    pub value: f64,
    /// Monte Carlo standard error, for the randomized estimators.
    pub std_error: Option<f64>,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

fn w2_squared_1d(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn check_batches(a_len: usize, b_len: usize) -> Result<()> {
    if a_len == 0 {
        return Err(invalid("samples", "empty batch"));
    }
    if a_len != b_len {
        return Err(invalid("samples", format!("batch sizes differ: {a_len} vs {b_len}")));
    }
    Ok(())
}

/// W2 between two equal-size empirical measures on the line, via the
/// sorted-sample coupling.
pub fn w2_exact_1d(a: &[f64], b: &[f64]) -> Result<DistanceEstimate> {
    check_batches(a.len(), b.len())?;
    Ok(DistanceEstimate {
        kind: DistanceKind::W2Exact1d,
        value: libm::sqrt(w2_squared_1d(a, b)),
        std_error: None,
    })
}

/// Root mean of squared 1-D W2 over `n_proj` random directions.
pub fn w2_sliced(a: &[Vector], b: &[Vector], n_proj: usize, seed: u64) -> Result<DistanceEstimate> {
    check_batches(a.len(), b.len())?;
    if n_proj == 0 {
        return Err(invalid("n_proj", "need at least one projection"));
    }
    let d = a[0].len();
    for x in a.iter().chain(b) {
        check_dim(d, x.len())?;
    }
    let project = |batch: &[Vector], u: &Vector| batch.iter().map(|x| x.dot(u)).collect::<Vec<_>>();
    if d == 1 {
        let u = Vector::from_element(1, 1.0);
        let v = w2_squared_1d(&project(a, &u), &project(b, &u));
        return Ok(DistanceEstimate {
            kind: DistanceKind::W2Sliced,
            value: libm::sqrt(v),
            std_error: Some(0.0),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut squares = Vec::with_capacity(n_proj);
    while squares.len() < n_proj {
        let u = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let norm = u.norm();
        if norm < 1e-12 {
            continue;
        }
        let u = u / norm;
        squares.push(w2_squared_1d(&project(a, &u), &project(b, &u)));
    }
    let n = squares.len() as f64;
    let mean = squares.iter().sum::<f64>() / n;
    let var = if squares.len() > 1 {
        squares.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let value = libm::sqrt(mean);
    let se_squared = libm::sqrt(var / n);
    let std_error = if value > 0.0 { se_squared / (2.0 * value) } else { libm::sqrt(se_squared) };
    Ok(DistanceEstimate {
        kind: DistanceKind::W2Sliced,
        value,
        std_error: Some(std_error),
    })
}

/// A Gaussian law `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Gaussian {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_vec"))]
    pub mean: Vector,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_vec::matrix"))]
    pub cov: Matrix,
}

impl Gaussian {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_dim(mean.len(), cov.ncols())?;
        linalg::cholesky(&cov)?;
        Ok(Self { mean, cov: linalg::symmetrize(&cov) })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: Vector::zeros(d),
            cov: Matrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Moment-matched Gaussian of a sample.
    pub fn fit(samples: &[Vector]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid("samples", "need at least two samples"));
        }
        let (mean, cov) = linalg::sample_moments(samples);
        Ok(Self { mean, cov })
    }

    /// Law of `aY + √(1−a²)W` for `Y` with this law.
    pub fn forward(&self, a: f64) -> Self {
        let d = self.dim();
        Self {
            mean: &self.mean * a,
            cov: &self.cov * (a * a) + Matrix::identity(d, d) * (1.0 - a * a),
        }
    }

    pub fn shifted(&self, shift: &Vector) -> Self {
        Self {
            mean: &self.mean + shift,
            cov: self.cov.clone(),
        }
    }

    pub fn precision(&self) -> Result<Matrix> {
        linalg::spd_inverse(&self.cov)
    }
}

/// Closed-form W2 between two Gaussians.
pub fn w2_gaussian(p: &Gaussian, q: &Gaussian) -> DistanceEstimate {
    DistanceEstimate {
        kind: DistanceKind::W2GaussianClosedForm,
        value: libm::sqrt(linalg::w2_squared_gaussian(&p.mean, &p.cov, &q.mean, &q.cov).max(0.0)),
        std_error: None,
    }
}

/// Closed-form `KL(p ‖ q)` between two Gaussians.
pub fn kl_gaussian(p: &Gaussian, q: &Gaussian) -> Result<DistanceEstimate> {
    Ok(DistanceEstimate {
        kind: DistanceKind::KlGaussianClosedForm,
        value: linalg::kl_gaussian(&p.mean, &p.cov, &q.mean, &q.cov)?.max(0.0),
        std_error: None,
    })
}

fn gaussian_distance(distance: Distance, p: &Gaussian, q: &Gaussian) -> Result<f64> {
    match distance {
        Distance::W2 => Ok(w2_gaussian(p, q).value),
        Distance::Kl => Ok(kl_gaussian(p, q)?.value),
    }
}

// ---------------------------------------------------------------------------
// Gaussian backward kernels

/// A kernel `y ↦ N(G y + c, Σ)`, which maps Gaussians to Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub gain: Matrix,
    pub offset: Vector,
    pub noise: Matrix,
}

impl GaussianKernel {
    /// Exact backward kernel of `Y_{k+1} = a Y_k + √(1−a²) W` for
    /// `Y_k ~ marginal`: the conditional law of `Y_k` given `Y_{k+1} = y`
    /// has precision `S⁻¹ + a²/(1−a²) I` and linear term `S⁻¹m + a y/(1−a²)`.
    pub fn backward(marginal: &Gaussian, a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(invalid("a", format!("must lie in (0, 1), got {a}")));
        }
        let d = marginal.dim();
        let prec = marginal.precision()?;
        let tether = a * a / (1.0 - a * a);
        let cond_cov = linalg::spd_inverse(&(&prec + Matrix::identity(d, d) * tether))?;
        let cond_cov = linalg::symmetrize(&cond_cov);
        Ok(Self {
            gain: &cond_cov * (a / (1.0 - a * a)),
            offset: &cond_cov * (&prec * &marginal.mean),
            noise: cond_cov,
        })
    }

    pub fn apply(&self, q: &Gaussian) -> Gaussian {
        Gaussian {
            mean: &self.gain * &q.mean + &self.offset,
            cov: linalg::symmetrize(&(&self.gain * &q.cov * self.gain.transpose() + &self.noise)),
        }
    }

    /// The same kernel with every output translated by `shift`.
    pub fn shifted(mut self, shift: &Vector) -> Self {
        self.offset += shift;
        self
    }

    /// The same kernel convolved with `N(0, extra_var·I)`.
    pub fn convolved(mut self, extra_var: f64) -> Self {
        let d = self.noise.nrows();
        self.noise += Matrix::identity(d, d) * extra_var;
        self
    }

    /// Law of a single output `N(G y + c, Σ)`; a convenience for measuring
    /// per-input kernel errors.
    pub fn at(&self, y: &Vector) -> Gaussian {
        Gaussian {
            mean: &self.gain * y + &self.offset,
            cov: self.noise.clone(),
        }
    }
}

/// `β/α` for the backward kernel at `marginal`: coupling `a/(1−a²)` over
/// the strong convexity `λ_min(S⁻¹) + a²/(1−a²)` of its potential.
pub fn kernel_contraction_bound(marginal: &Gaussian, a: f64) -> Result<f64> {
    let prec = marginal.precision()?;
    let (lo, _) = linalg::eig_range(&prec);
    let tether = a * a / (1.0 - a * a);
    Ok((a / (1.0 - a * a)) / (lo + tether))
}

/// Which stability factor the contraction check compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KernelConfig {
    /// Factor `a_k`, for stage marginals sandwiched in `[1, μ_k]`.
    Slc,
    /// Factor `1/a_k`, for the multi-modal stepsizes.
    MultiModal,
}

impl KernelConfig {
    pub fn factor(self, a: f64) -> f64 {
        match self {
            KernelConfig::Slc => a,
            KernelConfig::MultiModal => 1.0 / a,
        }
    }
}

fn perturbed_stepsize(a: f64, shift: f64) -> f64 {
    (a + shift).clamp(MIN_PERTURBED_STEPSIZE, MAX_PERTURBED_STEPSIZE)
}

/// Largest ratio `W2(B q, B q̃)/W2(q, q̃)` of the exact backward kernel over
/// `pairs`, against `β/α` and the stage factor of `config`.
///
/// With `perturbation = Some(s)` the kernel is built at `a + s` while the
/// bounds stay at `a`, and the result is marked as a negative control.
pub fn check_wasserstein_contraction(
    marginal: &Gaussian,
    a: f64,
    pairs: &[(Gaussian, Gaussian)],
    config: KernelConfig,
    perturbation: Option<f64>,
) -> Result<CheckResult> {
    let kernel_a = perturbation.map_or(a, |s| perturbed_stepsize(a, s));
    let kernel = GaussianKernel::backward(marginal, kernel_a)?;
    let beta_over_alpha = kernel_contraction_bound(marginal, a)?;
    let factor = config.factor(a);

    let mut worst: f64 = 0.0;
    let mut skipped = 0usize;
    for (q, q_tilde) in pairs {
        check_dim(marginal.dim(), q.dim())?;
        check_dim(marginal.dim(), q_tilde.dim())?;
        let input = w2_gaussian(q, q_tilde).value;
        if input <= 1e-300 {
            skipped += 1;
            continue;
        }
        let output = w2_gaussian(&kernel.apply(q), &kernel.apply(q_tilde)).value;
        worst = worst.max(output / input);
    }

    let name = match (config, perturbation.is_some()) {
        (KernelConfig::Slc, false) => "wasserstein_contraction[slc]",
        (KernelConfig::MultiModal, false) => "wasserstein_contraction[multi]",
        (KernelConfig::Slc, true) => "wasserstein_contraction[slc,perturbed]",
        (KernelConfig::MultiModal, true) => "wasserstein_contraction[multi,perturbed]",
    };
    let mut result = CheckResult::new(name, worst, Relation::AtMost, factor, 1e-10)
        .with_probes(pairs.len(), None)
        .with_detail("stepsize", a)
        .with_detail("kernel_stepsize", kernel_a)
        .with_detail("beta_over_alpha", beta_over_alpha)
        .with_detail("tightness", beta_over_alpha - worst);
    result = result.and(worst <= beta_over_alpha + 1e-10);
    if skipped == pairs.len() {
        result = result.with_note("all input pairs coincide; ratio 0/0 treated as a pass");
    } else if skipped > 0 {
        result = result.with_note(format!("{skipped} coinciding pair(s) skipped"));
    }
    if perturbation.is_some() {
        result = result.negative();
    }
    Ok(result)
}

/// Perturbation turning the exact kernel into a sampler with a known,
/// input-independent error.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPerturbation {
    pub shift: Vector,
    pub extra_var: f64,
}

impl KernelPerturbation {
    pub fn none(d: usize) -> Self {
        Self {
            shift: Vector::zeros(d),
            extra_var: 0.0,
        }
    }

    fn apply(&self, kernel: GaussianKernel) -> GaussianKernel {
        kernel.shifted(&self.shift).convolved(self.extra_var)
    }

    /// `D(B̃(e_y), B(e_y))`, the same for every `y`.
    pub fn per_input_error(&self, kernel: &GaussianKernel, distance: Distance) -> Result<f64> {
        let y = Vector::zeros(kernel.gain.ncols());
        let exact = kernel.at(&y);
        let perturbed = self.apply(kernel.clone()).at(&y);
        gaussian_distance(distance, &perturbed, &exact)
    }
}

/// One backward round in KL: `KL(q_k ‖ p_k) ≤ δ_k + KL(q_{k+1} ‖ p_{k+1})`
/// for `p_{k+1}` the forward image of `p_k`, `q_k` the perturbed kernel
/// applied to `q_{k+1}` and `δ_k` its per-input KL error.
pub fn check_kl_chain(
    q_next: &Gaussian,
    marginal: &Gaussian,
    a: f64,
    perturbation: &KernelPerturbation,
) -> Result<CheckResult> {
    check_dim(marginal.dim(), q_next.dim())?;
    let p_next = marginal.forward(a);
    let exact = GaussianKernel::backward(marginal, a)?;
    let delta = perturbation.per_input_error(&exact, Distance::Kl)?;
    let q_k = perturbation.apply(exact).apply(q_next);
    let before = kl_gaussian(q_next, &p_next)?.value;
    let after = kl_gaussian(&q_k, marginal)?.value;
    Ok(
        CheckResult::new("kl_chain", after, Relation::AtMost, delta + before, 1e-12)
            .with_detail("delta", delta)
            .with_detail("kl_next", before),
    )
}

/// End-to-end error along an all-Gaussian chain with stage marginals
/// generated from `first` by `stepsizes` (`a_1, …, a_{K−1}`).
///
/// The terminal law is `p_K` displaced by `δ_K` and every backward kernel
/// is displaced so that its per-input error equals `δ_k`, all along
/// `direction`. The measured `D(q_1, p_1)` is compared with
/// `Σ_k w_k δ_k`, where `w_k = ∏_{ℓ<k} 1/a_ℓ` for W2 under the multi-modal
/// configuration and `w_k = 1` otherwise. The SLC configuration assumes
/// stage precisions of at least 1, which makes every kernel contractive.
pub fn check_error_telescoping(
    first: &Gaussian,
    stepsizes: &[f64],
    deltas: &[f64],
    direction: &Vector,
    distance: Distance,
    config: KernelConfig,
) -> Result<CheckResult> {
    let k = deltas.len();
    if k == 0 || stepsizes.len() + 1 != k {
        return Err(invalid(
            "deltas",
            format!("need one more error than stepsizes, got {} and {}", k, stepsizes.len()),
        ));
    }
    check_dim(first.dim(), direction.len())?;
    let norm = direction.norm();
    if !(norm > 0.0) {
        return Err(invalid("direction", "must be nonzero"));
    }
    let u = direction / norm;

    let mut marginals = Vec::with_capacity(k);
    marginals.push(first.clone());
    for &a in stepsizes {
        let next = marginals.last().expect("nonempty").forward(a);
        marginals.push(next);
    }

    // Shift of length `t` along `u` with error `δ` against a law whose
    // covariance is `cov`: `|t|` in W2, `½ t²·uᵀ cov⁻¹ u` in KL.
    let shift_for = |delta: f64, cov: &Matrix| -> Result<Vector> {
        let len = match distance {
            Distance::W2 => delta,
            Distance::Kl => {
                let curvature = linalg::spd_inverse(cov)?.quadratic_form(&u);
                libm::sqrt(2.0 * delta / curvature)
            }
        };
        Ok(&u * len)
    };

    let terminal = &marginals[k - 1];
    let mut q = terminal.shifted(&shift_for(deltas[k - 1], &terminal.cov)?);
    for stage in (0..k - 1).rev() {
        let exact = GaussianKernel::backward(&marginals[stage], stepsizes[stage])?;
        let shift = shift_for(deltas[stage], &exact.noise)?;
        q = exact.shifted(&shift).apply(&q);
    }
    let measured = gaussian_distance(distance, &q, &marginals[0])?;

    let mut bound = 0.0;
    let mut weight = 1.0;
    for (i, delta) in deltas.iter().enumerate() {
        if i > 0 && distance == Distance::W2 && config == KernelConfig::MultiModal {
            weight /= stepsizes[i - 1];
        }
        bound += weight * delta;
    }
    let name = match distance {
        Distance::W2 => "error_telescoping[W2]",
        Distance::Kl => "error_telescoping[KL]",
    };
    Ok(CheckResult::new(name, measured, Relation::AtMost, bound, 1e-12)
        .with_probes(k, None)
        .with_detail("stages", k as f64))
}

trait QuadraticForm {
    fn quadratic_form(&self, u: &Vector) -> f64;
}

impl QuadraticForm for Matrix {
    fn quadratic_form(&self, u: &Vector) -> f64 {
        u.dot(&(self * u))
    }
}

// ---------------------------------------------------------------------------
// Hessian checks

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Max-abs gap between the annealed Hessian and `(I − (a²/b²)·cov(U|V=v))/b²`.
pub fn check_tweedie_second_order(view: &AnnealedView, probes: &[Vector]) -> Result<CheckResult> {
    if view.base().as_mixture_ref().is_none() {
        return Err(Error::NoClosedFormPosterior);
    }
    let (a, b) = (view.scale(), view.noise());
    if !(b > 0.0) {
        return Err(invalid("b", "the identity needs a positive noise level"));
    }
    let d = view.model().dim();
    let mut gap: f64 = 0.0;
    for v in probes {
        let hess = view.model().hessian(v)?;
        let (_, cov) = view.posterior_moments(v)?;
        let predicted = (Matrix::identity(d, d) - cov * (a * a / (b * b))) / (b * b);
        gap = gap.max(max_abs(&(hess - predicted)));
    }
    Ok(CheckResult::new("tweedie_second_order", gap, Relation::AtMost, 0.0, 1e-6)
        .with_probes(probes.len(), None)
        .with_detail("a", a)
        .with_detail("b", b))
}

/// How a Hessian is obtained at a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HessianRoute {
    #[default]
    Analytic,
    /// Central differences of the score.
    FiniteDifference,
}

fn hessian_at(model: &dyn ScoreModel, x: &Vector, route: HessianRoute) -> Result<Matrix> {
    match route {
        HessianRoute::Analytic => model.hessian(x),
        HessianRoute::FiniteDifference => finite_diff::neg_hessian(model, x),
    }
}

/// Smallest margin by which the spectrum of `−∇² log p` stays inside
/// `[lower, upper]` over `probes`; an unbounded side is `None`.
pub fn check_hessian_sandwich(
    name: impl Into<String>,
    model: &dyn ScoreModel,
    lower: Option<f64>,
    upper: Option<f64>,
    probes: &[Vector],
    route: HessianRoute,
    tolerance: f64,
) -> Result<CheckResult> {
    let mut slack = f64::INFINITY;
    let mut lowest = f64::INFINITY;
    let mut highest = f64::NEG_INFINITY;
    for x in probes {
        let (lo, hi) = linalg::eig_range(&hessian_at(model, x, route)?);
        lowest = lowest.min(lo);
        highest = highest.max(hi);
        if let Some(l) = lower {
            slack = slack.min(lo - l);
        }
        if let Some(u) = upper {
            slack = slack.min(u - hi);
        }
    }
    let mut result = CheckResult::new(name, slack, Relation::AtLeast, 0.0, tolerance)
        .with_probes(probes.len(), None)
        .with_detail("min_eigenvalue", lowest)
        .with_detail("max_eigenvalue", highest);
    if let Some(l) = lower {
        result = result.with_detail("lower_bound", l);
    }
    if let Some(u) = upper {
        result = result.with_detail("upper_bound", u);
    }
    Ok(result)
}

/// Annealed spectra inside `[m/(m b²+a²), M/(M b²+a²)]` for a base with
/// certified lower bound `m` and/or upper bound `M`.
pub fn check_spectral_propagation(
    base: &Model,
    lower: Option<f64>,
    upper: Option<f64>,
    a: f64,
    b: f64,
    probes: &[Vector],
) -> Result<CheckResult> {
    if lower.is_none() && upper.is_none() {
        return Err(invalid("bounds", "no certified curvature bounds supplied"));
    }
    let annealed = base.anneal(a, b)?;
    let lo = lower.map(|m| m / (m * b * b + a * a));
    let hi = upper.map(|m| m / (m * b * b + a * a));
    Ok(
        check_hessian_sandwich("spectral_propagation", &annealed, lo, hi, probes, HessianRoute::Analytic, 1e-8)?
            .with_detail("a", a)
            .with_detail("b", b),
    )
}

/// Spectrum of the forward marginal at `stage` against the plan's sandwich.
pub fn check_forward_sandwich(
    trajectory: &Trajectory,
    stage: usize,
    probes: &[Vector],
    route: HessianRoute,
) -> Result<CheckResult> {
    check_stage(trajectory, stage, trajectory.k())?;
    let (lo, hi) = trajectory.marginal_bounds(stage);
    Ok(check_hessian_sandwich(
        format!("forward_sandwich[{stage}]"),
        trajectory.marginal(stage),
        Some(lo),
        Some(hi),
        probes,
        route,
        1e-6,
    )?
    .with_detail("stage", stage as f64))
}

fn check_stage(trajectory: &Trajectory, stage: usize, last: usize) -> Result<()> {
    if stage < trajectory.first_stage() || stage > last {
        return Err(invalid(
            "stage",
            format!("{stage} outside {}..={last}", trajectory.first_stage()),
        ));
    }
    Ok(())
}

/// Spectrum of the backward conditional at `stage < K` against the plan's
/// sandwich. The conditional Hessian does not depend on the tethering
/// point, so `probes` are points of the stage variable.
///
/// With `perturbation = Some(s)` the tether uses `a_k + s` (clamped below
/// 1) and the result is marked as a negative control.
pub fn check_backward_sandwich(
    trajectory: &Trajectory,
    stage: usize,
    probes: &[Vector],
    route: HessianRoute,
    perturbation: Option<f64>,
) -> Result<CheckResult> {
    if trajectory.k() == trajectory.first_stage() {
        return Err(invalid("stage", "plan has no backward stages"));
    }
    check_stage(trajectory, stage, trajectory.k() - 1)?;
    let a = trajectory.stepsize(stage);
    let tether_a = perturbation.map_or(a, |s| perturbed_stepsize(a, s));
    let marginal = trajectory.marginal(stage);
    let anchor = Vector::zeros(marginal.dim());
    let cond = BackwardConditional::new(marginal, tether_a, &anchor)?;
    let (lo, hi) = trajectory.backward_bounds(stage);
    let name = if perturbation.is_some() {
        format!("backward_sandwich[{stage},perturbed]")
    } else {
        format!("backward_sandwich[{stage}]")
    };
    let result = check_hessian_sandwich(name, &cond, Some(lo), Some(hi), probes, route, 1e-6)?
        .with_detail("stage", stage as f64)
        .with_detail("stepsize", a)
        .with_detail("tether_stepsize", tether_a);
    Ok(if perturbation.is_some() { result.negative() } else { result })
}

/// Top eigenvalue of the empirical covariance of `n` exact draws against
/// `1/m`, with a tolerance of four standard errors of the variance along
/// the top eigenvector.
pub fn check_brascamp_lieb(model: &dyn ScoreModel, m: f64, n: usize, seed: u64) -> Result<CheckResult> {
    if !(m > 0.0) {
        return Err(invalid("m", format!("must be positive, got {m}")));
    }
    if n < 2 {
        return Err(invalid("n", "need at least two samples"));
    }
    let samples = exact_sample(model, n, seed)?;
    let (mean, cov) = linalg::sample_moments(&samples);
    let (top, u) = linalg::top_eigenpair(&cov);
    let z: Vec<f64> = samples
        .iter()
        .map(|x| {
            let p = (x - &mean).dot(&u);
            p * p
        })
        .collect();
    let nf = n as f64;
    let z_mean = z.iter().sum::<f64>() / nf;
    let z_var = z.iter().map(|v| (v - z_mean) * (v - z_mean)).sum::<f64>() / (nf - 1.0);
    let se = libm::sqrt(z_var / nf);
    Ok(CheckResult::new("brascamp_lieb", top, Relation::AtMost, 1.0 / m, 4.0 * se)
        .with_probes(n, Some(seed))
        .with_detail("m", m)
        .with_detail("std_error", se))
}

#[cfg(test)]
mod tests;

use super::*;
use crate::budget::{allocate_budget, Distance};
use crate::models::bundled::{anisotropic_gaussian, bimodal, rippled_quadratic};
use crate::models::{anneal, GaussianMixture};
use crate::planner::{plan_multi, plan_slc, CovEnvelopeEstimator, Plan};
use crate::probes::probe_points;
use alloc::vec;

fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_row_slice(values))
}

fn vec2(x: f64, y: f64) -> Vector {
    Vector::from_row_slice(&[x, y])
}

fn uniform_batch(n: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

#[test]
fn check_result_directions() {
    let r = CheckResult::new("x", 1.0, Relation::AtMost, 0.9, 0.2);
    assert!(r.passed && r.as_expected());
    assert!((r.slack() + 0.1).abs() < 1e-15);
    let r = CheckResult::new("x", 0.5, Relation::AtLeast, 1.0, 0.1);
    assert!(!r.passed);
    assert!(r.clone().negative().as_expected());
    let report = Report {
        checks: vec![r.clone().negative(), CheckResult::new("y", 0.0, Relation::AtMost, 0.0, 0.0)],
    };
    assert!(report.all_passed());
    let report = Report { checks: vec![r] };
    assert_eq!(report.failures().count(), 1);
    assert!(Report::default().all_passed());
}

#[test]
fn exact_1d_w2() {
    let a = uniform_batch(1000, 1);
    assert_eq!(w2_exact_1d(&a, &a).unwrap().value, 0.0);
    let shifted: Vec<f64> = a.iter().map(|x| x + 0.37).collect();
    assert!((w2_exact_1d(&a, &shifted).unwrap().value - 0.37).abs() < 1e-12);
    let b = uniform_batch(10_000, 2);
    let c = uniform_batch(10_000, 3);
    assert!(w2_exact_1d(&b, &c).unwrap().value <= 0.02);
    assert!(w2_exact_1d(&a, &b).is_err());
    assert!(w2_exact_1d(&[], &[]).is_err());
}

#[test]
fn sliced_w2_reduces_to_exact_in_one_dimension() {
    let a: Vec<Vector> = uniform_batch(500, 4).into_iter().map(|x| Vector::from_element(1, x)).collect();
    let b: Vec<Vector> = uniform_batch(500, 5).into_iter().map(|x| Vector::from_element(1, 2.0 * x)).collect();
    let flat = |v: &[Vector]| v.iter().map(|x| x[0]).collect::<Vec<_>>();
    let exact = w2_exact_1d(&flat(&a), &flat(&b)).unwrap().value;
    let sliced = w2_sliced(&a, &b, 16, 9).unwrap().value;
    assert!((exact - sliced).abs() < 1e-14);
}

#[test]
fn sliced_w2_is_deterministic_and_rotation_invariant() {
    let p = GaussianMixture::gaussian(Vector::zeros(2), diag(&[1.0, 0.25])).unwrap();
    let a = exact_sample(&p, 2000, 1).unwrap();
    let b: Vec<Vector> = exact_sample(&p, 2000, 2)
        .unwrap()
        .into_iter()
        .map(|x| x + vec2(0.5, 0.0))
        .collect();
    let first = w2_sliced(&a, &b, 128, 3).unwrap();
    assert_eq!(first, w2_sliced(&a, &b, 128, 3).unwrap());
    let (c, s) = (libm::cos(0.7), libm::sin(0.7));
    let rot = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let ra: Vec<Vector> = a.iter().map(|x| &rot * x).collect();
    let rb: Vec<Vector> = b.iter().map(|x| &rot * x).collect();
    let rotated = w2_sliced(&ra, &rb, 128, 11).unwrap();
    let se = first.std_error.unwrap().hypot(rotated.std_error.unwrap());
    assert!((first.value - rotated.value).abs() <= 4.0 * se + 1e-3);
}

#[test]
fn sliced_w2_of_translated_point_cloud() {
    // A translation by t gives squared projections (u·t)², averaging to |t|²/d.
    let d = 4;
    let a: Vec<Vector> = (0..10).map(|i| Vector::from_element(d, i as f64)).collect();
    let t = Vector::from_row_slice(&[1.0, -2.0, 0.5, 0.0]);
    let b: Vec<Vector> = a.iter().map(|x| x + &t).collect();
    let est = w2_sliced(&a, &b, 256, 5).unwrap();
    assert!(est.value >= 0.5 * t.norm() / libm::sqrt(d as f64));
    assert!(est.value <= t.norm());
}

#[test]
fn gaussian_kl_closed_form() {
    let n01 = Gaussian::new(Vector::zeros(1), Matrix::identity(1, 1)).unwrap();
    let n11 = n01.shifted(&Vector::from_element(1, 1.0));
    assert_eq!(kl_gaussian(&n01, &n01).unwrap().value, 0.0);
    assert!((kl_gaussian(&n01, &n11).unwrap().value - 0.5).abs() < 1e-15);
}

#[test]
fn gaussian_kl_matches_quadrature_in_one_dimension() {
    let p = Gaussian::new(Vector::from_element(1, 0.3), Matrix::from_element(1, 1, 0.7)).unwrap();
    let q = Gaussian::new(Vector::from_element(1, -0.4), Matrix::from_element(1, 1, 1.9)).unwrap();
    let log_pdf = |g: &Gaussian, x: f64| {
        let v = g.cov[(0, 0)];
        let z = x - g.mean[0];
        -0.5 * z * z / v - 0.5 * libm::log(core::f64::consts::TAU * v)
    };
    // Composite Simpson on [-12, 12].
    let n = 20_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let lp = log_pdf(&p, x);
        let f = libm::exp(lp) * (lp - log_pdf(&q, x));
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f;
    }
    let brute = sum * h / 3.0;
    assert!((kl_gaussian(&p, &q).unwrap().value - brute).abs() < 1e-6);
}

#[test]
fn kernel_inverts_forward_step() {
    let p = Gaussian::new(vec2(0.4, -1.0), Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5])).unwrap();
    for a in [0.2, 0.7, 0.95] {
        let back = GaussianKernel::backward(&p, a).unwrap().apply(&p.forward(a));
        assert!((&back.mean - &p.mean).amax() < 1e-12);
        assert!((&back.cov - &p.cov).amax() < 1e-12);
    }
}

#[test]
fn kernel_agrees_with_backward_conditional() {
    let cov = Matrix::from_row_slice(2, 2, &[1.5, -0.2, -0.2, 0.8]);
    let mean = vec2(1.0, 0.5);
    let p = Gaussian::new(mean.clone(), cov.clone()).unwrap();
    let mix = GaussianMixture::gaussian(mean, cov).unwrap();
    let a = 0.8;
    let y = vec2(-0.3, 2.0);
    let cond = BackwardConditional::new(&mix, a, &y).unwrap();
    let post = cond.posterior_mixture().unwrap();
    let expected = GaussianKernel::backward(&p, a).unwrap().at(&y);
    assert!((&post.means()[0] - &expected.mean).amax() < 1e-12);
    assert!((&post.covs()[0] - &expected.cov).amax() < 1e-12);
}

#[test]
fn contraction_identical_inputs() {
    let p = Gaussian::standard(2);
    let pairs = vec![(p.clone(), p.clone())];
    let r = check_wasserstein_contraction(&p, 0.8, &pairs, KernelConfig::Slc, None).unwrap();
    assert!(r.passed);
    assert_eq!(r.measured, 0.0);
    assert!(r.note.is_some());
}

#[test]
fn contraction_ratio_for_shifted_gaussians() {
    let p = Gaussian::new(Vector::zeros(2), diag(&[1.0, 0.25])).unwrap();
    let a = 0.9;
    let t = vec2(0.0, 0.3);
    let q = Gaussian::standard(2);
    let pairs = vec![(q.clone(), q.shifted(&t))];
    let r = check_wasserstein_contraction(&p, a, &pairs, KernelConfig::Slc, None).unwrap();
    // Kernel means differ by G t with G = (a/(1−a²))·(S⁻¹ + a²/(1−a²))⁻¹.
    let tether = a * a / (1.0 - a * a);
    let expected = (a / (1.0 - a * a)) / (4.0 + tether);
    assert!((r.measured - expected).abs() < 1e-12);
    assert!(r.passed);
}

#[test]
fn contraction_is_tight_for_unit_precision() {
    // With S = I the kernel gain is exactly a·I.
    let p = Gaussian::standard(3);
    let q = Gaussian::new(Vector::zeros(3), diag(&[0.5, 1.0, 2.0])).unwrap();
    let pairs = vec![(q.clone(), q.shifted(&Vector::from_element(3, 1.0)))];
    for a in [0.3, 0.6, 0.9] {
        let r = check_wasserstein_contraction(&p, a, &pairs, KernelConfig::Slc, None).unwrap();
        assert!(r.passed);
        assert!(r.slack() <= 1e-8, "slack {}", r.slack());
        assert!(r.details["tightness"].abs() <= 1e-8);
    }
}

#[test]
fn contraction_ratio_grows_with_stepsize() {
    let p = Gaussian::new(Vector::zeros(2), diag(&[0.7, 2.0])).unwrap();
    let q = Gaussian::standard(2);
    let pairs = vec![(q.clone(), q.shifted(&vec2(1.0, 1.0)))];
    let ratios: Vec<f64> = (1..20)
        .map(|i| {
            let a = i as f64 / 20.0;
            check_wasserstein_contraction(&p, a, &pairs, KernelConfig::MultiModal, None)
                .unwrap()
                .measured
        })
        .collect();
    assert!(ratios.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn contraction_negative_controls_fail() {
    let q = Gaussian::standard(2);
    let pairs = vec![(q.clone(), q.shifted(&vec2(1.0, 0.0)))];
    let unit = Gaussian::standard(2);
    let r = check_wasserstein_contraction(&unit, 0.7, &pairs, KernelConfig::Slc, Some(STEPSIZE_PERTURBATION)).unwrap();
    assert!(r.negative_control && !r.passed && r.as_expected());

    let wide = Gaussian::new(Vector::zeros(2), Matrix::identity(2, 2) * 1e4).unwrap();
    let ok = check_wasserstein_contraction(&wide, 0.8, &pairs, KernelConfig::MultiModal, None).unwrap();
    assert!(ok.passed);
    let r = check_wasserstein_contraction(&wide, 0.8, &pairs, KernelConfig::MultiModal, Some(-STEPSIZE_PERTURBATION))
        .unwrap();
    assert!(!r.passed && r.as_expected());
}

#[test]
fn kl_chain_trivial_and_perturbed() {
    let p = Gaussian::new(vec2(0.5, 0.0), diag(&[1.0, 0.5])).unwrap();
    let a = 0.8;
    let r = check_kl_chain(&p.forward(a), &p, a, &KernelPerturbation::none(2)).unwrap();
    assert!(r.passed);
    assert!(r.measured.abs() < 1e-12 && r.bound.abs() < 1e-12);

    let q_next = p.forward(a).shifted(&vec2(0.4, -0.3));
    let r = check_kl_chain(&q_next, &p, a, &KernelPerturbation::none(2)).unwrap();
    assert!(r.passed && r.slack() > 0.0);

    let noisy = KernelPerturbation {
        shift: vec2(0.1, 0.05),
        extra_var: 0.2,
    };
    let r = check_kl_chain(&q_next, &p, a, &noisy).unwrap();
    assert!(r.passed && r.details["delta"] > 0.0);
}

#[test]
fn telescoping_on_plan_stepsizes() {
    let model = Model::from(GaussianMixture::gaussian(Vector::zeros(2), diag(&[4.0, 1.0])).unwrap());
    let plan = plan_multi(&model, 0.5, &CovEnvelopeEstimator::analytic(3.0), 0).unwrap();
    let k = plan.k;
    assert!(k > 2);
    let budget = allocate_budget(k, 0.1, Distance::W2, &Plan::from(plan.clone())).unwrap();
    let first = Gaussian::new(Vector::zeros(2), diag(&[4.0 / 0.5, 1.0 / 0.5]) * 0.5 + Matrix::identity(2, 2) * 0.5)
        .unwrap();
    let steps = &plan.stepsizes[1..k];
    let r = check_error_telescoping(&first, steps, &budget.deltas, &vec2(1.0, 1.0), Distance::W2, KernelConfig::MultiModal).unwrap();
    assert!(r.passed, "{r:?}");
    assert!((r.bound - budget.epsilon_prime).abs() < 1e-12);
    let r = check_error_telescoping(&first, steps, &vec![0.01; k], &vec2(0.0, 1.0), Distance::Kl, KernelConfig::MultiModal).unwrap();
    assert!(r.passed, "{r:?}");
    // Unit-precision stages contract, so unit weights suffice.
    let slc = plan_slc(1.0, 16.0).unwrap();
    let deltas = vec![0.02; slc.k + 1];
    let r = check_error_telescoping(
        &Gaussian::new(Vector::zeros(2), diag(&[1.0, 1.0 / 16.0])).unwrap(),
        &slc.stepsizes[..slc.k],
        &deltas,
        &vec2(1.0, 0.0),
        Distance::W2,
        KernelConfig::Slc,
    )
    .unwrap();
    assert!(r.passed && (r.bound - 0.02 * (slc.k + 1) as f64).abs() < 1e-12, "{r:?}");
    assert!(check_error_telescoping(&first, steps, &[0.1], &vec2(1.0, 0.0), Distance::W2, KernelConfig::MultiModal).is_err());
}

#[test]
fn tweedie_identity_on_gaussian_and_mixture() {
    let g = Model::from(GaussianMixture::gaussian(vec2(1.0, -1.0), diag(&[2.0, 0.5])).unwrap());
    let view = anneal(&g, 0.7, 0.6).unwrap();
    let probes = probe_points(view.model(), 100, 0).unwrap();
    let r = check_tweedie_second_order(&view, &probes).unwrap();
    assert!(r.measured < 1e-12, "{}", r.measured);

    let view = anneal(&Model::from(bimodal()), 0.8, 0.5).unwrap();
    let probes = probe_points(view.model(), 100, 1).unwrap();
    assert!(check_tweedie_second_order(&view, &probes).unwrap().passed);

    let view = anneal(&Model::from(bimodal()), 1e-6, 0.8).unwrap();
    let probes = probe_points(view.model(), 20, 2).unwrap();
    assert!(check_tweedie_second_order(&view, &probes).unwrap().passed);
    let h = view.model().hessian(&probes[0]).unwrap();
    assert!((h - Matrix::identity(2, 2) / 0.64).amax() < 1e-9);

    let slc = Model::from(rippled_quadratic());
    let view = anneal(&slc, 0.8, 0.6).unwrap();
    assert!(matches!(
        check_tweedie_second_order(&view, &[]),
        Err(Error::NoClosedFormPosterior)
    ));
}

#[test]
fn spectral_propagation_bounds() {
    let base = Model::from(GaussianMixture::standard_normal(2));
    let view = anneal(&base, 0.6, 0.5).unwrap();
    let probes = probe_points(view.model(), 50, 0).unwrap();
    let r = check_spectral_propagation(&base, Some(1.0), Some(1.0), 0.6, 0.5, &probes).unwrap();
    assert!(r.passed && r.slack().abs() < 1e-12);

    let base = Model::from(anisotropic_gaussian(8.0));
    let (m, big_m) = base.slc_bounds().unwrap();
    let r = check_spectral_propagation(&base, Some(m), Some(big_m), 0.6, 0.5, &probes).unwrap();
    // Gaussian annealing maps each base eigenvalue exactly, so both ends are attained.
    assert!(r.passed && r.slack().abs() < 1e-12);
    let loose = check_spectral_propagation(&base, Some(0.5 * m), Some(2.0 * big_m), 0.6, 0.5, &probes).unwrap();
    assert!(loose.passed && loose.slack() > 1e-2);

    let base = Model::from(rippled_quadratic());
    let (m, big_m) = base.slc_bounds().unwrap();
    let view = anneal(&base, 0.8, 0.6).unwrap();
    let probes = probe_points(&bimodal(), 30, 3).unwrap();
    let r = check_spectral_propagation(&base, Some(m), Some(big_m), 0.8, 0.6, &probes).unwrap();
    assert!(r.passed, "{r:?}");
    drop(view);

    assert!(check_spectral_propagation(&base, None, None, 0.8, 0.6, &probes).is_err());
}

#[test]
fn unit_gaussian_backward_spectrum() {
    // a² = 1/2 gives tether 1, so the conditional Hessian is exactly 2I.
    let p = GaussianMixture::standard_normal(2);
    let y = Vector::zeros(2);
    let cond = BackwardConditional::new(&p, core::f64::consts::FRAC_1_SQRT_2, &y).unwrap();
    let probes = [vec2(0.0, 0.0), vec2(3.0, -1.0)];
    let r = check_hessian_sandwich("x", &cond, Some(2.0), Some(2.0), &probes, HessianRoute::Analytic, 1e-12).unwrap();
    assert!(r.passed);
}

#[test]
fn multi_modal_sandwiches_on_bimodal() {
    let model = Model::from(bimodal());
    let sigma = 1.0;
    let plan = plan_multi(&model, sigma, &CovEnvelopeEstimator::default(), 0).unwrap();
    let traj = Trajectory::multi(&model, sigma, &plan).unwrap();
    assert!(traj.k() > 1);
    for stage in traj.stages() {
        let probes = probe_points(traj.marginal(stage), 50, stage as u64).unwrap();
        let f = check_forward_sandwich(&traj, stage, &probes, HessianRoute::FiniteDifference).unwrap();
        assert!(f.passed, "{f:?}");
        if stage < traj.k() {
            let b = check_backward_sandwich(&traj, stage, &probes, HessianRoute::FiniteDifference, None).unwrap();
            assert!(b.passed, "{b:?}");
            let bad =
                check_backward_sandwich(&traj, stage, &probes, HessianRoute::Analytic, Some(STEPSIZE_PERTURBATION))
                    .unwrap();
            assert!(!bad.passed && bad.as_expected(), "{bad:?}");
        }
    }
    assert!(check_backward_sandwich(&traj, traj.k(), &[], HessianRoute::Analytic, None).is_err());
}

#[test]
fn slc_sandwiches_and_control() {
    let model = Model::from(anisotropic_gaussian(8.0));
    let plan = plan_slc(1.0, 8.0).unwrap();
    let traj = Trajectory::slc(&model, &plan).unwrap();
    for stage in traj.stages() {
        let probes = probe_points(traj.marginal(stage), 64, 0).unwrap();
        assert!(check_forward_sandwich(&traj, stage, &probes, HessianRoute::Analytic).unwrap().passed);
        if stage < traj.k() {
            assert!(check_backward_sandwich(&traj, stage, &probes, HessianRoute::Analytic, None).unwrap().passed);
            let bad = check_backward_sandwich(&traj, stage, &probes, HessianRoute::Analytic, Some(0.2)).unwrap();
            assert!(!bad.passed);
        }
    }
}

#[test]
fn brascamp_lieb_cases() {
    let m = 2.0;
    let g = GaussianMixture::gaussian(Vector::zeros(2), Matrix::identity(2, 2) / m).unwrap();
    let r = check_brascamp_lieb(&g, m, 10_000, 0).unwrap();
    assert!(r.passed, "{r:?}");
    assert!((r.measured - 1.0 / m).abs() < 6.0 * r.details["std_error"]);
    assert!(!check_brascamp_lieb(&g, 2.0 * m, 10_000, 0).unwrap().passed);

    let rq = rippled_quadratic();
    let (m, _) = rq.slc_bounds();
    assert!(check_brascamp_lieb(&rq, m, 10_000, 1).unwrap().passed);
    assert!(!check_brascamp_lieb(&rq, 2.0 * m, 10_000, 1).unwrap().passed);
    assert!(check_brascamp_lieb(&rq, 0.0, 10, 1).is_err());
}

use std::sync::Arc;

use proptest::prelude::*;
use qplab_core::models::*;
use qplab_core::verify::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(name: &str) -> System {
    build_system(name, &ParamMap::new()).unwrap()
}

/// `b(x) = -x`, `σ = I` in two dimensions.
struct Linear;

impl Coefficients for Linear {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn in_domain(&self, _: &[f64]) -> bool {
        true
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0];
        out[1] = -x[1];
    }
    fn diffusion(&self, _: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    }
}

fn half_square_norm() -> LyapunovCertificate {
    LyapunovCertificate {
        name: "|x|²/2".into(),
        value: Arc::new(|x| 0.5 * (x[0] * x[0] + x[1] * x[1])),
        gradient: Arc::new(|x, out| out.copy_from_slice(x)),
        hessian: Arc::new(|_, out| out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0])),
        theta: 1.0,
        eta: 1.0,
        c: None,
        m: 0.0,
    }
}

#[test]
fn linear_contraction_has_rate_minus_two() {
    let r = check_monotonicity(&Linear, &SampleRegion::square(3.0, 2), 0.5, 500, 0.0).unwrap();
    let rate = r.statistic.as_ref().unwrap().value;
    assert!((rate + 2.0).abs() < 1e-9, "{rate}");
    assert!((r.worst_margin - 2.0).abs() < 1e-9);
    assert!(r.pass);
}

#[test]
fn polynomial_example_is_locally_monotone() {
    let r = check_monotonicity(&model("example41"), &SampleRegion::square(3.0, 2), 0.5, 2000, 1e6).unwrap();
    assert!(r.pass && r.statistic.unwrap().value.is_finite());
    assert!(check_monotonicity(&Linear, &SampleRegion::square(3.0, 2), 1.5, 10, 0.0).is_err());
}

#[test]
fn gradient_flow_dissipates_without_noise() {
    let shell = SampleRegion::shell(vec![0.0, 0.0], 0.5, 10.0);
    let r = check_dissipativity(&Linear, &half_square_norm(), 0.0, &shell, 1000).unwrap();
    // -L V = |x|² ≥ 0.25 on the shell
    assert!(r.pass && (r.worst_margin - 0.25).abs() < 1e-6, "{r}");
    assert!(check_dissipativity(&Linear, &half_square_norm(), 0.0, &SampleRegion::square(1.0, 2), 10).is_err());
}

#[test]
fn constant_lyapunov_function_needs_only_a_constant() {
    let flat = LyapunovCertificate {
        name: "one".into(),
        value: Arc::new(|_| 1.0),
        gradient: Arc::new(|_, out| out.iter_mut().for_each(|g| *g = 0.0)),
        hessian: Arc::new(|_, out| out.iter_mut().for_each(|h| *h = 0.0)),
        theta: 1.0,
        eta: 1.0,
        c: None,
        m: 1.0,
    };
    let r = check_lyapunov(&Linear, &flat, &SampleRegion::square(2.0, 2), 200).unwrap();
    assert!(r.pass);
    assert_eq!(r.statistic.unwrap().value, 0.0);
}

#[test]
fn vanishing_lyapunov_function_with_noise_is_singular() {
    let bad = LyapunovCertificate {
        name: "zero".into(),
        value: Arc::new(|_| 0.0),
        gradient: Arc::new(|_, out| out.copy_from_slice(&[1.0, 0.0])),
        hessian: Arc::new(|_, out| out.iter_mut().for_each(|h| *h = 0.0)),
        theta: 1.0,
        eta: 1.0,
        c: Some(1.0),
        m: 1.0,
    };
    let r = check_lyapunov(&Linear, &bad, &SampleRegion::square(1.0, 2), 50).unwrap();
    assert!(!r.pass && r.singular_samples == 50, "{r}");
}

#[test]
fn polynomial_trace_term_stays_above_minus_two() {
    // Hessian of H + 3 is diag(3x₁² + 2x₁ - 2, 1) with unit noise, minimized at x₁ = -1/3
    let sys = model("example41");
    let cert = builtin_certificate(&sys, 0.1).unwrap();
    assert_eq!((cert.theta, cert.eta), (2.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let x = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
        let t = cert.terms(&sys, &x);
        assert!((t.trace - (3.0 * x[0] * x[0] + 2.0 * x[0] - 1.0)).abs() < 1e-9 * (1.0 + x[0] * x[0]));
        assert!(t.trace > -2.0);
    }
    let r = check_lyapunov(&sys, &cert, &SampleRegion::square(5.0, 2), 2000).unwrap();
    assert!(r.pass, "{r}");
}

#[test]
fn van_der_pol_drift_identity_at_random_points() {
    let sys = model("vdp");
    let cert = builtin_certificate(&sys, 0.1).unwrap();
    assert!((cert.theta - 0.05).abs() < 1e-15 && (cert.eta - 80.0).abs() < 1e-12);
    let s5 = 5f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let (y1, y2): (f64, f64) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let v1 = y1.powi(5) / 3.0 - (3.0 * s5 + 5.0) / 6.0 * y1.powi(3) + y1 * y1 * y2 + (s5 + 3.0) / 2.0 * y1 - (s5 + 1.0) / 2.0 * y2;
        let v2 = y1.powi(3) / 3.0 - (s5 + 1.0) / 2.0 * y1 + y2;
        let lie = y2 * v1 - ((y1 * y1 - 1.0) * y2 + y1) * v2;
        let closed = -y1.powi(4) / 3.0 + (s5 + 1.0) / 2.0 * y1 * y1 - (s5 - 1.0) / 2.0 * y2 * y2;
        let scale = 1.0 + y1.powi(6);
        assert!((lie - closed).abs() < 1e-10 * scale, "{y1} {y2}");
        let t = cert.terms(&sys, &[y1, y2]);
        assert!((t.lie - closed).abs() < 1e-10 * scale);
        // only the velocity is noisy, so the trace is σ² times ∂²V/∂(Y²)² = 1
        assert!((t.trace - 1.0).abs() < 1e-12);
    }
}

#[test]
fn van_der_pol_quartic_decay_outside_radius_five() {
    let sys = model("vdp");
    let eps = 0.1;
    let cert = builtin_certificate(&sys, eps).unwrap();
    let shell = SampleRegion::shell(vec![0.0, 0.0], 5.0, 50.0);
    let r = check_inequality("quartic decay", &sys, &shell, 3000, 0.0, |x| {
        let t = cert.terms(&sys, x);
        -0.2 * (x[0].powi(4) + x[1] * x[1]) - t.j(cert.theta, cert.eta).unwrap()
    })
    .unwrap();
    assert!(r.pass, "{r}");
}

#[test]
fn positive_definiteness_follows_circulant_eigenvalues() {
    let id = check_positive_definite(0.3, -0.3);
    assert!(id.pass);
    for (e, want) in id.witness.iter().zip([1.0, 1.0, 1.0]) {
        assert!((e - want).abs() < 1e-12);
    }
    let upper = check_positive_definite(1.0, 1.0);
    assert!(!upper.pass);
    assert!(upper.witness[0].abs() < 1e-12 && upper.witness[1].abs() < 1e-12 && (upper.witness[2] - 3.0).abs() < 1e-12);
    let lower = check_positive_definite(-0.5, -0.5);
    assert!(!lower.pass);
    assert!(lower.witness[0].abs() < 1e-12 && (lower.witness[1] - 1.5).abs() < 1e-12);
    assert!(!check_positive_definite(1.2, 1.0).pass);
    assert!(!check_positive_definite(-1.0, -0.2).pass);
}

#[test]
fn growth_constants_match_closed_forms() {
    let bx = SampleRegion::square(3.0, 2);
    let c1 = |sys: &System, bound| check_growth_bound(sys, bound, &bx, 3000).unwrap().statistic.unwrap().value;
    assert!((c1(&model("vdp"), GrowthBound::QuarticFirst) - 1.0).abs() < 1e-3);
    assert!((c1(&model("figure8"), GrowthBound::QuarticCubeRoot) - 2.0).abs() < 1e-3);
    // (1 + v²)/(1 + v⁴) peaks at v² = √2 - 1 with value (1 + √2)/2
    let diode = build_system("diode", &[("sigma_quadratic".to_string(), 1.0)].into_iter().collect()).unwrap();
    let got = c1(&diode, GrowthBound::QuarticFirst);
    assert!((got - (1.0 + 2f64.sqrt()) / 2.0).abs() < 1e-3, "{got}");
    let ml = model("mayleonard");
    let ml_box = SampleRegion::Box { lower: vec![0.1; 3], upper: vec![2.0; 3] };
    assert!((check_growth_bound(&ml, GrowthBound::Constant, &ml_box, 500).unwrap().statistic.unwrap().value - 3.0).abs() < 1e-12);
    assert!(check_growth_bound(&ml, GrowthBound::QuarticFirst, &ml_box, 10).is_err());
}

#[test]
fn certificate_derivatives_match_finite_differences() {
    for name in ["example41", "vdp", "diode", "mayleonard", "figure8"] {
        let sys = model(name);
        let cert = builtin_certificate(&sys, 0.1).unwrap();
        let (bx, _) = builtin_regions(&sys);
        assert!(check_certificate_derivatives(&sys, &cert, &bx, 500).unwrap().pass, "{name}");
    }
}

#[test]
fn every_builtin_model_passes_its_sweep() {
    for name in ["example41", "example42", "vdp", "diode", "mayleonard", "figure8"] {
        let sys = model(name);
        let reports = builtin_sweep(&sys, None, 2000).unwrap();
        assert!(reports.len() >= 7);
        for r in &reports {
            assert!(r.pass, "{name}: {r}");
            assert!(r.samples > 0);
        }
    }
}

#[test]
fn competition_decay_fails_beyond_the_admissible_noise() {
    // the decay outside the ball needs ε < k/(2c₁(1+α+β)) = 1/24 at α = β = 0.5
    let sys = model("mayleonard");
    let fine = builtin_sweep(&sys, Some(0.02), 1000).unwrap();
    let coarse = builtin_sweep(&sys, Some(0.5), 1000).unwrap();
    let find = |rs: &[VerificationReport]| rs.iter().find(|r| r.check == "decay outside ball").unwrap().pass;
    assert!(find(&fine));
    assert!(!find(&coarse));
}

#[test]
fn reports_are_deterministic_and_serialize() {
    let sys = model("figure8");
    let a = builtin_sweep(&sys, None, 300).unwrap();
    let b = builtin_sweep(&sys, None, 300).unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    let back: Vec<VerificationReport> = serde_json::from_str(&json).unwrap();
    assert_eq!(back.len(), a.len());
    assert!(a[0].to_string().starts_with("PASS"));
}

#[test]
fn malformed_regions_are_rejected() {
    let sys = model("example41");
    let bad_box = SampleRegion::Box { lower: vec![0.0, 1.0], upper: vec![1.0, 0.0] };
    assert!(check_inequality("x", &sys, &bad_box, 10, 0.0, |_| 1.0).is_err());
    let bad_shell = SampleRegion::shell(vec![0.0; 3], 1.0, 2.0);
    assert!(check_inequality("x", &sys, &bad_shell, 10, 0.0, |_| 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn more_samples_never_improve_a_margin(n in 20usize..300, model_index in 0usize..3) {
        let name = ["example41", "vdp", "figure8"][model_index];
        let sys = model(name);
        let cert = builtin_certificate(&sys, 0.1).unwrap();
        let (bx, shell) = builtin_regions(&sys);
        let few = check_lyapunov(&sys, &cert, &bx, n).unwrap();
        let many = check_lyapunov(&sys, &cert, &bx, 2 * n).unwrap();
        prop_assert!(many.worst_margin <= few.worst_margin);
        let few = check_dissipativity(&sys, &cert, 0.1, &shell, n).unwrap();
        let many = check_dissipativity(&sys, &cert, 0.1, &shell, 2 * n).unwrap();
        prop_assert!(many.worst_margin <= few.worst_margin);
    }

    #[test]
    fn definiteness_matches_the_admissible_range(s in -1.5f64..2.5) {
        let r = check_positive_definite(0.5 * s, 0.5 * s);
        let closed = (1.0 + s).min(1.0 - 0.5 * s);
        prop_assert!((r.worst_margin - closed).abs() < 1e-12);
        if (s + 1.0).abs() > 1e-9 && (s - 2.0).abs() > 1e-9 {
            prop_assert_eq!(r.pass, s > -1.0 && s < 2.0);
        }
    }
}

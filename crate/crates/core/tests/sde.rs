use proptest::prelude::*;
use qplab_core::flow::euler_path;
use qplab_core::models::*;
use qplab_core::sde::*;

fn model(name: &str) -> System {
    build_system(name, &ParamMap::new()).unwrap()
}

fn sv(x: &[f64]) -> StateVector {
    StateVector::new(x)
}

fn class(sys: &System, label: &str) -> EquivalenceClass {
    sys.classes().into_iter().find(|c| c.label == label).unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn zero_noise_reproduces_euler_exactly() {
    for name in ["example41", "vdp", "diode", "mayleonard", "figure8"] {
        let sys = model(name);
        let x0 = sys.default_initial_state();
        let cfg = SimConfig::new(0.0, 0.01, 5.0, 3);
        let traj = simulate(&sys, &cfg, &x0, 0, 1).unwrap();
        let euler = euler_path(&sys, &x0, 0.01, cfg.total_steps() as usize).unwrap();
        assert_eq!(traj.states.len(), euler.len(), "{name}");
        for (a, b) in traj.states.iter().zip(&euler) {
            assert_eq!(a, b, "{name}");
        }
    }
}

#[test]
fn vdp_position_gets_no_noise() {
    let sys = model("vdp");
    let cfg = SimConfig::new(0.5, 0.01, 20.0, 11);
    let mut sim = Simulation::new(&sys, &cfg, &sv(&[1.0, -0.5]), 0).unwrap();
    let mut saw_velocity_noise = false;
    while !sim.finished() {
        let before = sim.state().to_vec();
        sim.advance().unwrap();
        assert_eq!(sim.last_noise()[0], 0.0);
        saw_velocity_noise |= sim.last_noise()[1] != 0.0;
        let dx = sim.state()[0] - before[0];
        assert!((dx - 0.01 * before[1]).abs() <= 1e-15 * (1.0 + before[0].abs()));
    }
    assert!(saw_velocity_noise);
}

#[test]
fn runs_are_reproducible_and_replicas_differ() {
    let sys = model("example41");
    let x0 = sys.default_initial_state();
    let cfg = SimConfig::new(0.1, 0.01, 10.0, 42);
    let a = simulate(&sys, &cfg, &x0, 0, 10).unwrap();
    let b = simulate(&sys, &cfg, &x0, 0, 10).unwrap();
    let c = simulate(&sys, &cfg, &x0, 1, 10).unwrap();
    let d = simulate(&sys, &SimConfig { seed: 43, ..cfg.clone() }, &x0, 0, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.last(), c.last());
    assert_ne!(a.last(), d.last());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let sys = model("figure8");
    let x0 = sys.default_initial_state();
    let cfg = SimConfig::new(0.2, 0.01, 8.0, 5);
    let mut whole = Simulation::new(&sys, &cfg, &x0, 4).unwrap();
    while !whole.finished() {
        whole.advance().unwrap();
    }
    let mut first = Simulation::new(&sys, &cfg, &x0, 4).unwrap();
    for _ in 0..317 {
        first.advance().unwrap();
    }
    let saved = serde_json::to_string(&first.checkpoint()).unwrap();
    let mut rest = Simulation::resume(&sys, &serde_json::from_str(&saved).unwrap()).unwrap();
    while !rest.finished() {
        rest.advance().unwrap();
    }
    assert_eq!(whole.state(), rest.state());
}

#[test]
fn coarsened_noise_shares_the_brownian_path() {
    // with zero drift the endpoint is √ε σ B(T) for both step sizes
    let sys = model("figure8");
    let cfg = SimConfig::new(0.3, 0.02, 4.0, 8);
    let fine_cfg = SimConfig { step: 0.01, ..cfg.clone() };
    let mut coarse = Simulation::new(&sys, &cfg, &sv(&[0.0, 0.0]), 2).unwrap().with_noise(Box::new(CoarsenedNoise::new(8, 2, 2)));
    let mut fine = Simulation::new(&sys, &fine_cfg, &sv(&[0.0, 0.0]), 2).unwrap();
    let mut noise_coarse = [0.0; 2];
    let mut noise_fine = [0.0; 2];
    while !coarse.finished() {
        coarse.advance().unwrap();
        noise_coarse.iter_mut().zip(coarse.last_noise()).for_each(|(a, b)| *a += b);
    }
    while !fine.finished() {
        fine.advance().unwrap();
        noise_fine.iter_mut().zip(fine.last_noise()).for_each(|(a, b)| *a += b);
    }
    for k in 0..2 {
        assert!((noise_coarse[k] - noise_fine[k]).abs() < 1e-12, "{noise_coarse:?} {noise_fine:?}");
    }
}

#[test]
fn occupation_is_a_probability_measure() {
    let sys = model("example41");
    let cfg = SimConfig::new(0.2, 0.01, 50.0, 1);
    let grid = Grid::new(vec![-2.0, -1.0], vec![2.0, 1.0], vec![40, 20]).unwrap();
    let occ = occupation(&sys, &cfg, &sys.default_initial_state(), 0, &grid).unwrap();
    let total: f64 = occ.mass.iter().sum::<f64>() + occ.overflow;
    assert!((total - 1.0).abs() < 1e-12);
    // the K1 well reaches x₁ < -2, so some time falls outside the box
    assert!(occ.overflow > 0.0);
    assert!((occ.total_time - 45.0).abs() < 1e-9);
    let traj = simulate(&sys, &cfg.clone().with_burn_in(0.0), &sys.default_initial_state(), 0, 1).unwrap();
    let from_traj = OccupationMeasure::from_trajectory(&traj, &grid);
    assert!((from_traj.mass.iter().sum::<f64>() + from_traj.overflow - 1.0).abs() < 1e-12);
}

#[test]
fn occupation_accumulators_merge_and_resume() {
    let sys = model("vdp");
    let cfg = SimConfig::new(0.1, 0.01, 20.0, 9);
    let grid = Grid::new(vec![-3.0, -4.0], vec![3.0, 4.0], vec![30, 30]).unwrap();
    let x0 = sys.default_initial_state();
    let direct = occupation(&sys, &cfg, &x0, 0, &grid).unwrap();
    let mut sim = Simulation::new(&sys, &cfg, &x0, 0).unwrap();
    let mut acc = OccupationAccumulator::new(grid.clone());
    run_into(&mut sim, &mut acc, 555).unwrap();
    let saved = (sim.checkpoint(), acc.clone());
    let mut sim = Simulation::resume(&sys, &saved.0).unwrap();
    let mut acc = saved.1;
    run_into(&mut sim, &mut acc, u64::MAX).unwrap();
    assert_eq!(acc.finish(), direct);
}

#[test]
fn neighborhood_mass_uses_class_geometry() {
    let sys = model("example41");
    let grid = Grid::new(vec![-3.0, -2.0], vec![2.0, 2.0], vec![100, 80]).unwrap();
    // a deterministic run started on K2 stays on that level curve
    let cfg = SimConfig::new(0.0, 0.001, 20.0, 0);
    let occ = occupation(&sys, &cfg, &sys.default_initial_state(), 0, &grid).unwrap();
    let k2 = neighborhood_mass(&sys, &occ, &class(&sys, "K2"), 0.15).unwrap();
    let k3 = neighborhood_mass(&sys, &occ, &class(&sys, "K3"), 0.15).unwrap();
    assert!(k2 > 0.99, "{k2}");
    assert_eq!(k3, 0.0);
    assert!(neighborhood_mass(&sys, &occ, &class(&sys, "K2"), 0.0).is_err());
}

#[test]
fn weak_error_of_halving_the_step_is_below_monte_carlo_error() {
    let sys = model("example41");
    let k2 = class(&sys, "K2");
    let grid = Grid::new(vec![-3.5, -2.5], vec![2.5, 2.5], vec![240, 200]).unwrap();
    let x0 = sys.default_initial_state();
    let coarse_cfg = SimConfig::new(0.1, 0.004, 40.0, 77);
    let fine_cfg = SimConfig { step: 0.002, ..coarse_cfg.clone() };
    let (mut coarse, mut fine) = (Vec::new(), Vec::new());
    for r in 0..100 {
        let mut acc = OccupationAccumulator::new(grid.clone());
        let mut sim = Simulation::new(&sys, &coarse_cfg, &x0, r).unwrap().with_noise(Box::new(CoarsenedNoise::new(77, r, 2)));
        run_into(&mut sim, &mut acc, u64::MAX).unwrap();
        coarse.push(neighborhood_mass(&sys, &acc.finish(), &k2, 0.15).unwrap());
        let occ = occupation(&sys, &fine_cfg, &x0, r, &grid).unwrap();
        fine.push(neighborhood_mass(&sys, &occ, &k2, 0.15).unwrap());
    }
    let (mc, se) = mean_and_se(&fine);
    let (mh, _) = mean_and_se(&coarse);
    assert!((mc - mh).abs() < se, "coarse {mh} fine {mc} se {se}");
}

#[test]
fn mean_exit_time_grows_as_noise_shrinks() {
    let sys = model("example41");
    let region = Region::HamiltonianBelow { level: -0.2 };
    let k3 = sv(&[1.0, 0.0]);
    let mut means = Vec::new();
    for eps in [0.3, 0.2, 0.15] {
        let cfg = SimConfig::new(eps, 0.01, 2000.0, 21);
        let times: Vec<f64> = (0..100)
            .map(|r| {
                let rec = exit_time(&sys, &cfg, &k3, &region, r).unwrap();
                assert!(!rec.censored);
                assert!(!region.contains(&sys, &rec.state));
                rec.time
            })
            .collect();
        means.push(mean_and_se(&times).0);
    }
    assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
}

#[test]
fn exit_records_report_censoring() {
    let sys = model("example41");
    let region = Region::Ball { center: vec![1.0, 0.0], radius: 5.0 };
    let cfg = SimConfig::new(0.01, 0.01, 1.0, 0);
    let rec = exit_time(&sys, &cfg, &sv(&[1.0, 0.0]), &region, 0).unwrap();
    assert!(rec.censored && (rec.time - 1.0).abs() < 1e-12);
    assert_eq!(exit_time(&sys, &cfg, &sv(&[9.0, 0.0]), &region, 0).unwrap_err(), SdeError::StartOutsideRegion);
    let bad = Region::HalfPlane { normal: vec![0.0, 0.0], offset: 1.0 };
    assert!(matches!(exit_time(&sys, &cfg, &sv(&[1.0, 0.0]), &bad, 0), Err(SdeError::MalformedRegion(_))));
    let no_integral = Region::HamiltonianBelow { level: 0.0 };
    assert!(matches!(no_integral.validate(&model("mayleonard")), Err(SdeError::MalformedRegion(_))));
}

#[test]
fn log_euler_keeps_competition_model_positive() {
    let sys = model("mayleonard");
    let cfg = SimConfig::new(0.5, 0.01, 10_000.0, 13).with_scheme(Scheme::LogEuler);
    let mut sim = Simulation::new(&sys, &cfg, &sys.default_initial_state(), 0).unwrap();
    assert_eq!(cfg.total_steps(), 1_000_000);
    while !sim.finished() {
        sim.advance().unwrap();
        assert!(sim.state().iter().all(|&v| v > 0.0));
    }
}

#[test]
fn euler_maruyama_reports_leaving_the_orthant() {
    let sys = model("mayleonard");
    let cfg = SimConfig::new(1.0, 0.5, 500.0, 2);
    let err = (0..20).find_map(|r| simulate(&sys, &cfg, &sv(&[0.05, 0.05, 0.05]), r, 100).err());
    assert!(matches!(err, Some(SdeError::PositivityViolated { .. })), "{err:?}");
    let err = Simulation::new(&model("example41"), &cfg.with_scheme(Scheme::LogEuler), &sv(&[1.0, 0.0]), 0).err();
    assert_eq!(err, Some(SdeError::SchemeUnsupported));
}

#[test]
fn invalid_configs_are_rejected() {
    let ok = SimConfig::new(0.1, 0.01, 1.0, 0);
    assert!(ok.validate().is_ok());
    assert!((ok.burn_in - 0.1).abs() < 1e-15);
    for bad in [
        SimConfig { epsilon: -1.0, ..ok.clone() },
        SimConfig { step: 0.0, ..ok.clone() },
        SimConfig { step: 2.0, ..ok.clone() },
        SimConfig { burn_in: 1.0, ..ok.clone() },
        SimConfig { horizon: f64::INFINITY, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(SdeError::InvalidConfig(_))), "{bad:?}");
    }
    let sys = model("mayleonard");
    assert!(matches!(Simulation::new(&sys, &ok, &sv(&[-0.1, 0.2, 0.3]), 0), Err(SdeError::Model(_))));
    let json = r#"{"epsilon":0.1,"step":0.01,"horizon":1.0,"seed":3,"scheme":"log-euler"}"#;
    assert_eq!(serde_json::from_str::<SimConfig>(json).unwrap().scheme, Scheme::LogEuler);
    assert!(serde_json::from_str::<SimConfig>(r#"{"epsilon":0.1,"step":0.01,"horizon":1.0,"seed":3,"steps":4}"#).is_err());
}

#[test]
fn blow_up_is_reported() {
    // the van der Pol drift is cubic, so a large start escapes
    let sys = model("vdp");
    let cfg = SimConfig::new(0.0, 0.1, 100.0, 0);
    assert!(matches!(simulate(&sys, &cfg, &sv(&[50.0, 50.0]), 0, 1), Err(SdeError::BlowUp { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn occupation_mass_sums_to_one(seed in 0u64..1000, eps in 0.01f64..1.0, model_index in 0usize..5) {
        let name = ["example41", "example42", "vdp", "diode", "figure8"][model_index];
        let sys = model(name);
        let cfg = SimConfig::new(eps, 0.01, 5.0, seed);
        let grid = Grid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![16, 16]).unwrap();
        match occupation(&sys, &cfg, &sys.default_initial_state(), seed % 7, &grid) {
            Ok(occ) => {
                let total: f64 = occ.mass.iter().sum::<f64>() + occ.overflow;
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(occ.mass.iter().all(|&m| m >= 0.0));
            }
            Err(e) => prop_assert!(matches!(e, SdeError::BlowUp { .. }), "{e}"),
        }
    }

    #[test]
    fn same_key_same_path(seed in 0u64..u64::MAX, replica in 0u64..1000) {
        let sys = model("figure8");
        let cfg = SimConfig::new(0.3, 0.01, 1.0, seed);
        let a = simulate(&sys, &cfg, &sys.default_initial_state(), replica, 5).unwrap();
        let b = simulate(&sys, &cfg, &sys.default_initial_state(), replica, 5).unwrap();
        prop_assert_eq!(a, b);
    }
}

use qplab_core::flow::*;
use qplab_core::models::{build_system, distance_to_closed_polyline, ParamMap, StateVector};

fn sys(name: &str) -> qplab_core::models::System {
    build_system(name, &ParamMap::new()).unwrap()
}

fn params(kv: &[(&str, f64)]) -> ParamMap {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn grid(lo: f64, hi: f64, n: usize) -> SeedGrid {
    SeedGrid { lower: vec![lo, lo], upper: vec![hi, hi], per_axis: n }
}

#[test]
fn example41_equilibria_and_types() {
    let eq = find_equilibria(&sys("example41"), &grid(-3.0, 3.0, 25)).unwrap();
    let expect = [
        ([-2.0, 0.0], Stability::UnstableNode),
        ([0.0, 0.0], Stability::Saddle),
        ([1.0, 0.0], Stability::StableFocus),
    ];
    assert_eq!(eq.len(), 3, "{eq:?}");
    for (e, (at, kind)) in eq.iter().zip(expect) {
        assert!(e.state.distance(&at) < 1e-10, "{e:?}");
        assert_eq!(e.stability, kind);
    }
}

#[test]
fn diode_equilibria_match_closed_form() {
    let (l, c, r, e) = (1.0, 2.0, 2.0, 0.7);
    let s = build_system("diode", &params(&[("L", l), ("C", c), ("R", r), ("E", e)])).unwrap();
    let eq = find_equilibria(&s, &SeedGrid { lower: vec![-1.0, -1.0], upper: vec![2.5, 1.0], per_axis: 15 }).unwrap();
    let u = (1.0 - 1.0 / r).sqrt();
    let closed = [[e - u, u / r], [e, 0.0], [e + u, -u / r]];
    assert_eq!(eq.len(), 3);
    for (found, want) in eq.iter().zip(closed) {
        assert!(found.state.distance(&want) < 1e-10, "{found:?} vs {want:?}");
    }
    assert_eq!(eq[1].stability, Stability::Saddle);
    // seeds near each equilibrium converge within five Newton steps
    for want in closed {
        let seed = [want[0] + 0.02, want[1] - 0.02];
        let (_, iters) = newton_equilibrium(&s, &seed, 50).unwrap();
        assert!(iters <= 5, "{iters} iterations");
    }
}

#[test]
fn mayleonard_interior_equilibrium() {
    let s = sys("mayleonard");
    let grid = SeedGrid { lower: vec![0.1; 3], upper: vec![0.9; 3], per_axis: 4 };
    let eq = find_equilibria(&s, &grid).unwrap();
    let interior: Vec<_> = eq.iter().filter(|e| e.state.0.iter().all(|&v| v > 1e-6)).collect();
    assert!(interior.iter().any(|e| e.state.distance(&[0.5, 0.5, 0.5]) < 1e-10));
    let e = interior.iter().find(|e| e.state.distance(&[0.5, 0.5, 0.5]) < 1e-10).unwrap();
    assert_eq!(e.stability, Stability::StableNode);
}

#[test]
fn classification_is_stable_under_tiny_perturbations() {
    let s = sys("example41");
    for at in [[-2.0, 0.0], [0.0, 0.0], [1.0, 0.0]] {
        let base = classify(&linearization_eigenvalues(&s, &at));
        let nudged = classify(&linearization_eigenvalues(&s, &[at[0] + 1e-9, at[1] - 1e-9]));
        assert_eq!(base, nudged);
    }
}

#[test]
fn rk45_error_tracks_tolerance() {
    // harmonic oscillator, exact solution (cos t, -sin t)
    let field = |x: &[f64], o: &mut [f64]| {
        o[0] = x[1];
        o[1] = -x[0];
    };
    let t = 10.0;
    let mut errs = Vec::new();
    for tol in [1e-4, 1e-6, 1e-8, 1e-10] {
        let tr = integrate_field(&field, &[1.0, 0.0], t, IntegrateOptions::with_tol(tol)).unwrap();
        let x = tr.last();
        errs.push(((x[0] - t.cos()).powi(2) + (x[1] + t.sin()).powi(2)).sqrt());
    }
    for w in errs.windows(2) {
        let slope = (w[0] / w[1]).log10() / 2.0;
        assert!(w[1] < w[0] && slope > 0.5 && slope < 1.5, "{errs:?}");
    }
}

#[test]
fn blow_up_reports_escape_time() {
    let field = |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0];
    match integrate_field(&field, &[1.0], 2.0, IntegrateOptions::with_tol(1e-10)) {
        Err(FlowError::BlowUp { time, .. }) => assert!((time - 1.0).abs() < 1e-3, "{time}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn backward_integration_inverts_forward() {
    let s = sys("vdp");
    let fwd = integrate(&s, &StateVector::new([0.5, 0.5]), 3.0, 1e-12).unwrap();
    let field = |x: &[f64], o: &mut [f64]| s.drift_into(x, o);
    let back = integrate_field(&field, fwd.last().as_slice(), -3.0, IntegrateOptions::with_tol(1e-12)).unwrap();
    assert!(back.last().distance(&[0.5, 0.5]) < 1e-8);
}

#[test]
fn vdp_cycle_by_return_map() {
    let s = sys("vdp");
    let orbit = poincare_fixed_point(&s, 1.0, 1e-8).unwrap();
    let (again, period) = return_map(&s, orbit.crossing, 1e-12).unwrap();
    assert!((again - orbit.crossing).abs() < 1e-8);
    assert!((period - orbit.period).abs() < 1e-6);
    // independent closure check with a fixed-step RK4 run over one period
    let steps = 200_000;
    let h = period / steps as f64;
    let mut x = [orbit.crossing, 0.0];
    let f = |x: [f64; 2]| [x[1], -((x[0] * x[0] - 1.0) * x[1] + x[0])];
    for _ in 0..steps {
        let k1 = f(x);
        let k2 = f([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
        let k3 = f([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
        let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]]);
        for i in 0..2 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    assert!((x[0] - orbit.crossing).abs() < 1e-6 && x[1].abs() < 1e-6, "{x:?}");
    // a long unperturbed run from (2, 0) lands on the same orbit
    let tr = integrate(&s, &StateVector::new([2.0, 0.0]), 100.0, 1e-10).unwrap();
    let end = tr.last();
    let near = distance_to_closed_polyline(&orbit.samples.states, end.as_slice());
    assert!(near < 1e-4, "{near}");
}

#[test]
fn example41_cycle_measure_matches_flow_period() {
    let s = sys("example41");
    let m = cycle_measure(&s, -1.0, 512).unwrap();
    assert!(m.invariant);
    assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    for p in &m.points {
        assert!((s.hamiltonian(p.as_slice()).unwrap() + 1.0).abs() < 1e-9);
    }
    let t = return_time(&s, m.points[0].as_slice(), &[-2.0, 0.0], 1e-11).unwrap();
    assert!((t - m.period).abs() < 1e-3 * t, "{t} vs {}", m.period);
}

#[test]
fn figure_eight_lobe_level_is_traced() {
    let s = sys("figure8");
    let m = cycle_measure(&s, -0.125, 256).unwrap();
    assert!(m.points.iter().all(|p| p[0] > 0.0), "right lobe expected");
    assert!(m.points.iter().all(|p| (s.hamiltonian(p.as_slice()).unwrap() + 0.125).abs() < 1e-9));
    assert!(!m.invariant);
    let field = conservative_field(&s).unwrap();
    let t = return_time_field(&field, m.points[0].as_slice(), &[1.0, 0.0], 1e-11).unwrap();
    assert!((t - m.period).abs() < 1e-3 * t);
    // invariant outer cycle H = 1/2
    let outer = cycle_measure_around(&s, 0.5, 256, &[0.0, 0.0]).unwrap();
    assert!(outer.invariant);
    let t = return_time(&s, outer.points[0].as_slice(), &[0.0, 0.0], 1e-11).unwrap();
    assert!((t - outer.period).abs() < 1e-3 * t);
}

#[test]
fn hopf_curve_limits() {
    assert_eq!(hopf_curve(1.0).unwrap(), 1.0);
    assert!((hopf_curve(3.0).unwrap() - (-3.0 + 18f64.sqrt())).abs() < 1e-15);
    assert!((hopf_curve(3.0).unwrap() - 1.2426).abs() < 1e-4);
    assert!((hopf_curve(1000.0).unwrap() - 1.5).abs() < 3e-3);
}

#[test]
fn trajectory_csv_round_trip() {
    let s = sys("example41");
    let tr = integrate(&s, &StateVector::new([0.5, 0.5]), 1.0, 1e-8).unwrap();
    let csv = tr.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x1,x2"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), tr.times.len());
    for (row, (t, x)) in rows.iter().zip(tr.times.iter().zip(&tr.states)) {
        assert_eq!(row[0], *t);
        assert_eq!(&row[1..], x.as_slice());
    }
}

//! Deterministic skeleton: adaptive integration, equilibria, level-set cycles
//! and their invariant measures, and section return maps.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ClassShape, ModelError, StateVector, System};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trajectory left the ball of radius {bound} at t = {time}")]
    BlowUp { time: f64, bound: f64 },
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no crossing of the level {level} found along direction {angle}")]
    LevelNotFound { level: f64, angle: f64 },
    #[error("no return to the section within t = {0}")]
    NoReturn(f64),
    #[error("iteration did not converge after {0} steps")]
    NotConverged(usize),
}

/// States are considered escaped beyond this norm.
pub const BLOW_UP_BOUND: f64 = 1e6;

/// Sampled solution of an ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
}

impl Trajectory {
    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectory is never empty")
    }

    /// CSV with header `t,x1,..,xd`.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, StateVector::dim);
        let mut out = String::from("t");
        for i in 1..=d {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{t}"));
            for v in x.as_slice() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Linear interpolation at time `t` (clamped to the sampled range).
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.states[0].0.clone();
        }
        if k >= self.times.len() {
            return self.last().0.clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        self.states[k - 1]
            .as_slice()
            .iter()
            .zip(self.states[k].as_slice())
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Right-hand side `x ↦ f(x)` of an autonomous ODE.
pub type Field<'a> = dyn Fn(&[f64], &mut [f64]) + 'a;

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const ERR: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One adaptive Dormand–Prince integrator run over a generic field.
struct Stepper<'a> {
    field: &'a Field<'a>,
    tol: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(field: &'a Field<'a>, dim: usize, tol: f64) -> Self {
        Self {
            field,
            tol,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
        }
    }

    /// Attempts a step of size `h` from `x` (with `k[0] = f(x)`), writing the
    /// fifth-order result to `out`; returns the scaled error norm.
    fn attempt(&mut self, x: &[f64], h: f64, out: &mut [f64]) -> f64 {
        let d = x.len();
        for s in 1..7 {
            for i in 0..d {
                let mut acc = x[i];
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += h * a * self.k[j][i];
                }
                self.tmp[i] = acc;
            }
            (self.field)(&self.tmp, &mut self.k[s]);
            if s == 6 {
                out.copy_from_slice(&self.tmp);
            }
        }
        let mut err = 0.0;
        for i in 0..d {
            let e: f64 = (0..7).map(|s| ERR[s] * self.k[s][i]).sum::<f64>() * h;
            let scale = self.tol * (1.0 + x[i].abs().max(out[i].abs()));
            err += (e / scale).powi(2);
        }
        (err / d as f64).sqrt()
    }
}

/// Options for [`integrate_field`].
#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub tol: f64,
    /// Output spacing; `None` records every accepted step.
    pub sample_every: Option<f64>,
    pub max_step: f64,
}

impl IntegrateOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, sample_every: None, max_step: f64::INFINITY }
    }
}

/// Event reported by [`integrate_until`].
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub time: f64,
    pub state: Vec<f64>,
}

/// Integrates `f` from `x0` over `[0, t_end]` (or backwards if `t_end < 0`).
pub fn integrate_field(
    field: &Field<'_>,
    x0: &[f64],
    t_end: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory, FlowError> {
    let mut traj = Trajectory { times: vec![0.0], states: vec![StateVector::new(x0)] };
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let mut next_sample = opts.sample_every.map(|s| dir * s.abs());
    run(field, x0, t_end, opts, &mut |t0, x0, f0, t1, x1, f1| {
        match next_sample {
            None => {
                traj.times.push(t1);
                traj.states.push(StateVector::new(x1));
            }
            Some(ref mut due) => {
                let step = opts.sample_every.unwrap_or(0.0).abs();
                while *due * dir <= t1 * dir + 1e-9 * step {
                    let s = (*due - t0) / (t1 - t0);
                    traj.times.push(*due);
                    traj.states.push(StateVector::new(hermite(x0, f0, x1, f1, t1 - t0, s)));
                    *due += dir * step;
                }
            }
        }
        None::<()>
    })?;
    Ok(traj)
}

/// Integrates until `event` changes sign from negative to positive (or the
/// horizon is reached, which is an error).
pub fn integrate_until(
    field: &Field<'_>,
    x0: &[f64],
    t_max: f64,
    tol: f64,
    min_time: f64,
    event: &dyn Fn(&[f64]) -> f64,
) -> Result<Crossing, FlowError> {
    let found = run(field, x0, t_max, IntegrateOptions::with_tol(tol), &mut |t0, a, fa, t1, b, fb| {
        if t1 < min_time {
            return None;
        }
        let (ga, gb) = (event(a), event(b));
        if !(ga < 0.0 && gb >= 0.0) {
            return None;
        }
        let h = t1 - t0;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if event(&hermite(a, fa, b, fb, h, mid)) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        Some(Crossing { time: t0 + s * h, state: hermite(a, fa, b, fb, h, s) })
    })?;
    found.ok_or(FlowError::NoReturn(t_max))
}

/// Cubic Hermite interpolation on a step of length `h` at fraction `s`.
fn hermite(a: &[f64], fa: &[f64], b: &[f64], fb: &[f64], h: f64, s: f64) -> Vec<f64> {
    let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
    let h10 = s * s * s - 2.0 * s * s + s;
    let h01 = -2.0 * s * s * s + 3.0 * s * s;
    let h11 = s * s * s - s * s;
    (0..a.len())
        .map(|i| h00 * a[i] + h10 * h * fa[i] + h01 * b[i] + h11 * h * fb[i])
        .collect()
}

type StepHook<'h, R> = dyn FnMut(f64, &[f64], &[f64], f64, &[f64], &[f64]) -> Option<R> + 'h;

fn run<R>(
    field: &Field<'_>,
    x0: &[f64],
    t_end: f64,
    opts: IntegrateOptions,
    hook: &mut StepHook<'_, R>,
) -> Result<Option<R>, FlowError> {
    if !(opts.tol > 0.0) || !t_end.is_finite() {
        return Err(FlowError::InvalidArgument("tolerance must be positive and horizon finite".into()));
    }
    let d = x0.len();
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let span = t_end.abs();
    let mut st = Stepper::new(field, d, opts.tol);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut f0 = vec![0.0; d];
    field(&x, &mut f0);
    let mut t = 0.0f64;
    let mut h = (0.01 * span).min(opts.max_step).min(0.1).max(1e-8);
    while t < span {
        if span - t < h {
            h = span - t;
        }
        st.k[0].copy_from_slice(&f0);
        let err = st.attempt(&x, dir * h, &mut next);
        if !err.is_finite() || err > 1.0 {
            let shrink = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.1) } else { 0.1 };
            h *= shrink;
            if h < 1e-14 * (1.0 + t) {
                return Err(FlowError::StepUnderflow(dir * t));
            }
            continue;
        }
        let t_new = t + h;
        // FSAL: the last stage is f at the new point.
        let f_new = st.k[6].clone();
        if next.iter().map(|v| v * v).sum::<f64>().sqrt() > BLOW_UP_BOUND {
            return Err(FlowError::BlowUp { time: dir * t_new, bound: BLOW_UP_BOUND });
        }
        if let Some(r) = hook(dir * t, &x, &f0, dir * t_new, &next, &f_new) {
            return Ok(Some(r));
        }
        x.copy_from_slice(&next);
        f0 = f_new;
        t = t_new;
        let grow = if err > 0.0 { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
        h = (h * grow).min(opts.max_step);
    }
    Ok(None)
}

/// Integrates the model's drift from `x0` for time `t_end`.
pub fn integrate(
    sys: &System,
    x0: &StateVector,
    t_end: f64,
    tol: f64,
) -> Result<Trajectory, FlowError> {
    sys.check_state(x0.as_slice())?;
    let field = |x: &[f64], out: &mut [f64]| sys.drift_into(x, out);
    integrate_field(&field, x0.as_slice(), t_end, IntegrateOptions::with_tol(tol))
}

/// Explicit Euler iterates of the drift, the `ε = 0` limit of the SDE schemes.
pub fn euler_path(sys: &System, x0: &StateVector, step: f64, steps: usize) -> Result<Vec<StateVector>, FlowError> {
    sys.check_state(x0.as_slice())?;
    let d = sys.dim();
    let mut x = x0.0.clone();
    let mut b = vec![0.0; d];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    for _ in 0..steps {
        sys.drift_into(&x, &mut b);
        for i in 0..d {
            x[i] = x[i] + step * b[i];
        }
        out.push(StateVector::new(x.clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    StableNode,
    UnstableNode,
    Saddle,
    StableFocus,
    UnstableFocus,
    CenterLike,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: StateVector,
    pub stability: Stability,
    /// Eigenvalues of the drift Jacobian as `(re, im)` pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    pub newton_iterations: usize,
}

/// Rectangular grid of Newton seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub per_axis: usize,
}

impl SeedGrid {
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.lower.len();
        let n = self.per_axis.max(1);
        let total = n.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|i| {
                        let k = idx % n;
                        idx /= n;
                        let w = if n == 1 { 0.5 } else { k as f64 / (n - 1) as f64 };
                        self.lower[i] + w * (self.upper[i] - self.lower[i])
                    })
                    .collect()
            })
            .collect()
    }
}

/// Newton refinement of a zero of the drift from `seed`.
pub fn newton_equilibrium(sys: &System, seed: &[f64], max_iter: usize) -> Option<(Vec<f64>, usize)> {
    let d = sys.dim();
    let mut x = seed.to_vec();
    let mut b = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    for it in 0..=max_iter {
        sys.drift_into(&x, &mut b);
        let res = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !res.is_finite() {
            return None;
        }
        if res < 1e-13 {
            return Some((x, it));
        }
        if it == max_iter {
            break;
        }
        sys.drift_jacobian(&x, &mut jac);
        let m = DMatrix::from_row_slice(d, d, &jac);
        let rhs = nalgebra::DVector::from_column_slice(&b);
        let delta = m.lu().solve(&rhs)?;
        for i in 0..d {
            x[i] -= delta[i];
        }
        if !sys.in_domain(&x) {
            return None;
        }
    }
    None
}

/// Eigenvalues of the drift Jacobian at `x`.
pub fn linearization_eigenvalues(sys: &System, x: &[f64]) -> Vec<(f64, f64)> {
    let d = sys.dim();
    let mut jac = vec![0.0; d * d];
    sys.drift_jacobian(x, &mut jac);
    let m = DMatrix::from_row_slice(d, d, &jac);
    let mut ev: Vec<(f64, f64)> = m.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Classification from the spectrum of the linearization.
pub fn classify(eigenvalues: &[(f64, f64)]) -> Stability {
    const ZERO: f64 = 1e-10;
    let scale = eigenvalues.iter().map(|(r, i)| r.hypot(*i)).fold(0.0, f64::max).max(1.0);
    if eigenvalues.iter().any(|(r, i)| r.hypot(*i) < ZERO * scale) {
        return Stability::Unclassified;
    }
    let complex = eigenvalues.iter().any(|(_, i)| i.abs() > ZERO * scale);
    let neg = eigenvalues.iter().filter(|(r, _)| *r < -ZERO * scale).count();
    let pos = eigenvalues.iter().filter(|(r, _)| *r > ZERO * scale).count();
    let n = eigenvalues.len();
    if neg > 0 && pos > 0 {
        Stability::Saddle
    } else if neg == n {
        if complex { Stability::StableFocus } else { Stability::StableNode }
    } else if pos == n {
        if complex { Stability::UnstableFocus } else { Stability::UnstableNode }
    } else if complex {
        Stability::CenterLike
    } else {
        Stability::Unclassified
    }
}

/// Newton-refines every seed, deduplicates, and classifies the distinct zeros.
pub fn find_equilibria(sys: &System, seeds: &SeedGrid) -> Result<Vec<Equilibrium>, FlowError> {
    if seeds.lower.len() != sys.dim() || seeds.upper.len() != sys.dim() {
        return Err(FlowError::InvalidArgument("seed grid dimension mismatch".into()));
    }
    let mut found: Vec<Equilibrium> = Vec::new();
    for seed in seeds.points() {
        if !sys.in_domain(&seed) {
            continue;
        }
        let Some((x, iterations)) = newton_equilibrium(sys, &seed, 50) else { continue };
        if let Some(existing) = found.iter_mut().find(|e| e.state.distance(&x) < 1e-6) {
            existing.newton_iterations = existing.newton_iterations.min(iterations);
            continue;
        }
        let eigenvalues = linearization_eigenvalues(sys, &x);
        found.push(Equilibrium {
            state: StateVector::new(x),
            stability: classify(&eigenvalues),
            eigenvalues,
            newton_iterations: iterations,
        });
    }
    found.sort_by(|a, b| {
        a.state.0.partial_cmp(&b.state.0).unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(found)
}

/// Samples of a closed invariant level curve with its normalized invariant measure.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleMeasure {
    pub level: f64,
    pub points: Vec<StateVector>,
    /// Probability weights of the normalized arc-length density `1/|∇H|`.
    pub weights: Vec<f64>,
    /// Period of the conservative motion `(∂H/∂x₂, -∂H/∂x₁)` along the curve.
    pub period: f64,
    /// Whether the full drift is tangent to the curve, so that the weights are
    /// the invariant measure of the drift itself.
    pub invariant: bool,
}

/// Traces `{H = level}` around the first enclosed class center that works.
pub fn cycle_measure(sys: &System, level: f64, n: usize) -> Result<CycleMeasure, FlowError> {
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for class in sys.classes() {
        match class.shape {
            ClassShape::Level { level: l, center: Some(c) } if (l - level).abs() < 1e-12 => {
                centers.insert(0, c.0)
            }
            ClassShape::Point { at } => centers.push(at.0),
            _ => {}
        }
    }
    let mut last = FlowError::LevelNotFound { level, angle: 0.0 };
    for c in centers {
        if sys.hamiltonian(&c)? >= level {
            continue;
        }
        match cycle_measure_around(sys, level, n, &c) {
            Ok(m) => return Ok(m),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Traces `{H = level}` by ray casting from `center`, which must satisfy
/// `H(center) < level` and see the curve as star-shaped.
pub fn cycle_measure_around(
    sys: &System,
    level: f64,
    n: usize,
    center: &[f64],
) -> Result<CycleMeasure, FlowError> {
    if sys.dim() != 2 || n < 8 {
        return Err(FlowError::InvalidArgument("level tracing needs a planar model and n ≥ 8".into()));
    }
    if sys.hamiltonian(center)? >= level {
        return Err(FlowError::InvalidArgument("center must lie below the level".into()));
    }
    let mut points = Vec::with_capacity(n);
    let mut density = Vec::with_capacity(n);
    let mut b = [0.0; 2];
    let mut invariant = true;
    for k in 0..n {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let e = [theta.cos(), theta.sin()];
        let r = ray_level(sys, center, e, level).ok_or(FlowError::LevelNotFound { level, angle: theta })?;
        let x = [center[0] + r * e[0], center[1] + r * e[1]];
        let g = sys.hamiltonian_gradient(&x)?;
        let ep = [-e[1], e[0]];
        let g_e = g[0] * e[0] + g[1] * e[1];
        let dr = -r * (g[0] * ep[0] + g[1] * ep[1]) / g_e;
        let dx = [dr * e[0] + r * ep[0], dr * e[1] + r * ep[1]];
        let gnorm = g[0].hypot(g[1]);
        sys.drift_into(&x, &mut b);
        if (b[0] * g[0] + b[1] * g[1]).abs() > 1e-8 * gnorm * gnorm.max(1.0) {
            invariant = false;
        }
        density.push(dx[0].hypot(dx[1]) / gnorm);
        points.push(StateVector::new(x));
    }
    let dtheta = 2.0 * std::f64::consts::PI / n as f64;
    let total: f64 = density.iter().sum();
    let period = total * dtheta;
    let weights = density.iter().map(|w| w / total).collect();
    Ok(CycleMeasure { level, points, weights, period, invariant })
}

fn ray_level(sys: &System, c: &[f64], e: [f64; 2], level: f64) -> Option<f64> {
    let h = |r: f64| sys.hamiltonian(&[c[0] + r * e[0], c[1] + r * e[1]]).unwrap_or(f64::NAN) - level;
    let mut lo = 0.0;
    let step = 0.01;
    let mut hi = step;
    while h(hi) < 0.0 {
        lo = hi;
        hi += step;
        if hi > 100.0 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick the endpoint with the smaller residual
    Some(if h(lo).abs() <= h(hi).abs() { lo } else { hi })
}

/// Conservative part `(∂H/∂x₂, -∂H/∂x₁)` of a planar model with a first integral.
pub fn conservative_field(sys: &System) -> Result<impl Fn(&[f64], &mut [f64]) + '_, FlowError> {
    sys.hamiltonian_gradient(&[0.0, 0.0])?;
    Ok(move |x: &[f64], out: &mut [f64]| {
        let g = sys.hamiltonian_gradient(x).unwrap_or([f64::NAN; 2]);
        out[0] = g[1];
        out[1] = -g[0];
    })
}

/// Time for the drift flow to carry `start` once around `center` back to the
/// ray through `start`.
pub fn return_time(sys: &System, start: &[f64], center: &[f64], tol: f64) -> Result<f64, FlowError> {
    let field = |x: &[f64], out: &mut [f64]| sys.drift_into(x, out);
    return_time_field(&field, start, center, tol)
}

/// [`return_time`] for an arbitrary planar field.
pub fn return_time_field(field: &Field<'_>, start: &[f64], center: &[f64], tol: f64) -> Result<f64, FlowError> {
    let e = [start[0] - center[0], start[1] - center[1]];
    let normal = [-e[1], e[0]];
    let mut b = [0.0; 2];
    field(start, &mut b);
    let orient = (b[0] * normal[0] + b[1] * normal[1]).signum();
    let c = center.to_vec();
    let event = move |x: &[f64]| {
        let rel = [x[0] - c[0], x[1] - c[1]];
        let along = rel[0] * e[0] + rel[1] * e[1];
        let across = orient * (rel[0] * normal[0] + rel[1] * normal[1]);
        // negative just before crossing the half-line through `start`
        if along > 0.0 { across } else { -1.0 }
    };
    let hit = integrate_until(field, start, 1e4, tol, 0.0, &event)?;
    Ok(hit.time)
}

/// Fixed point of the return map to `{x₂ = 0, x₁ > 0}` crossed with `x₂`
/// decreasing, by plain iteration from `guess`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    pub crossing: f64,
    pub period: f64,
    pub iterations: usize,
    pub samples: Trajectory,
}

pub fn return_map(sys: &System, x1: f64, tol: f64) -> Result<(f64, f64), FlowError> {
    let field = |x: &[f64], out: &mut [f64]| sys.drift_into(x, out);
    // x₂ decreasing through zero on the right half
    let event = |x: &[f64]| if x[0] > 0.0 { -x[1] } else { -1.0 };
    let hit = integrate_until(&field, &[x1, 0.0], 1e4, tol, 1e-6, &event)?;
    // starting on the section itself, skip the immediate crossing
    if hit.time < 1e-3 {
        let hit2 = integrate_until(&field, &hit.state, 1e4, tol, 1e-3, &event)?;
        return Ok((hit2.state[0], hit.time + hit2.time));
    }
    Ok((hit.state[0], hit.time))
}

pub fn poincare_fixed_point(sys: &System, guess: f64, tol: f64) -> Result<PeriodicOrbit, FlowError> {
    if sys.dim() != 2 {
        return Err(FlowError::InvalidArgument("return map needs a planar model".into()));
    }
    let mut x = guess;
    for it in 1..=200 {
        let (next, period) = return_map(sys, x, 1e-12)?;
        let delta = (next - x).abs();
        x = next;
        if delta < tol {
            let samples = integrate_field(
                &|s: &[f64], o: &mut [f64]| sys.drift_into(s, o),
                &[x, 0.0],
                period,
                IntegrateOptions { tol: 1e-11, sample_every: Some(period / 2000.0), max_step: 0.01 },
            )?;
            return Ok(PeriodicOrbit { crossing: x, period, iterations: it, samples });
        }
    }
    Err(FlowError::NotConverged(200))
}

/// Hopf boundary `h(r) = -r + sqrt(r² + 3r)` in the `(CR/L, ...)` plane of the diode.
pub fn hopf_curve(r: f64) -> Result<f64, FlowError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(FlowError::InvalidArgument(format!("hopf curve needs r > 0, got {r}")));
    }
    Ok(-r + (r * r + 3.0 * r).sqrt())
}

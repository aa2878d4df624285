//! Discrete rate functionals and their minimization.
//!
//! Full-rank models use the midpoint rule
//! `S = Σ_k ½ |(φ_{k+1}-φ_k)/Δt - b(φ_{k+½})|²_{(σσᵀ)⁻¹(φ_{k+½})} Δt`,
//! which couples neighbouring nodes and so has no odd/even null modes.
//! Second-order models (`ẋ₁ = x₂`, noise in `x₂` only) use a scalar path
//! `φ = x₁` with centered differences and trapezoid weights.

mod chart;
mod connect;
mod quasipotential;

pub use chart::{transform_invariance_check, rate_diode_constrained, DiodeVelocityChart, CONSTRAINT_TOL};
pub use connect::{connect_second_order, connect_with_field, ConnectCase, Connected, Piece, PieceKind, ThetaBump};
pub use quasipotential::{
    analytic_class_graph, analytic_quasipotential, class_anchor_points, class_quasipotential, quasipotential_estimate, QpConfig,
    QpEstimate,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{integrate_field, FlowError, IntegrateOptions};
use crate::models::{ModelError, StateVector, System};
use crate::optim::{self, DescentOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("diffusion matrix σσᵀ is singular at node {node} (condition {condition:e})")]
    SingularDiffusion { node: usize, condition: f64 },
    #[error("path needs at least {min} interior nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
    #[error("model `{0}` is not second order")]
    NotSecondOrder(String),
    #[error("path node {0} lies outside the model's domain")]
    OutsideDomain(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("path violates the circuit constraint by {0:e}")]
    ConstraintViolated(f64),
    #[error("objective undefined at the initial path")]
    UndefinedObjective,
}

/// Condition-number ceiling for `σσᵀ` along a path.
pub const MAX_CONDITION: f64 = 1e12;

/// Path on `[0, T]` sampled at `t_k = kT/(n+1)`, `k = 0..=n+1`; nodes 0 and
/// `n+1` are the fixed endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub duration: f64,
    pub nodes: Vec<StateVector>,
}

impl DiscretePath {
    pub fn new(duration: f64, nodes: Vec<StateVector>) -> Result<Self, ActionError> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(ActionError::InvalidArgument(format!("duration must be positive, got {duration}")));
        }
        if nodes.len() < 3 {
            return Err(ActionError::TooFewNodes { min: 1, got: nodes.len().saturating_sub(2) });
        }
        let d = nodes[0].dim();
        if nodes.iter().any(|p| p.dim() != d) {
            return Err(ActionError::InvalidArgument("nodes of differing dimension".into()));
        }
        Ok(Self { duration, nodes })
    }

    /// Straight line from `x` to `y` with `n` interior nodes.
    pub fn linear(x: &[f64], y: &[f64], duration: f64, n: usize) -> Result<Self, ActionError> {
        Self::from_fn(duration, n, |t| {
            let s = t / duration;
            x.iter().zip(y).map(|(a, b)| a + s * (b - a)).collect()
        })
    }

    pub fn from_fn(duration: f64, n: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self, ActionError> {
        let steps = n + 1;
        let nodes = (0..=steps).map(|k| StateVector::new(f(duration * k as f64 / steps as f64))).collect();
        Self::new(duration, nodes)
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dim()
    }
    pub fn interior(&self) -> usize {
        self.nodes.len() - 2
    }
    pub fn step(&self) -> f64 {
        self.duration / (self.nodes.len() - 1) as f64
    }
    pub fn times(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.nodes.len()).map(|k| k as f64 * h).collect()
    }
    pub fn start(&self) -> &StateVector {
        &self.nodes[0]
    }
    pub fn end(&self) -> &StateVector {
        self.nodes.last().expect("paths have at least three nodes")
    }

    /// Piecewise-linear value at time `t ∈ [0, T]`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let h = self.step();
        let last = self.nodes.len() - 1;
        let s = (t / h).clamp(0.0, last as f64);
        let k = (s.floor() as usize).min(last - 1);
        let w = s - k as f64;
        let (a, b) = (self.nodes[k].as_slice(), self.nodes[k + 1].as_slice());
        a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect()
    }

    /// Same curve at `n` interior nodes, by linear interpolation.
    pub fn resample(&self, n: usize) -> Result<Self, ActionError> {
        Self::from_fn(self.duration, n, |t| self.at(t))
    }

    /// Same node values stretched to a new duration.
    pub fn with_duration(&self, duration: f64) -> Result<Self, ActionError> {
        Self::new(duration, self.nodes.clone())
    }

    /// CSV with header `t,x1,..,xd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.dim() {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, x) in self.times().iter().zip(&self.nodes) {
            out.push_str(&format!("{t}"));
            for v in x.as_slice() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    fn flat(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(|p| p.0.iter().copied()).collect()
    }
}

/// Position-only path of a second-order model with fixed endpoint velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarPath {
    pub duration: f64,
    pub positions: Vec<f64>,
    pub start_velocity: f64,
    pub end_velocity: f64,
}

impl ScalarPath {
    pub fn new(duration: f64, positions: Vec<f64>, start_velocity: f64, end_velocity: f64) -> Result<Self, ActionError> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(ActionError::InvalidArgument(format!("duration must be positive, got {duration}")));
        }
        if positions.len() < 4 {
            return Err(ActionError::TooFewNodes { min: 2, got: positions.len().saturating_sub(2) });
        }
        Ok(Self { duration, positions, start_velocity, end_velocity })
    }

    /// Cubic Hermite interpolant of the endpoint states `(position, velocity)`.
    pub fn hermite(x: [f64; 2], y: [f64; 2], duration: f64, n: usize) -> Result<Self, ActionError> {
        let steps = n + 1;
        let positions = (0..=steps)
            .map(|k| {
                let s = k as f64 / steps as f64;
                let (h00, h10, h01, h11) =
                    (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s, -2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
                h00 * x[0] + h10 * duration * x[1] + h01 * y[0] + h11 * duration * y[1]
            })
            .collect();
        Self::new(duration, positions, x[1], y[1])
    }

    pub fn step(&self) -> f64 {
        self.duration / (self.positions.len() - 1) as f64
    }

    pub fn interior(&self) -> usize {
        self.positions.len() - 2
    }

    /// Node velocities: centered differences inside, the fixed values at the ends.
    pub fn velocities(&self) -> Vec<f64> {
        let p = &self.positions;
        let n = p.len();
        let h = self.step();
        (0..n)
            .map(|k| {
                if k == 0 {
                    self.start_velocity
                } else if k == n - 1 {
                    self.end_velocity
                } else {
                    (p[k + 1] - p[k - 1]) / (2.0 * h)
                }
            })
            .collect()
    }

    /// Planar states `(φ, φ̇)` at the nodes.
    pub fn to_states(&self) -> DiscretePath {
        let v = self.velocities();
        let nodes = self.positions.iter().zip(v).map(|(p, v)| StateVector::new([*p, v])).collect();
        DiscretePath { duration: self.duration, nodes }
    }

    /// Position component of a planar path, keeping its endpoint velocities.
    pub fn from_states(path: &DiscretePath) -> Result<Self, ActionError> {
        if path.dim() != 2 {
            return Err(ActionError::InvalidArgument("second-order paths are planar".into()));
        }
        Self::new(
            path.duration,
            path.nodes.iter().map(|p| p[0]).collect(),
            path.start()[1],
            path.end()[1],
        )
    }

    pub fn to_csv(&self) -> String {
        self.to_states().to_csv()
    }
}

/// Discrete action with per-node (or per-interval) squared control magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub value: f64,
    pub residuals: Vec<f64>,
}

/// Inverse of a symmetric `d×d` matrix (`d ≤ 3`) by the adjugate, with the
/// Frobenius condition estimate `‖D‖·‖D⁻¹‖`.
pub(crate) fn inverse_small(dm: &[f64], d: usize, out: &mut [f64]) -> f64 {
    let det = match d {
        1 => {
            out[0] = 1.0 / dm[0];
            dm[0]
        }
        2 => {
            let det = dm[0] * dm[3] - dm[1] * dm[2];
            out[0] = dm[3] / det;
            out[1] = -dm[1] / det;
            out[2] = -dm[2] / det;
            out[3] = dm[0] / det;
            det
        }
        3 => {
            let m = |i: usize, j: usize| dm[3 * i + j];
            let c = |i: usize, j: usize| {
                let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
                let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
                m(r0, c0) * m(r1, c1) - m(r0, c1) * m(r1, c0)
            };
            let det = m(0, 0) * c(0, 0) + m(0, 1) * c(0, 1) + m(0, 2) * c(0, 2);
            for i in 0..3 {
                for j in 0..3 {
                    out[3 * i + j] = c(j, i) / det;
                }
            }
            det
        }
        _ => unreachable!("state dimension is at most three"),
    };
    if det == 0.0 || !det.is_finite() {
        return f64::INFINITY;
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cond = norm(&dm[..d * d]) * norm(&out[..d * d]);
    if cond.is_finite() { cond } else { f64::INFINITY }
}

/// Midpoint-rule action over flattened nodes; optionally accumulates the
/// gradient with respect to every node and the per-interval `|h|²`.
fn full_action(
    sys: &System,
    flat: &[f64],
    dt: f64,
    mut grad: Option<&mut [f64]>,
    mut residuals: Option<&mut Vec<f64>>,
) -> Result<f64, ActionError> {
    let d = sys.dim();
    let m = sys.noise_dim();
    let nodes = flat.len() / d;
    for k in 0..nodes {
        if !sys.in_domain(&flat[k * d..(k + 1) * d]) {
            return Err(ActionError::OutsideDomain(k));
        }
    }
    let mut u = vec![0.0; d];
    let mut r = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    let mut sig = vec![0.0; d * m];
    let mut dsig = vec![0.0; d * m * d];
    let mut dmat = vec![0.0; d * d];
    let mut inv = vec![0.0; d * d];
    let mut q = vec![0.0; d];
    let mut sq = vec![0.0; m];
    let mut dl = vec![0.0; d];
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut total = 0.0;
    for k in 0..nodes - 1 {
        let (a, c) = (&flat[k * d..(k + 1) * d], &flat[(k + 1) * d..(k + 2) * d]);
        for i in 0..d {
            u[i] = 0.5 * (a[i] + c[i]);
        }
        sys.drift_into(&u, &mut b);
        for i in 0..d {
            r[i] = (c[i] - a[i]) / dt - b[i];
        }
        sys.diffusion_into(&u, &mut sig);
        for i in 0..d {
            for j in 0..d {
                dmat[i * d + j] = (0..m).map(|l| sig[i * m + l] * sig[j * m + l]).sum();
            }
        }
        let cond = inverse_small(&dmat, d, &mut inv);
        if !(cond < MAX_CONDITION) {
            return Err(ActionError::SingularDiffusion { node: k, condition: cond });
        }
        for i in 0..d {
            q[i] = (0..d).map(|j| inv[i * d + j] * r[j]).sum();
        }
        let lag = 0.5 * (0..d).map(|i| r[i] * q[i]).sum::<f64>();
        total += lag * dt;
        if let Some(res) = residuals.as_deref_mut() {
            res.push(2.0 * lag);
        }
        if let Some(g) = grad.as_deref_mut() {
            sys.drift_jacobian(&u, &mut jac);
            sys.diffusion_jacobian(&u, &mut dsig);
            for l in 0..m {
                sq[l] = (0..d).map(|i| sig[i * m + l] * q[i]).sum();
            }
            for j in 0..d {
                let drift_part: f64 = (0..d).map(|i| jac[i * d + j] * q[i]).sum();
                let mut noise_part = 0.0;
                for l in 0..m {
                    let col: f64 = (0..d).map(|i| dsig[(i * m + l) * d + j] * q[i]).sum();
                    noise_part += sq[l] * col;
                }
                dl[j] = -drift_part - noise_part;
            }
            for j in 0..d {
                g[k * d + j] += -q[j] + 0.5 * dt * dl[j];
                g[(k + 1) * d + j] += q[j] + 0.5 * dt * dl[j];
            }
        }
    }
    Ok(total)
}

/// Action of a path for a model with invertible `σσᵀ`.
pub fn rate_full(sys: &System, path: &DiscretePath) -> Result<ActionValue, ActionError> {
    if path.dim() != sys.dim() {
        return Err(ModelError::DimensionMismatch { expected: sys.dim(), got: path.dim() }.into());
    }
    let mut residuals = Vec::with_capacity(path.nodes.len() - 1);
    let value = full_action(sys, &path.flat(), path.step(), None, Some(&mut residuals))?;
    Ok(ActionValue { value, residuals })
}

/// Gradient of [`rate_full`] with respect to the interior nodes, flattened.
pub fn rate_full_gradient(sys: &System, path: &DiscretePath) -> Result<(f64, Vec<f64>), ActionError> {
    let flat = path.flat();
    let mut g = vec![0.0; flat.len()];
    let v = full_action(sys, &flat, path.step(), Some(&mut g), None)?;
    let d = sys.dim();
    Ok((v, g[d..g.len() - d].to_vec()))
}

/// Acceleration drift `g(p, v)` and noise `s(p, v)` of a second-order model,
/// each with partial derivatives `(value, ∂p, ∂v)`.
pub trait SecondOrderField {
    fn acceleration(&self, p: f64, v: f64) -> (f64, f64, f64);
    fn noise(&self, p: f64, v: f64) -> (f64, f64, f64);
}

/// A second-order [`System`] seen as a scalar equation `φ̈ = b₂(φ, φ̇) + s ḣ`.
pub struct SystemChart<'a>(&'a System);

impl<'a> SystemChart<'a> {
    pub fn new(sys: &'a System) -> Result<Self, ActionError> {
        if !sys.flags().second_order {
            return Err(ActionError::NotSecondOrder(sys.name().to_string()));
        }
        Ok(Self(sys))
    }
}

impl SecondOrderField for SystemChart<'_> {
    fn acceleration(&self, p: f64, v: f64) -> (f64, f64, f64) {
        let mut b = [0.0; 2];
        let mut j = [0.0; 4];
        self.0.drift_into(&[p, v], &mut b);
        self.0.drift_jacobian(&[p, v], &mut j);
        (b[1], j[2], j[3])
    }

    fn noise(&self, p: f64, v: f64) -> (f64, f64, f64) {
        let mut s = [0.0; 2];
        let mut ds = [0.0; 4];
        self.0.diffusion_into(&[p, v], &mut s);
        self.0.diffusion_jacobian(&[p, v], &mut ds);
        (s[1], ds[2], ds[3])
    }
}

/// Second-order action over all node positions, optionally with the gradient
/// with respect to every position.
fn second_order_action(
    field: &dyn SecondOrderField,
    p: &[f64],
    v0: f64,
    v_end: f64,
    dt: f64,
    mut grad: Option<&mut [f64]>,
    mut residuals: Option<&mut Vec<f64>>,
) -> f64 {
    let n = p.len();
    let last = n - 1;
    let dt2 = dt * dt;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut total = 0.0;
    for k in 0..n {
        let acc_c: [(usize, f64); 3];
        let mut vel_c = [(0usize, 0.0f64); 2];
        let (vel, acc, nv) = if k == 0 {
            acc_c = [(0, -3.5 / dt2), (1, 4.0 / dt2), (2, -0.5 / dt2)];
            (v0, (8.0 * p[1] - p[2] - 7.0 * p[0] - 6.0 * dt * v0) / (2.0 * dt2), 0)
        } else if k == last {
            acc_c = [(last, -3.5 / dt2), (last - 1, 4.0 / dt2), (last - 2, -0.5 / dt2)];
            (v_end, (8.0 * p[last - 1] - p[last - 2] - 7.0 * p[last] + 6.0 * dt * v_end) / (2.0 * dt2), 0)
        } else {
            acc_c = [(k - 1, 1.0 / dt2), (k, -2.0 / dt2), (k + 1, 1.0 / dt2)];
            vel_c = [(k - 1, -0.5 / dt), (k + 1, 0.5 / dt)];
            ((p[k + 1] - p[k - 1]) / (2.0 * dt), (p[k + 1] - 2.0 * p[k] + p[k - 1]) / dt2, 2)
        };
        let (g, gp, gv) = field.acceleration(p[k], vel);
        let (s, sp, sv) = field.noise(p[k], vel);
        let h = (acc - g) / s;
        let w = if k == 0 || k == last { 0.5 * dt } else { dt };
        total += 0.5 * w * h * h;
        if let Some(res) = residuals.as_deref_mut() {
            res.push(h * h);
        }
        if let Some(grad) = grad.as_deref_mut() {
            let wh = w * h / s;
            for &(i, c) in &acc_c {
                grad[i] += wh * c;
            }
            grad[k] += wh * (-gp - h * sp);
            for &(i, c) in &vel_c[..nv] {
                grad[i] += wh * (-gv - h * sv) * c;
            }
        }
    }
    total
}

/// Action of a scalar path for a second-order model.
pub fn rate_second_order(sys: &System, path: &ScalarPath) -> Result<ActionValue, ActionError> {
    rate_second_order_field(&SystemChart::new(sys)?, path)
}

/// [`rate_second_order`] for an arbitrary scalar field.
pub fn rate_second_order_field(field: &dyn SecondOrderField, path: &ScalarPath) -> Result<ActionValue, ActionError> {
    let mut residuals = Vec::with_capacity(path.positions.len());
    let value = second_order_action(
        field,
        &path.positions,
        path.start_velocity,
        path.end_velocity,
        path.step(),
        None,
        Some(&mut residuals),
    );
    if !value.is_finite() {
        return Err(ActionError::SingularDiffusion { node: 0, condition: f64::INFINITY });
    }
    Ok(ActionValue { value, residuals })
}

/// Gradient of [`rate_second_order`] with respect to the interior positions.
pub fn rate_second_order_gradient(sys: &System, path: &ScalarPath) -> Result<(f64, Vec<f64>), ActionError> {
    let chart = SystemChart::new(sys)?;
    let mut g = vec![0.0; path.positions.len()];
    let v = second_order_action(
        &chart,
        &path.positions,
        path.start_velocity,
        path.end_velocity,
        path.step(),
        Some(&mut g),
        None,
    );
    Ok((v, g[1..g.len() - 1].to_vec()))
}

/// Action of a sampled path in whichever form suits the model: the scalar
/// second-order form, the constrained circuit form, or the full form.
pub fn rate(sys: &System, path: &DiscretePath) -> Result<ActionValue, ActionError> {
    if sys.flags().second_order {
        rate_second_order(sys, &ScalarPath::from_states(path)?)
    } else if sys.diode_constants().is_some() {
        rate_diode_constrained(sys, path, CONSTRAINT_TOL)
    } else {
        rate_full(sys, path)
    }
}

/// Initial path for [`minimize_action`].
#[derive(Debug, Clone, PartialEq)]
pub enum PathInit {
    /// Straight line (cubic Hermite for second-order models).
    Linear,
    /// Extremal flow arriving at `y`, bent linearly onto `x` (decomposable models).
    Extremal,
    Given(DiscretePath),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOptions {
    pub descent: DescentOptions,
    pub init: PathInit,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { descent: DescentOptions::default(), init: PathInit::Linear }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizedPath {
    Full(DiscretePath),
    SecondOrder(ScalarPath),
}

impl OptimizedPath {
    /// Planar or full states at the nodes.
    pub fn states(&self) -> DiscretePath {
        match self {
            Self::Full(p) => p.clone(),
            Self::SecondOrder(p) => p.to_states(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub path: OptimizedPath,
    pub action: ActionValue,
    /// False when the iteration cap was hit; the path is still the best found.
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Local minimizer of the discrete action between fixed endpoints on `[0, T]`.
pub fn minimize_action(
    sys: &System,
    x: &StateVector,
    y: &StateVector,
    duration: f64,
    n: usize,
    opts: &MinimizeOptions,
) -> Result<Minimized, ActionError> {
    if n < 8 {
        return Err(ActionError::TooFewNodes { min: 8, got: n });
    }
    sys.check_state(x.as_slice())?;
    sys.check_state(y.as_slice())?;
    let init = match &opts.init {
        PathInit::Linear => DiscretePath::linear(x.as_slice(), y.as_slice(), duration, n)?,
        PathInit::Extremal => extremal_init(sys, x, y, duration, n)?,
        PathInit::Given(p) => {
            let p = if p.interior() == n { p.clone() } else { p.resample(n)? };
            let mut nodes = p.nodes;
            nodes[0] = x.clone();
            *nodes.last_mut().expect("nonempty") = y.clone();
            DiscretePath::new(duration, nodes)?
        }
    };
    if sys.flags().second_order {
        let sp = if matches!(opts.init, PathInit::Linear) {
            ScalarPath::hermite([x[0], x[1]], [y[0], y[1]], duration, n)?
        } else {
            ScalarPath::from_states(&init)?
        };
        let chart = SystemChart::new(sys)?;
        let (path, action, res) = minimize_scalar(&chart, sp, opts.descent)?;
        Ok(finish(OptimizedPath::SecondOrder(path), action, res))
    } else if sys.diode_constants().is_some() {
        // the circuit chart has a singular diffusion; optimize over voltages
        let chart = DiodeVelocityChart::new(sys)?;
        let (w0, w1) = (chart.velocity(x[0], x[1]), chart.velocity(y[0], y[1]));
        let sp = if matches!(opts.init, PathInit::Linear) {
            ScalarPath::hermite([x[0], w0], [y[0], w1], duration, n)?
        } else {
            ScalarPath::new(duration, init.nodes.iter().map(|p| p[0]).collect(), w0, w1)?
        };
        let (path, action, res) = minimize_scalar(&chart, sp, opts.descent)?;
        let mut nodes: Vec<StateVector> = path
            .to_states()
            .nodes
            .iter()
            .map(|p| StateVector::new([p[0], chart.current(p[0], p[1])]))
            .collect();
        nodes[0] = x.clone();
        *nodes.last_mut().expect("nonempty") = y.clone();
        Ok(finish(OptimizedPath::Full(DiscretePath::new(duration, nodes)?), action, res))
    } else {
        minimize_full(sys, init, opts.descent)
    }
}

fn finish(path: OptimizedPath, action: ActionValue, res: optim::DescentResult) -> Minimized {
    if !res.converged {
        log::warn!("action minimization stopped at the iteration cap ({} steps)", res.iterations);
    }
    Minimized { path, action, converged: res.converged, iterations: res.iterations, history: res.history }
}

fn minimize_full(sys: &System, init: DiscretePath, descent: DescentOptions) -> Result<Minimized, ActionError> {
    rate_full(sys, &init)?;
    let d = sys.dim();
    let dt = init.step();
    let mut flat = init.flat();
    let len = flat.len();
    let head: Vec<f64> = flat[..d].to_vec();
    let tail: Vec<f64> = flat[len - d..].to_vec();
    let mut full_grad = vec![0.0; len];
    let objective = |z: &[f64], g: &mut [f64]| {
        let mut all = Vec::with_capacity(len);
        all.extend_from_slice(&head);
        all.extend_from_slice(z);
        all.extend_from_slice(&tail);
        let v = full_action(sys, &all, dt, Some(&mut full_grad), None).ok()?;
        g.copy_from_slice(&full_grad[d..len - d]);
        v.is_finite().then_some(v)
    };
    let res = optim::minimize(&flat[d..len - d], objective, descent).ok_or(ActionError::UndefinedObjective)?;
    flat[d..len - d].copy_from_slice(&res.x);
    let nodes = flat.chunks(d).map(StateVector::new).collect();
    let path = DiscretePath::new(init.duration, nodes)?;
    let action = rate_full(sys, &path)?;
    Ok(finish(OptimizedPath::Full(path), action, res))
}

fn minimize_scalar(
    field: &dyn SecondOrderField,
    init: ScalarPath,
    descent: DescentOptions,
) -> Result<(ScalarPath, ActionValue, optim::DescentResult), ActionError> {
    let dt = init.step();
    let mut p = init.positions.clone();
    let last = p.len() - 1;
    let (p0, pn) = (p[0], p[last]);
    let mut full_grad = vec![0.0; p.len()];
    let mut all = p.clone();
    let objective = |z: &[f64], g: &mut [f64]| {
        all[0] = p0;
        all[1..last].copy_from_slice(z);
        all[last] = pn;
        let v = second_order_action(field, &all, init.start_velocity, init.end_velocity, dt, Some(&mut full_grad), None);
        g.copy_from_slice(&full_grad[1..last]);
        v.is_finite().then_some(v)
    };
    let res = optim::minimize(&p[1..last], objective, descent).ok_or(ActionError::UndefinedObjective)?;
    p[1..last].copy_from_slice(&res.x);
    let path = ScalarPath::new(init.duration, p, init.start_velocity, init.end_velocity)?;
    let action = rate_second_order_field(field, &path)?;
    Ok((path, action, res))
}

/// Extremal vector field `∇U + l` of a decomposable model.
fn extremal_field(sys: &System) -> impl Fn(&[f64], &mut [f64]) + '_ {
    move |x: &[f64], out: &mut [f64]| match sys.decomposition(x) {
        Ok(dec) => {
            out[0] = dec.potential_gradient[0] + dec.orthogonal[0];
            out[1] = dec.potential_gradient[1] + dec.orthogonal[1];
        }
        Err(_) => out.iter_mut().for_each(|v| *v = f64::NAN),
    }
}

/// Solution of `Ẋ = ∇U(X) + l(X)` from `x0` on `[0, T]`, sampled at `n` interior nodes.
pub fn extremal_path(sys: &System, x0: &StateVector, duration: f64, n: usize) -> Result<DiscretePath, ActionError> {
    extremal_path_span(sys, x0, 0.0, duration, n)
}

/// Extremal solution through `x0` on `[-t_back, t_forward]`, re-timed to start at zero.
pub fn extremal_path_span(
    sys: &System,
    x0: &StateVector,
    t_back: f64,
    t_forward: f64,
    n: usize,
) -> Result<DiscretePath, ActionError> {
    sys.decomposition(x0.as_slice())?;
    let field = extremal_field(sys);
    let total = t_back + t_forward;
    if !(total > 0.0) || t_back < 0.0 || t_forward < 0.0 {
        return Err(ActionError::InvalidArgument("extremal span must be nonnegative and nonempty".into()));
    }
    let h = total / (n + 1) as f64;
    let opts = IntegrateOptions { tol: 1e-11, sample_every: Some(h), max_step: h };
    let mut nodes: Vec<StateVector> = Vec::with_capacity(n + 2);
    // backward samples land on the same uniform grid when t_back is a multiple of h
    let back_steps = (t_back / h).round() as usize;
    if back_steps > 0 {
        let back = integrate_field(&field, x0.as_slice(), -(back_steps as f64) * h, opts)?;
        nodes.extend(back.states.iter().take(back_steps + 1).rev().cloned());
        nodes.pop();
    }
    let fwd_steps = n + 1 - back_steps;
    let fwd = integrate_field(&field, x0.as_slice(), fwd_steps as f64 * h, opts)?;
    nodes.extend(fwd.states.iter().take(fwd_steps + 1).cloned());
    if nodes.len() != n + 2 {
        return Err(ActionError::InvalidArgument(format!("extremal sampling produced {} nodes", nodes.len())));
    }
    DiscretePath::new(total, nodes)
}

/// Extremal solution arriving at `y` after time `T`, bent linearly to start at `x`.
fn extremal_init(sys: &System, x: &StateVector, y: &StateVector, duration: f64, n: usize) -> Result<DiscretePath, ActionError> {
    let path = extremal_path_span(sys, y, duration, 0.0, n)?;
    let miss: Vec<f64> = x.as_slice().iter().zip(path.start().as_slice()).map(|(a, b)| a - b).collect();
    let last = path.nodes.len() - 1;
    let nodes = path
        .nodes
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let w = 1.0 - k as f64 / last as f64;
            StateVector::new(p.as_slice().iter().zip(&miss).map(|(v, m)| v + w * m).collect::<Vec<_>>())
        })
        .collect();
    DiscretePath::new(duration, nodes)
}

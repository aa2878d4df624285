//! The tunnel-diode circuit in two charts.
//!
//! In `(v, i)` the noise enters only the current equation and the voltage
//! obeys the constraint `C v̇ = i - f(v)`, so admissible paths live on a
//! constraint manifold with action `½∫ (L i̇ - (E - v - R i))² / σ²`.
//! With `w = v̇`, `i = C w + f(v)` the model becomes the scalar equation
//! `v̈ = g(v, w) + s(v, w) ḣ` with
//! `g = -[(f' + CR/L) w + (R/L) f + (v - E)/L] / C` and `s = σ(v, Cw + f)/(LC)`.

use super::{rate_second_order_field, ActionError, ActionValue, DiscretePath, ScalarPath, SecondOrderField};
use crate::models::{diode_characteristic, DiodeConstants, ModelError, ScalarNoise, System};

/// Largest admissible midpoint residual of `C v̇ - (i - f(v))`.
pub const CONSTRAINT_TOL: f64 = 1e-2;

/// Scalar `(v, v̇)` form of the diode model.
pub struct DiodeVelocityChart<'a> {
    consts: DiodeConstants,
    noise: &'a ScalarNoise,
}

impl<'a> DiodeVelocityChart<'a> {
    pub fn new(sys: &'a System) -> Result<Self, ActionError> {
        match (sys.diode_constants(), sys.scalar_noise()) {
            (Some(consts), Some(noise)) => Ok(Self { consts, noise }),
            _ => Err(ActionError::NotSecondOrder(sys.name().to_string())),
        }
    }

    /// `w = (i - f(v)) / C`.
    pub fn velocity(&self, v: f64, i: f64) -> f64 {
        (i - diode_characteristic(v, self.consts.bias).0) / self.consts.capacitance
    }

    /// `i = C w + f(v)`.
    pub fn current(&self, v: f64, w: f64) -> f64 {
        self.consts.capacitance * w + diode_characteristic(v, self.consts.bias).0
    }
}

impl SecondOrderField for DiodeVelocityChart<'_> {
    fn acceleration(&self, v: f64, w: f64) -> (f64, f64, f64) {
        let DiodeConstants { inductance: l, capacitance: c, resistance: r, bias: e } = self.consts;
        let u = v - e;
        let (f, fp) = diode_characteristic(v, e);
        let fpp = 6.0 * u;
        let g = -((fp + c * r / l) * w + r / l * f + u / l) / c;
        let gv = -(fpp * w + r / l * fp + 1.0 / l) / c;
        let gw = -(fp + c * r / l) / c;
        (g, gv, gw)
    }

    fn noise(&self, v: f64, w: f64) -> (f64, f64, f64) {
        let DiodeConstants { inductance: l, capacitance: c, bias: e, .. } = self.consts;
        let (f, fp) = diode_characteristic(v, e);
        let x = [v, c * w + f];
        let mut grad = [0.0; 2];
        self.noise.gradient(&x, &mut grad);
        let scale = 1.0 / (l * c);
        (self.noise.value(&x) * scale, (grad[0] + grad[1] * fp) * scale, grad[1] * c * scale)
    }
}

/// Midpoint-rule action of a `(v, i)` path on the constraint manifold.
pub fn rate_diode_constrained(sys: &System, path: &DiscretePath, tol: f64) -> Result<ActionValue, ActionError> {
    let consts = sys
        .diode_constants()
        .ok_or_else(|| ActionError::InvalidArgument(format!("`{}` is not the diode model", sys.name())))?;
    let noise = sys.scalar_noise().expect("diode models carry scalar noise");
    if path.dim() != 2 {
        return Err(ModelError::DimensionMismatch { expected: 2, got: path.dim() }.into());
    }
    let DiodeConstants { inductance: l, capacitance: c, resistance: r, bias: e } = consts;
    let dt = path.step();
    let mut value = 0.0;
    let mut worst = 0.0f64;
    let mut residuals = Vec::with_capacity(path.nodes.len() - 1);
    for (k, pair) in path.nodes.windows(2).enumerate() {
        let (a, b) = (pair[0].as_slice(), pair[1].as_slice());
        let (v, i) = (0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]));
        let (f, _) = diode_characteristic(v, e);
        worst = worst.max((c * (b[0] - a[0]) / dt - (i - f)).abs());
        let s = noise.value(&[v, i]);
        if s == 0.0 || !s.is_finite() {
            return Err(ActionError::SingularDiffusion { node: k, condition: f64::INFINITY });
        }
        let h = (l * (b[1] - a[1]) / dt - (e - v - r * i)) / s;
        value += 0.5 * h * h * dt;
        residuals.push(h * h);
    }
    if worst > tol {
        return Err(ActionError::ConstraintViolated(worst));
    }
    Ok(ActionValue { value, residuals })
}

/// Actions of one admissible path in both charts: `(circuit, velocity chart)`.
pub fn transform_invariance_check(sys: &System, path: &DiscretePath, tol: f64) -> Result<(f64, f64), ActionError> {
    let circuit = rate_diode_constrained(sys, path, tol)?;
    let chart = DiodeVelocityChart::new(sys)?;
    let (first, last) = (path.start(), path.end());
    let scalar = ScalarPath::new(
        path.duration,
        path.nodes.iter().map(|p| p[0]).collect(),
        chart.velocity(first[0], first[1]),
        chart.velocity(last[0], last[1]),
    )?;
    let transformed = rate_second_order_field(&chart, &scalar)?;
    Ok((circuit.value, transformed.value))
}

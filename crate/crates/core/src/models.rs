//! Built-in drift/diffusion models.
//!
//! Every model exposes its drift `b`, diffusion `σ` (row-major `d×m`), and the
//! hand-coded Jacobians of both. Models with a first integral expose it through
//! [`System::hamiltonian`]; the two polynomial examples also expose the
//! splitting `b = -∇U + l` with `⟨∇U, l⟩ = 0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Named real parameters passed to [`build_system`].
pub type ParamMap = BTreeMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model `{model}` does not accept parameter `{key}`")]
    UnknownParameter { model: String, key: String },
    #[error("invalid parameter `{key}` = {value}: {reason}")]
    InvalidParameter {
        key: String,
        value: f64,
        reason: &'static str,
    },
    #[error("state has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state {0:?} lies outside the open positive orthant")]
    OutsideDomain(Vec<f64>),
    #[error("model `{0}` has no first integral")]
    NoHamiltonian(String),
    #[error("model `{0}` has no gradient/orthogonal splitting")]
    NotDecomposable(String),
}

/// A point of the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        Self(coords.into())
    }
    pub fn dim(&self) -> usize {
        self.0.len()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn distance(&self, other: &[f64]) -> f64 {
        euclidean_distance(&self.0, other)
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from `x` to the closed polygon through `points`.
pub fn distance_to_closed_polyline(points: &[StateVector], x: &[f64]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for k in 0..n {
        let a = points[k].as_slice();
        let b = points[(k + 1) % n].as_slice();
        let (mut ab2, mut ax_ab) = (0.0, 0.0);
        for i in 0..x.len() {
            ab2 += (b[i] - a[i]) * (b[i] - a[i]);
            ax_ab += (x[i] - a[i]) * (b[i] - a[i]);
        }
        let t = if ab2 > 0.0 { (ax_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
        let d2: f64 = (0..x.len()).map(|i| (x[i] - a[i] - t * (b[i] - a[i])).powi(2)).sum();
        best = best.min(d2);
    }
    best.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Full,
    PositiveOrthant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlags {
    /// `b₁(x) = x₂`, the noise enters the second coordinate only.
    pub second_order: bool,
    /// `b = -∇U + l` with `⟨∇U, l⟩ = 0` is available.
    pub decomposable: bool,
}

/// Scalar noise intensity for models whose diffusion is a single column.
#[derive(Clone)]
pub enum ScalarNoise {
    Constant(f64),
    /// `sqrt(s² + c·x₁²)`.
    SqrtQuadratic { s: f64, c: f64 },
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for ScalarNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(s) => write!(f, "Constant({s})"),
            Self::SqrtQuadratic { s, c } => write!(f, "SqrtQuadratic {{ s: {s}, c: {c} }}"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl ScalarNoise {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(s) => *s,
            Self::SqrtQuadratic { s, c } => (s * s + c * x[0] * x[0]).sqrt(),
            Self::Custom(f) => f(x),
        }
    }

    /// Gradient of the intensity; custom callbacks fall back to central differences.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant(_) => out.iter_mut().for_each(|g| *g = 0.0),
            Self::SqrtQuadratic { c, .. } => {
                out.iter_mut().for_each(|g| *g = 0.0);
                out[0] = c * x[0] / self.value(x);
            }
            Self::Custom(f) => {
                let mut y = x.to_vec();
                for j in 0..x.len() {
                    let h = 1e-6 * (1.0 + x[j].abs());
                    y[j] = x[j] + h;
                    let up = f(&y);
                    y[j] = x[j] - h;
                    let down = f(&y);
                    y[j] = x[j];
                    out[j] = (up - down) / (2.0 * h);
                }
            }
        }
    }
}

/// Dissipation profile `F` of the figure-eight family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FigureEightVariant {
    /// Repelling centers, cycles `H = 1/n` accumulating on the figure eight.
    F1,
    /// Attracting centers, same outer cycles as `F1`.
    F2,
    /// Repelling centers, annuli of cycles `H ∈ I_n`.
    F3,
    /// Attracting centers, annuli of cycles `H ∈ I_n`.
    F4,
}

impl FigureEightVariant {
    fn from_index(i: f64) -> Result<Self, ModelError> {
        match i {
            v if v == 1.0 => Ok(Self::F1),
            v if v == 2.0 => Ok(Self::F2),
            v if v == 3.0 => Ok(Self::F3),
            v if v == 4.0 => Ok(Self::F4),
            _ => Err(ModelError::InvalidParameter {
                key: "variant".into(),
                value: i,
                reason: "variant must be one of 1, 2, 3, 4",
            }),
        }
    }

    fn inner_sign(self) -> f64 {
        match self {
            Self::F1 | Self::F3 => -1.0,
            Self::F2 | Self::F4 => 1.0,
        }
    }

    fn has_isolated_cycles(self) -> bool {
        matches!(self, Self::F1 | Self::F2)
    }

    /// `(F(s), F'(s))`.
    pub fn profile(self, s: f64) -> (f64, f64) {
        if s < 0.0 {
            let sign = self.inner_sign();
            return (sign * (-s).powi(3), -3.0 * sign * s * s);
        }
        if s >= 2.0 {
            return (1.0, 0.0);
        }
        if s > 1.0 {
            let (v, d) = smooth_step(s - 1.0);
            return (v, d);
        }
        if self.has_isolated_cycles() {
            if s == 0.0 {
                return (0.0, 0.0);
            }
            let a = PI / s;
            let sn = a.sin();
            (
                s.powi(5) * sn * sn,
                5.0 * s.powi(4) * sn * sn - PI * s.powi(3) * (2.0 * a).sin(),
            )
        } else {
            annulus_gaps(s)
        }
    }

    /// Bands `I_n = [3/4·2^{1-n}, 2^{1-n}]` on which the `F3`/`F4` profile vanishes.
    pub fn flat_band(n: u32) -> (f64, f64) {
        let top = 2f64.powi(1 - n as i32);
        (0.75 * top, top)
    }
}

/// C^∞ step from 0 at `t ≤ 0` to 1 at `t ≥ 1`, with its derivative.
fn smooth_step(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let f = |u: f64| (-1.0 / u).exp();
    let (a, b) = (f(t), f(1.0 - t));
    let (da, db) = (a / (t * t), b / ((1.0 - t) * (1.0 - t)));
    let s = a + b;
    (a / s, (da * b + a * db) / (s * s))
}

/// Profile on `[0, 1]` for the annulus variants: zero on each `I_n`, a bump of
/// height `exp(1 - 2^n)` on the gap `(2^{-n}, 3/2·2^{-n})`.
fn annulus_gaps(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    // gap index n with 2^{-n} < s < 1.5·2^{-n}
    let n = (-s.log2()).ceil();
    if n < 1.0 {
        return (0.0, 0.0);
    }
    let lo = 2f64.powf(-n);
    let width = 0.5 * lo;
    let t = (s - lo) / width;
    if t <= 0.0 || t >= 1.0 {
        return (0.0, 0.0);
    }
    let height = (1.0 - 2f64.powf(n)).exp();
    let q = 2.0 * t - 1.0;
    let g = 1.0 - q * q;
    let psi = (1.0 - 1.0 / g).exp();
    let dpsi = psi * (-4.0 * q) / (g * g);
    (height * psi, height * dpsi / width)
}

#[derive(Debug, Clone)]
enum Kind {
    /// `F(x) = x⁴/4 + s·x³/3 - x²` with `s = ±1`.
    Polynomial { cubic_sign: f64 },
    VanDerPol { noise: ScalarNoise },
    Diode {
        inductance: f64,
        capacitance: f64,
        resistance: f64,
        bias: f64,
        noise: ScalarNoise,
    },
    MayLeonard { alpha: f64, beta: f64, sigma: [f64; 3] },
    FigureEight { variant: FigureEightVariant, sigma: f64 },
}

/// Recurrent class of the deterministic flow, used for neighborhood masses and
/// quasipotential matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassShape {
    Point { at: StateVector },
    /// Closed level curve `{H = level}`; `center` is any point enclosed by it.
    Level { level: f64, center: Option<StateVector> },
    /// Band of closed level curves `{lo ≤ H ≤ hi}`.
    Band { lo: f64, hi: f64 },
    /// Periodic orbit without a first integral, stored as samples.
    Orbit { samples: Vec<StateVector> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub label: String,
    pub shape: ClassShape,
}

/// A heteroclinic connection between two classes of a decomposable model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    /// Along the deterministic flow; costs nothing.
    Downhill,
    /// Along the time-reversed gradient part; costs `2(U(to) - U(from))`.
    Uphill,
}

/// Value, gradient and orthogonal part of a decomposable drift.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub potential: f64,
    pub potential_gradient: [f64; 2],
    pub orthogonal: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct System {
    name: String,
    dim: usize,
    noise_dim: usize,
    domain: Domain,
    flags: ModelFlags,
    params: ParamMap,
    kind: Kind,
}

pub const MODEL_NAMES: [&str; 6] = [
    "example41",
    "example42",
    "vdp",
    "diode",
    "mayleonard",
    "figure8",
];

fn take_param(
    params: &mut ParamMap,
    key: &str,
    default: f64,
) -> f64 {
    params.remove(key).unwrap_or(default)
}

fn positive(key: &str, value: f64) -> Result<f64, ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::InvalidParameter {
            key: key.into(),
            value,
            reason: "must be a positive finite number",
        })
    }
}

/// Builds one of the models in [`MODEL_NAMES`]. Missing parameters take their
/// defaults; unknown keys are rejected.
pub fn build_system(name: &str, params: &ParamMap) -> Result<System, ModelError> {
    let mut rest = params.clone();
    let mut used = ParamMap::new();
    let mut get = |key: &str, default: f64, rest: &mut ParamMap| {
        let v = take_param(rest, key, default);
        used.insert(key.to_string(), v);
        v
    };
    let (dim, noise_dim, domain, flags, kind) = match name {
        "example41" | "example42" => {
            let cubic_sign = if name == "example41" { 1.0 } else { -1.0 };
            (
                2,
                2,
                Domain::Full,
                ModelFlags { second_order: false, decomposable: true },
                Kind::Polynomial { cubic_sign },
            )
        }
        "vdp" => {
            let s = positive("sigma", get("sigma", 1.0, &mut rest))?;
            (
                2,
                1,
                Domain::Full,
                ModelFlags { second_order: true, decomposable: false },
                Kind::VanDerPol { noise: ScalarNoise::Constant(s) },
            )
        }
        "diode" => {
            let inductance = positive("L", get("L", 1.0, &mut rest))?;
            let capacitance = positive("C", get("C", 1.0, &mut rest))?;
            let resistance = positive("R", get("R", 2.0, &mut rest))?;
            let bias = positive("E", get("E", 0.5, &mut rest))?;
            let s = positive("sigma", get("sigma", 1.0, &mut rest))?;
            let c = get("sigma_quadratic", 0.0, &mut rest);
            if c < 0.0 || !c.is_finite() {
                return Err(ModelError::InvalidParameter {
                    key: "sigma_quadratic".into(),
                    value: c,
                    reason: "must be a nonnegative finite number",
                });
            }
            let noise = if c == 0.0 {
                ScalarNoise::Constant(s)
            } else {
                ScalarNoise::SqrtQuadratic { s, c }
            };
            (
                2,
                1,
                Domain::Full,
                ModelFlags { second_order: false, decomposable: false },
                Kind::Diode { inductance, capacitance, resistance, bias, noise },
            )
        }
        "mayleonard" => {
            let alpha = get("alpha", 0.5, &mut rest);
            let beta = get("beta", 0.5, &mut rest);
            let s = alpha + beta;
            if !(s > -1.0 && s < 2.0) {
                return Err(ModelError::InvalidParameter {
                    key: "alpha+beta".into(),
                    value: s,
                    reason: "alpha + beta must lie in (-1, 2)",
                });
            }
            let sigma = positive("sigma", get("sigma", 1.0, &mut rest))?;
            (
                3,
                3,
                Domain::PositiveOrthant,
                ModelFlags { second_order: false, decomposable: false },
                Kind::MayLeonard { alpha, beta, sigma: [sigma; 3] },
            )
        }
        "figure8" => {
            let variant = FigureEightVariant::from_index(get("variant", 1.0, &mut rest))?;
            let sigma = positive("sigma", get("sigma", 1.0, &mut rest))?;
            (
                2,
                2,
                Domain::Full,
                ModelFlags { second_order: false, decomposable: false },
                Kind::FigureEight { variant, sigma },
            )
        }
        other => return Err(ModelError::UnknownModel(other.to_string())),
    };
    if let Some(key) = rest.keys().next() {
        return Err(ModelError::UnknownParameter {
            model: name.to_string(),
            key: key.clone(),
        });
    }
    Ok(System {
        name: name.to_string(),
        dim,
        noise_dim,
        domain,
        flags,
        params: used,
        kind,
    })
}

impl System {
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    pub fn domain(&self) -> Domain {
        self.domain
    }
    pub fn flags(&self) -> ModelFlags {
        self.flags
    }
    /// Parameters after defaults were filled in.
    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    /// Replaces the scalar noise intensity of `vdp` or `diode`.
    pub fn with_scalar_noise(
        mut self,
        noise: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    ) -> Result<Self, ModelError> {
        match &mut self.kind {
            Kind::VanDerPol { noise: n } | Kind::Diode { noise: n, .. } => {
                *n = ScalarNoise::Custom(noise);
                Ok(self)
            }
            _ => Err(ModelError::UnknownParameter {
                model: self.name.clone(),
                key: "scalar noise".into(),
            }),
        }
    }

    /// Figure-eight dissipation profile, if this is a figure-eight model.
    pub fn figure_eight_variant(&self) -> Option<FigureEightVariant> {
        match self.kind {
            Kind::FigureEight { variant, .. } => Some(variant),
            _ => None,
        }
    }

    /// Circuit constants `(L, C, R, E)` of the diode model.
    pub fn diode_constants(&self) -> Option<DiodeConstants> {
        match self.kind {
            Kind::Diode { inductance, capacitance, resistance, bias, .. } => Some(DiodeConstants {
                inductance,
                capacitance,
                resistance,
                bias,
            }),
            _ => None,
        }
    }

    /// Scalar noise intensity of single-column models.
    pub fn scalar_noise(&self) -> Option<&ScalarNoise> {
        match &self.kind {
            Kind::VanDerPol { noise } | Kind::Diode { noise, .. } => Some(noise),
            _ => None,
        }
    }

    /// Interaction coefficients `(α, β)` of the May–Leonard model.
    pub fn competition(&self) -> Option<(f64, f64)> {
        match self.kind {
            Kind::MayLeonard { alpha, beta, .. } => Some((alpha, beta)),
            _ => None,
        }
    }

    pub fn check_state(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if self.domain == Domain::PositiveOrthant && x.iter().any(|&v| !(v > 0.0)) {
            return Err(ModelError::OutsideDomain(x.to_vec()));
        }
        Ok(())
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.domain == Domain::Full || x.iter().all(|&v| v > 0.0)
    }

    pub fn eval_drift(&self, x: &StateVector) -> Result<StateVector, ModelError> {
        self.check_state(x.as_slice())?;
        let mut out = vec![0.0; self.dim];
        self.drift_into(x.as_slice(), &mut out);
        Ok(StateVector(out))
    }

    /// Row-major `d×m` diffusion matrix.
    pub fn eval_diffusion(&self, x: &StateVector) -> Result<Vec<f64>, ModelError> {
        self.check_state(x.as_slice())?;
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.diffusion_into(x.as_slice(), &mut out);
        Ok(out)
    }

    /// Unchecked drift evaluation for inner loops.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Polynomial { cubic_sign } => {
                let (f, fp, _) = quartic(x[0], *cubic_sign);
                let h1 = 0.5 * x[1] * x[1] + f + 1.0;
                out[0] = x[1] - fp * h1;
                out[1] = -fp - x[1] * h1;
            }
            Kind::VanDerPol { .. } => {
                out[0] = x[1];
                out[1] = -((x[0] * x[0] - 1.0) * x[1] + x[0]);
            }
            Kind::Diode { inductance, capacitance, resistance, bias, .. } => {
                let (f, _) = diode_characteristic(x[0], *bias);
                out[0] = (x[1] - f) / capacitance;
                out[1] = (bias - resistance * x[1] - x[0]) / inductance;
            }
            Kind::MayLeonard { alpha, beta, .. } => {
                for i in 0..3 {
                    let growth = 1.0 - x[i] - alpha * x[(i + 1) % 3] - beta * x[(i + 2) % 3];
                    out[i] = x[i] * growth;
                }
            }
            Kind::FigureEight { variant, .. } => {
                let (h, hx, hy) = figure_eight_h(x);
                let (f, _) = variant.profile(h);
                out[0] = hy - f * hx;
                out[1] = -hx - f * hy;
            }
        }
    }

    /// Row-major `d×d` Jacobian of the drift.
    pub fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Polynomial { cubic_sign } => {
                let (f, fp, fpp) = quartic(x[0], *cubic_sign);
                let y = x[1];
                let h1 = 0.5 * y * y + f + 1.0;
                out[0] = -fpp * h1 - fp * fp;
                out[1] = 1.0 - fp * y;
                out[2] = -fpp - y * fp;
                out[3] = -h1 - y * y;
            }
            Kind::VanDerPol { .. } => {
                out[0] = 0.0;
                out[1] = 1.0;
                out[2] = -(2.0 * x[0] * x[1] + 1.0);
                out[3] = -(x[0] * x[0] - 1.0);
            }
            Kind::Diode { inductance, capacitance, resistance, bias, .. } => {
                let (_, fp) = diode_characteristic(x[0], *bias);
                out[0] = -fp / capacitance;
                out[1] = 1.0 / capacitance;
                out[2] = -1.0 / inductance;
                out[3] = -resistance / inductance;
            }
            Kind::MayLeonard { alpha, beta, .. } => {
                for i in 0..3 {
                    let mut row = [0.0; 3];
                    row[i] = 1.0;
                    row[(i + 1) % 3] = *alpha;
                    row[(i + 2) % 3] = *beta;
                    let growth = 1.0 - (0..3).map(|j| row[j] * x[j]).sum::<f64>();
                    for j in 0..3 {
                        out[3 * i + j] = -x[i] * row[j] + if i == j { growth } else { 0.0 };
                    }
                }
            }
            Kind::FigureEight { variant, .. } => {
                let (h, hx, hy) = figure_eight_h(x);
                let (f, fp) = variant.profile(h);
                let hxx = 3.0 * x[0] * x[0] - 1.0;
                out[0] = -fp * hx * hx - f * hxx;
                out[1] = 1.0 - fp * hy * hx;
                out[2] = -hxx - fp * hx * hy;
                out[3] = -fp * hy * hy - f;
            }
        }
    }

    /// Unchecked row-major `d×m` diffusion evaluation.
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            Kind::Polynomial { .. } => {
                out[0] = 1.0;
                out[3] = 1.0;
            }
            Kind::VanDerPol { noise } => out[1] = noise.value(x),
            Kind::Diode { inductance, noise, .. } => out[1] = noise.value(x) / inductance,
            Kind::MayLeonard { sigma, .. } => {
                for i in 0..3 {
                    out[4 * i] = sigma[i] * x[i];
                }
            }
            Kind::FigureEight { sigma, .. } => {
                out[0] = *sigma;
                out[3] = *sigma;
            }
        }
    }

    /// Derivatives of the diffusion: entry `(i·m + k)·d + j` is `∂σ_{ik}/∂x_j`.
    pub fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let d = self.dim;
        match &self.kind {
            Kind::Polynomial { .. } | Kind::FigureEight { .. } => {}
            Kind::VanDerPol { noise } => noise.gradient(x, &mut out[d..2 * d]),
            Kind::Diode { inductance, noise, .. } => {
                noise.gradient(x, &mut out[d..2 * d]);
                out[d..2 * d].iter_mut().for_each(|g| *g /= inductance);
            }
            Kind::MayLeonard { sigma, .. } => {
                for i in 0..3 {
                    out[(i * 3 + i) * 3 + i] = sigma[i];
                }
            }
        }
    }

    /// First integral `H` (or the closely related energy) of the model.
    pub fn hamiltonian(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.hamiltonian_parts(x).map(|(h, _, _)| h)
    }

    pub fn hamiltonian_gradient(&self, x: &[f64]) -> Result<[f64; 2], ModelError> {
        self.hamiltonian_parts(x).map(|(_, g, _)| g)
    }

    /// Row-major 2×2 Hessian of `H`.
    pub fn hamiltonian_hessian(&self, x: &[f64]) -> Result<[f64; 4], ModelError> {
        self.hamiltonian_parts(x).map(|(_, _, h)| h)
    }

    pub fn has_hamiltonian(&self) -> bool {
        matches!(self.kind, Kind::Polynomial { .. } | Kind::FigureEight { .. })
    }

    fn hamiltonian_parts(&self, x: &[f64]) -> Result<(f64, [f64; 2], [f64; 4]), ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        match &self.kind {
            Kind::Polynomial { cubic_sign } => {
                let (f, fp, fpp) = quartic(x[0], *cubic_sign);
                Ok((0.5 * x[1] * x[1] + f, [fp, x[1]], [fpp, 0.0, 0.0, 1.0]))
            }
            Kind::FigureEight { .. } => {
                let (h, hx, hy) = figure_eight_h(x);
                Ok((h, [hx, hy], [3.0 * x[0] * x[0] - 1.0, 0.0, 0.0, 1.0]))
            }
            _ => Err(ModelError::NoHamiltonian(self.name.clone())),
        }
    }

    /// Splitting `b = -∇U + l` with `U = H²/2 + H` and `l = (x₂, -F'(x₁))`.
    pub fn decomposition(&self, x: &[f64]) -> Result<Decomposition, ModelError> {
        match &self.kind {
            Kind::Polynomial { cubic_sign } => {
                if x.len() != 2 {
                    return Err(ModelError::DimensionMismatch { expected: 2, got: x.len() });
                }
                let (f, fp, _) = quartic(x[0], *cubic_sign);
                let h = 0.5 * x[1] * x[1] + f;
                Ok(Decomposition {
                    potential: potential_of_level(h),
                    potential_gradient: [(h + 1.0) * fp, (h + 1.0) * x[1]],
                    orthogonal: [x[1], -fp],
                })
            }
            _ => Err(ModelError::NotDecomposable(self.name.clone())),
        }
    }

    /// Potential `U` of a decomposable model.
    pub fn potential(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.decomposition(x).map(|d| d.potential)
    }

    /// Recurrent classes of the deterministic flow with their labels.
    pub fn classes(&self) -> Vec<EquivalenceClass> {
        let point = |label: &str, at: &[f64]| EquivalenceClass {
            label: label.into(),
            shape: ClassShape::Point { at: StateVector::new(at) },
        };
        let level = |label: &str, level: f64, center: Option<&[f64]>| EquivalenceClass {
            label: label.into(),
            shape: ClassShape::Level { level, center: center.map(StateVector::new) },
        };
        match &self.kind {
            Kind::Polynomial { cubic_sign } if *cubic_sign > 0.0 => vec![
                point("K1", &[-2.0, 0.0]),
                level("K2", -1.0, Some(&[-2.0, 0.0])),
                point("K3", &[1.0, 0.0]),
                point("K4", &[0.0, 0.0]),
            ],
            Kind::Polynomial { .. } => vec![
                point("K1", &[-1.0, 0.0]),
                level("K2", -1.0, Some(&[2.0, 0.0])),
                point("K3", &[0.0, 0.0]),
                point("K4", &[2.0, 0.0]),
            ],
            Kind::VanDerPol { .. } => vec![point("O", &[0.0, 0.0])],
            Kind::Diode { resistance, bias, .. } => {
                let mut out = vec![point("S", &[*bias, 0.0])];
                if *resistance > 1.0 {
                    let u = (1.0 - 1.0 / resistance).sqrt();
                    out.push(point("A", &[bias + u, -u / resistance]));
                    out.push(point("B", &[bias - u, u / resistance]));
                }
                out
            }
            Kind::MayLeonard { alpha, beta, .. } => {
                let e = 1.0 / (1.0 + alpha + beta);
                vec![point("E", &[e, e, e])]
            }
            Kind::FigureEight { variant, .. } => {
                let mut out = vec![
                    point("O", &[0.0, 0.0]),
                    point("P+", &[1.0, 0.0]),
                    point("P-", &[-1.0, 0.0]),
                    level("H0", 0.0, None),
                ];
                for n in 1..=3u32 {
                    if variant.has_isolated_cycles() {
                        out.push(level(&format!("H1/{n}"), 1.0 / n as f64, Some(&[0.0, 0.0])));
                    } else {
                        let (lo, hi) = FigureEightVariant::flat_band(n);
                        out.push(EquivalenceClass {
                            label: format!("I{n}"),
                            shape: ClassShape::Band { lo, hi },
                        });
                    }
                }
                out
            }
        }
    }

    /// Direct heteroclinic connections between the classes of a decomposable model,
    /// as `(from, to, kind)` indices into [`System::classes`].
    pub fn connections(&self) -> Result<Vec<(usize, usize, Connection)>, ModelError> {
        use Connection::{Downhill, Uphill};
        match &self.kind {
            Kind::Polynomial { cubic_sign } if *cubic_sign > 0.0 => Ok(vec![
                (0, 1, Downhill),
                (3, 1, Downhill),
                (3, 2, Downhill),
                (1, 0, Uphill),
                (1, 3, Uphill),
                (2, 3, Uphill),
            ]),
            Kind::Polynomial { .. } => Ok(vec![
                (2, 0, Downhill),
                (2, 1, Downhill),
                (3, 1, Downhill),
                (0, 2, Uphill),
                (1, 2, Uphill),
                (1, 3, Uphill),
            ]),
            _ => Err(ModelError::NotDecomposable(self.name.clone())),
        }
    }

    /// Value of `U` on a class of a decomposable model.
    pub fn class_potential(&self, class: &EquivalenceClass) -> Result<f64, ModelError> {
        match &class.shape {
            ClassShape::Point { at } => self.potential(at.as_slice()),
            ClassShape::Level { level, .. } => {
                self.decomposition(&[0.0; 2])?;
                Ok(potential_of_level(*level))
            }
            _ => Err(ModelError::NotDecomposable(self.name.clone())),
        }
    }

    /// A reasonable default initial state for simulations.
    pub fn default_initial_state(&self) -> StateVector {
        match &self.kind {
            Kind::Polynomial { cubic_sign } => {
                // point of {H = -1} on the positive x₂ axis side of the enclosed node
                let x1 = if *cubic_sign > 0.0 { -2.0 } else { 2.0 };
                let f = quartic(x1, *cubic_sign).0;
                StateVector::new([x1, (2.0 * (-1.0 - f)).sqrt()])
            }
            Kind::VanDerPol { .. } => StateVector::new([2.0, 0.0]),
            Kind::Diode { bias, .. } => StateVector::new([*bias + 0.1, 0.0]),
            Kind::MayLeonard { .. } => StateVector::new([0.3, 0.4, 0.5]),
            Kind::FigureEight { .. } => StateVector::new([0.0, 0.5]),
        }
    }
}

/// `U = H²/2 + H` on the level `{H = h}`.
pub fn potential_of_level(h: f64) -> f64 {
    0.5 * h * h + h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiodeConstants {
    pub inductance: f64,
    pub capacitance: f64,
    pub resistance: f64,
    pub bias: f64,
}

/// `(F, F', F'')` for `F(x) = x⁴/4 + s·x³/3 - x²`.
fn quartic(x: f64, s: f64) -> (f64, f64, f64) {
    let x2 = x * x;
    (
        0.25 * x2 * x2 + s * x2 * x / 3.0 - x2,
        x2 * x + s * x2 - 2.0 * x,
        3.0 * x2 + 2.0 * s * x - 2.0,
    )
}

/// `(f, f')` for the tunnel-diode characteristic `f(v) = (v-E)³ - (v-E)`.
pub fn diode_characteristic(v: f64, bias: f64) -> (f64, f64) {
    let u = v - bias;
    (u * u * u - u, 3.0 * u * u - 1.0)
}

fn figure_eight_h(x: &[f64]) -> (f64, f64, f64) {
    let x1 = x[0];
    let x2 = x1 * x1;
    (0.5 * x[1] * x[1] + 0.25 * x2 * x2 - 0.5 * x2, x2 * x1 - x1, x[1])
}

//! Explicit finite-action connections for second-order models.
//!
//! The acceleration profile is assembled from constant ramps (`±1` or `0`),
//! an optional reference path, and zero-mean triangular bumps [`ThetaBump`]
//! that shift the position without changing the final velocity. Integrating
//! twice in closed form hits the requested endpoints to rounding error.

use serde::{Deserialize, Serialize};

use super::{ActionError, ScalarPath, SecondOrderField, SystemChart};
use crate::models::System;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Triangular acceleration bump of half-width `j` on `[0, (2+√2) j]`:
/// `sign·t` up to `j`, then `sign·(2j - t)`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBump {
    pub j: f64,
    /// `+1` or `-1`.
    pub sign: f64,
}

impl ThetaBump {
    pub fn new(j: f64, sign: f64) -> Result<Self, ActionError> {
        if !(j > 0.0) || !j.is_finite() {
            return Err(ActionError::InvalidArgument(format!("bump width must be positive, got {j}")));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(ActionError::InvalidArgument(format!("bump sign must be ±1, got {sign}")));
        }
        Ok(Self { j, sign })
    }

    /// Bump whose double integral equals `displacement`; `None` for zero.
    pub fn for_displacement(displacement: f64) -> Option<Self> {
        (displacement != 0.0 && displacement.is_finite()).then(|| Self {
            j: (3.0 * displacement.abs() / (3.0 + 2.0 * SQRT2)).cbrt(),
            sign: displacement.signum(),
        })
    }

    pub fn length(&self) -> f64 {
        (2.0 + SQRT2) * self.j
    }

    /// Total double integral `sign·(3+2√2) j³/3`.
    pub fn displacement(&self) -> f64 {
        self.sign * (3.0 + 2.0 * SQRT2) * self.j.powi(3) / 3.0
    }

    pub fn value(&self, t: f64) -> f64 {
        let j = self.j;
        if t < 0.0 || t > self.length() {
            0.0
        } else if t <= j {
            self.sign * t
        } else {
            self.sign * (2.0 * j - t)
        }
    }

    /// `∫₀ᵗ θ`, which vanishes again after the bump.
    pub fn integral(&self, t: f64) -> f64 {
        let j = self.j;
        if t <= 0.0 || t >= self.length() {
            0.0
        } else if t <= j {
            self.sign * 0.5 * t * t
        } else {
            self.sign * (j * j - 0.5 * (2.0 * j - t).powi(2))
        }
    }

    /// `∫₀ᵗ ∫₀ˢ θ`, constant after the bump.
    pub fn double_integral(&self, t: f64) -> f64 {
        let j = self.j;
        if t <= 0.0 {
            0.0
        } else if t <= j {
            self.sign * t.powi(3) / 6.0
        } else if t < self.length() {
            self.sign * (j.powi(3) / 6.0 + j * j * (t - j) + ((2.0 * j - t).powi(3) - j.powi(3)) / 6.0)
        } else {
            self.displacement()
        }
    }

    pub fn breakpoints(&self) -> [f64; 3] {
        [0.0, self.j, self.length()]
    }
}

/// Cubic Hermite interpolant of a scalar path's positions and node velocities.
#[derive(Debug, Clone, PartialEq)]
struct Spline {
    step: f64,
    pos: Vec<f64>,
    vel: Vec<f64>,
}

impl Spline {
    fn new(path: &ScalarPath) -> Self {
        Self { step: path.step(), pos: path.positions.clone(), vel: path.velocities() }
    }

    fn duration(&self) -> f64 {
        self.step * (self.pos.len() - 1) as f64
    }

    /// `(position, velocity, acceleration)` at `t`.
    fn eval(&self, t: f64) -> [f64; 3] {
        let h = self.step;
        let last = self.pos.len() - 1;
        let k = ((t / h).floor().max(0.0) as usize).min(last - 1);
        let s = t / h - k as f64;
        let (p0, p1, m0, m1) = (self.pos[k], self.pos[k + 1], h * self.vel[k], h * self.vel[k + 1]);
        let (s2, s3) = (s * s, s * s * s);
        let p = (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (3.0 * s2 - 2.0 * s3) * p1 + (s3 - s2) * m1;
        let v = ((6.0 * s2 - 6.0 * s) * (p0 - p1) + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (3.0 * s2 - 2.0 * s) * m1) / h;
        let a = ((12.0 * s - 6.0) * (p0 - p1) + (6.0 * s - 4.0) * m0 + (6.0 * s - 2.0) * m1) / (h * h);
        [p, v, a]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PieceKind {
    /// Constant acceleration; zero for a coast.
    Ramp { accel: f64 },
    /// The reference path, shifted in position.
    Base,
    Bump(ThetaBump),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub kind: PieceKind,
    pub start: f64,
    pub duration: f64,
    /// `(position, velocity)` at the piece start, before any overlaid bump.
    pub start_state: [f64; 2],
}

/// Which branch of the construction produced a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConnectCase {
    /// Identical endpoints, zero-length path.
    Trivial,
    /// Positive final reference velocity, closed by a coast.
    PositiveCoast,
    /// Positive final reference velocity, closed by a bump overlaid on the base.
    PositiveBump,
    NegativeCoast,
    NegativeBump,
    /// Zero final reference velocity, closed by a bump after the base.
    Resting,
    /// Brake to rest after the base, then as [`ConnectCase::Resting`].
    Braking,
}

/// A constructed connection and its action.
#[derive(Debug, Clone, PartialEq)]
pub struct Connected {
    pub pieces: Vec<Piece>,
    /// Bump added on top of the pieces, with its start time.
    pub overlay: Option<(f64, ThetaBump)>,
    pub duration: f64,
    pub case: ConnectCase,
    pub action: f64,
    base: Option<Spline>,
    start: [f64; 2],
}

impl Connected {
    fn local(&self, piece: &Piece, t: f64) -> [f64; 3] {
        let [p, v] = piece.start_state;
        match piece.kind {
            PieceKind::Ramp { accel } => [p + v * t + 0.5 * accel * t * t, v + accel * t, accel],
            PieceKind::Base => {
                let spline = self.base.as_ref().expect("base pieces carry a spline");
                let [q, w, a] = spline.eval(t);
                [p + q - spline.pos[0], w, a]
            }
            PieceKind::Bump(b) => [p + v * t + b.double_integral(t), v + b.integral(t), b.value(t)],
        }
    }

    /// `(position, velocity, acceleration)` at `t ∈ [0, duration]`.
    pub fn state(&self, t: f64) -> [f64; 3] {
        let idx = self.pieces.iter().rposition(|p| p.start <= t).unwrap_or(0);
        let mut out = match self.pieces.get(idx) {
            Some(piece) => self.local(piece, (t - piece.start).min(piece.duration)),
            None => [self.start[0], self.start[1], 0.0],
        };
        if let Some((s, b)) = &self.overlay {
            out[0] += b.double_integral(t - s);
            out[1] += b.integral(t - s);
            out[2] += b.value(t - s);
        }
        out
    }

    /// `(position, velocity)` at the final time.
    pub fn end_state(&self) -> [f64; 2] {
        let [p, v, _] = self.state(self.duration);
        [p, v]
    }

    /// The connection sampled as a scalar path with `n` interior nodes.
    pub fn sample(&self, n: usize) -> Result<ScalarPath, ActionError> {
        let steps = n + 1;
        let positions = (0..=steps).map(|k| self.state(self.duration * k as f64 / steps as f64)[0]).collect();
        ScalarPath::new(self.duration, positions, self.start[1], self.end_state()[1])
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0, self.duration];
        for piece in &self.pieces {
            out.push(piece.start);
            match piece.kind {
                PieceKind::Base => {
                    let spline = self.base.as_ref().expect("base pieces carry a spline");
                    out.extend((0..spline.pos.len()).map(|k| piece.start + k as f64 * spline.step));
                }
                PieceKind::Bump(b) => out.extend(b.breakpoints().iter().map(|t| piece.start + t)),
                PieceKind::Ramp { .. } => {}
            }
        }
        if let Some((s, b)) = &self.overlay {
            out.extend(b.breakpoints().iter().map(|t| s + t));
        }
        out.retain(|t| (0.0..=self.duration).contains(t));
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        out
    }
}

/// 8-point Gauss–Legendre nodes and weights on `[-1, 1]`.
const GAUSS: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// Longest quadrature panel.
const PANEL: f64 = 0.05;

fn action_of(field: &dyn SecondOrderField, path: &Connected) -> Result<f64, ActionError> {
    let knots = path.breakpoints();
    let mut total = 0.0;
    for (node, w) in knots.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let panels = ((b - a) / PANEL).ceil().max(1.0) as usize;
        let len = (b - a) / panels as f64;
        for k in 0..panels {
            let mid = a + (k as f64 + 0.5) * len;
            for &(x, wt) in &GAUSS {
                let [p, v, acc] = path.state(mid + 0.5 * len * x);
                let (g, _, _) = field.acceleration(p, v);
                let (s, _, _) = field.noise(p, v);
                if s == 0.0 || !s.is_finite() {
                    return Err(ActionError::SingularDiffusion { node, condition: f64::INFINITY });
                }
                let h = (acc - g) / s;
                total += 0.25 * len * wt * h * h;
            }
        }
    }
    Ok(total)
}

struct Builder {
    pieces: Vec<Piece>,
    clock: f64,
    state: [f64; 2],
}

impl Builder {
    fn push(&mut self, kind: PieceKind, duration: f64, base: Option<&Spline>) {
        if duration <= 0.0 {
            return;
        }
        let piece = Piece { kind, start: self.clock, duration, start_state: self.state };
        let [p, v] = self.state;
        self.state = match kind {
            PieceKind::Ramp { accel } => [p + v * duration + 0.5 * accel * duration * duration, v + accel * duration],
            PieceKind::Base => {
                let spline = base.expect("base pieces carry a spline");
                let [q, w, _] = spline.eval(duration);
                [p + q - spline.pos[0], w]
            }
            PieceKind::Bump(b) => [p + v * duration + b.displacement(), v],
        };
        self.clock += duration;
        self.pieces.push(piece);
    }

    /// Ramp the velocity to `target` at unit acceleration.
    fn ramp_to(&mut self, target: f64) {
        let gap = target - self.state[1];
        self.push(PieceKind::Ramp { accel: gap.signum() }, gap.abs(), None);
        self.state[1] = target;
    }
}

/// Connects `x` to `y` (each `(position, velocity)`) with explicit finite
/// action. With `base`, the reference path's endpoints must lie within unit
/// distance of `x` and `y`; without one, a zero-length reference at rest at
/// `x₁` is used.
pub fn connect_second_order(
    sys: &System,
    x: [f64; 2],
    y: [f64; 2],
    base: Option<&ScalarPath>,
) -> Result<Connected, ActionError> {
    connect_with_field(&SystemChart::new(sys)?, x, y, base)
}

/// [`connect_second_order`] for an arbitrary scalar field.
pub fn connect_with_field(
    field: &dyn SecondOrderField,
    x: [f64; 2],
    y: [f64; 2],
    base: Option<&ScalarPath>,
) -> Result<Connected, ActionError> {
    if x.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(ActionError::InvalidArgument("endpoints must be finite".into()));
    }
    if base.is_none() && x == y {
        return Ok(Connected {
            pieces: Vec::new(),
            overlay: None,
            duration: 0.0,
            case: ConnectCase::Trivial,
            action: 0.0,
            base: None,
            start: x,
        });
    }
    let spline = base.map(Spline::new);
    let (ref_start, ref_end) = match base {
        Some(b) => {
            let (xs, ys) = ([b.positions[0], b.start_velocity], [*b.positions.last().expect("nonempty"), b.end_velocity]);
            let dist = |a: [f64; 2], c: [f64; 2]| (a[0] - c[0]).hypot(a[1] - c[1]);
            if dist(xs, x) > 1.0 || dist(ys, y) > 1.0 {
                return Err(ActionError::InvalidArgument("endpoints lie farther than 1 from the reference path".into()));
            }
            (xs, ys)
        }
        None => ([x[0], 0.0], [x[0], 0.0]),
    };
    let mut b = Builder { pieces: Vec::new(), clock: 0.0, state: x };
    b.ramp_to(ref_start[1]);
    let base_start = b.clock;
    let base_len = spline.as_ref().map_or(0.0, Spline::duration);
    b.push(PieceKind::Base, base_len, spline.as_ref());
    b.state[1] = ref_end[1];
    let y2 = ref_end[1];
    // position reached if the velocity ramps straight to y₂ after the base
    let y3 = b.state[0] + 0.5 * (y2 - y[1]).abs() * (y2 + y[1]);
    let mut overlay = None;

    let forward = y2 > 0.0 && y[1] >= 0.5 * y2;
    let backward = y2 < 0.0 && y[1] <= 0.5 * y2;
    let case = if forward || backward {
        let coast = (y[0] - y3) / y[1];
        let bump = ThetaBump::for_displacement(y[0] - y3);
        if coast >= 0.0 {
            b.ramp_to(y[1]);
            b.push(PieceKind::Ramp { accel: 0.0 }, coast, None);
            Some(if forward { ConnectCase::PositiveCoast } else { ConnectCase::NegativeCoast })
        } else if let Some(bump) = bump.filter(|t| t.length() <= base_len) {
            overlay = Some((base_start + base_len - bump.length(), bump));
            b.ramp_to(y[1]);
            Some(if forward { ConnectCase::PositiveBump } else { ConnectCase::NegativeBump })
        } else {
            None
        }
    } else {
        None
    };
    let case = match case {
        Some(c) => c,
        None => {
            let resting = y2 == 0.0;
            b.ramp_to(0.0);
            let rest_target = y[0] - 0.5 * y[1].abs() * y[1];
            if let Some(bump) = ThetaBump::for_displacement(rest_target - b.state[0]) {
                b.push(PieceKind::Bump(bump), bump.length(), None);
            }
            b.ramp_to(y[1]);
            if resting { ConnectCase::Resting } else { ConnectCase::Braking }
        }
    };
    let mut out = Connected {
        pieces: b.pieces,
        overlay,
        duration: b.clock,
        case,
        action: 0.0,
        base: spline,
        start: x,
    };
    out.action = action_of(field, &out)?;
    Ok(out)
}

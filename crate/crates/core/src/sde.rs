//! Small-noise simulation of `dX = b(X) dt + √ε σ(X) dB`.
//!
//! Gaussian draws are keyed by `(seed, replica, step, channel)`: replica `r`
//! uses ChaCha8 stream `r`, and the draw for `(step, channel)` comes from the
//! four 32-bit words at `4·(step·m + channel)`. Any step can therefore be
//! reproduced, or a run resumed, without replaying earlier steps.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Trajectory, BLOW_UP_BOUND};
use crate::models::{distance_to_closed_polyline, ClassShape, Domain, EquivalenceClass, ModelError, StateVector, System};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("state left |x| ≤ {bound:e} at t = {time}")]
    BlowUp { time: f64, bound: f64 },
    #[error("Euler–Maruyama step left the positive orthant at t = {time}; use the log-euler scheme")]
    PositivityViolated { time: f64 },
    #[error("log-euler needs a diagonal diffusion proportional to the state on a positive-orthant model")]
    SchemeUnsupported,
    #[error("malformed region: {0}")]
    MalformedRegion(String),
    #[error("initial state lies outside the region")]
    StartOutsideRegion,
    #[error("checkpoint does not match this run: {0}")]
    CheckpointMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Euler step in `log x` coordinates; keeps every component positive.
    LogEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub epsilon: f64,
    pub step: f64,
    pub horizon: f64,
    #[serde(default)]
    pub burn_in: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

impl SimConfig {
    /// Config with burn-in at 10% of the horizon.
    pub fn new(epsilon: f64, step: f64, horizon: f64, seed: u64) -> Self {
        Self { epsilon, step, horizon, burn_in: 0.1 * horizon, seed, scheme: Scheme::EulerMaruyama }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        let bad = |m: &str| Err(SdeError::InvalidConfig(m.into()));
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad("epsilon must be a nonnegative number");
        }
        if !(self.step > 0.0) || !(self.horizon > self.step) || !self.horizon.is_finite() {
            return bad("need 0 < step < horizon");
        }
        if !(self.burn_in >= 0.0) || !(self.burn_in < self.horizon) {
            return bad("need 0 ≤ burn_in < horizon");
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.horizon / self.step).round() as u64
    }

    pub fn burn_in_steps(&self) -> u64 {
        (self.burn_in / self.step).round() as u64
    }
}

/// Source of standard normal draws addressed by step.
pub trait NoiseSource {
    /// Fills `out` with the draws of `step`, one per channel.
    fn fill(&mut self, step: u64, out: &mut [f64]);
}

/// Keyed ChaCha8 normals, see the module docs.
#[derive(Debug, Clone)]
pub struct CounterNoise {
    rng: ChaCha8Rng,
    next_step: u64,
}

const WORDS_PER_DRAW: u128 = 4;

impl CounterNoise {
    pub fn new(seed: u64, replica: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replica);
        Self { rng, next_step: 0 }
    }

    fn normal(&mut self) -> f64 {
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * scale;
        let u2 = (self.rng.next_u64() >> 11) as f64 * scale;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

impl NoiseSource for CounterNoise {
    fn fill(&mut self, step: u64, out: &mut [f64]) {
        if step != self.next_step {
            self.rng.set_word_pos(step as u128 * out.len() as u128 * WORDS_PER_DRAW);
        }
        for z in out.iter_mut() {
            *z = self.normal();
        }
        self.next_step = step + 1;
    }
}

/// Coarse-step draws built from a finer keyed stream: step `k` uses the
/// normalized sum of fine steps `k·factor .. (k+1)·factor`. Runs at `h` and
/// `h/factor` then share their Brownian path.
#[derive(Debug, Clone)]
pub struct CoarsenedNoise {
    fine: CounterNoise,
    factor: u64,
    buf: Vec<f64>,
}

impl CoarsenedNoise {
    pub fn new(seed: u64, replica: u64, factor: u64) -> Self {
        Self { fine: CounterNoise::new(seed, replica), factor: factor.max(1), buf: Vec::new() }
    }
}

impl NoiseSource for CoarsenedNoise {
    fn fill(&mut self, step: u64, out: &mut [f64]) {
        self.buf.resize(out.len(), 0.0);
        out.iter_mut().for_each(|z| *z = 0.0);
        for k in 0..self.factor {
            self.fine.fill(step * self.factor + k, &mut self.buf);
            out.iter_mut().zip(&self.buf).for_each(|(z, b)| *z += b);
        }
        let norm = (self.factor as f64).sqrt();
        out.iter_mut().for_each(|z| *z /= norm);
    }
}

/// Resumable single-replica integrator.
pub struct Simulation<'a> {
    sys: &'a System,
    cfg: SimConfig,
    replica: u64,
    x: Vec<f64>,
    step: u64,
    noise: Box<dyn NoiseSource + Send>,
    draws: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    increment: Vec<f64>,
}

/// Everything needed to resume a [`Simulation`] bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCheckpoint {
    pub replica: u64,
    pub step: u64,
    pub state: Vec<f64>,
    pub config: SimConfig,
}

impl<'a> Simulation<'a> {
    pub fn new(sys: &'a System, cfg: &SimConfig, x0: &StateVector, replica: u64) -> Result<Self, SdeError> {
        cfg.validate()?;
        sys.check_state(x0.as_slice())?;
        if cfg.scheme == Scheme::LogEuler && !supports_log_euler(sys) {
            return Err(SdeError::SchemeUnsupported);
        }
        let (d, m) = (sys.dim(), sys.noise_dim());
        Ok(Self {
            sys,
            cfg: cfg.clone(),
            replica,
            x: x0.0.clone(),
            step: 0,
            noise: Box::new(CounterNoise::new(cfg.seed, replica)),
            draws: vec![0.0; m],
            drift: vec![0.0; d],
            sigma: vec![0.0; d * m],
            increment: vec![0.0; d],
        })
    }

    /// Replaces the keyed draws; checkpoints then no longer identify the run.
    pub fn with_noise(mut self, noise: Box<dyn NoiseSource + Send>) -> Self {
        self.noise = noise;
        self
    }

    pub fn resume(sys: &'a System, checkpoint: &SimCheckpoint) -> Result<Self, SdeError> {
        let mut sim = Self::new(sys, &checkpoint.config, &StateVector::new(checkpoint.state.clone()), checkpoint.replica)?;
        if checkpoint.step > sim.cfg.total_steps() {
            return Err(SdeError::CheckpointMismatch("step beyond the horizon".into()));
        }
        sim.step = checkpoint.step;
        Ok(sim)
    }

    pub fn checkpoint(&self) -> SimCheckpoint {
        SimCheckpoint { replica: self.replica, step: self.step, state: self.x.clone(), config: self.cfg.clone() }
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.step
    }

    pub fn finished(&self) -> bool {
        self.step >= self.cfg.total_steps()
    }

    /// Noise part `√ε σ(x) ΔB` of the last Euler–Maruyama step.
    pub fn last_noise(&self) -> &[f64] {
        &self.increment
    }

    /// Advances one step of size `h`.
    pub fn advance(&mut self) -> Result<(), SdeError> {
        let (d, m) = (self.sys.dim(), self.sys.noise_dim());
        let h = self.cfg.step;
        self.sys.drift_into(&self.x, &mut self.drift);
        let noisy = self.cfg.epsilon > 0.0;
        if noisy {
            self.noise.fill(self.step, &mut self.draws);
            self.sys.diffusion_into(&self.x, &mut self.sigma);
        }
        let scale = (self.cfg.epsilon * h).sqrt();
        match self.cfg.scheme {
            Scheme::EulerMaruyama => {
                for i in 0..d {
                    self.increment[i] =
                        if noisy { scale * (0..m).map(|k| self.sigma[i * m + k] * self.draws[k]).sum::<f64>() } else { 0.0 };
                    self.x[i] += h * self.drift[i] + self.increment[i];
                }
                if self.sys.domain() == Domain::PositiveOrthant && self.x.iter().any(|&v| !(v > 0.0)) {
                    return Err(SdeError::PositivityViolated { time: self.time() + h });
                }
            }
            Scheme::LogEuler => {
                for i in 0..d {
                    // σ_ii / x_i is the log-coordinate noise intensity
                    let g = if noisy { self.sigma[i * m + i] / self.x[i] } else { 0.0 };
                    self.increment[i] = if noisy { scale * g * self.draws[i] } else { 0.0 };
                    let dlog = h * (self.drift[i] / self.x[i] - 0.5 * self.cfg.epsilon * g * g) + self.increment[i];
                    self.x[i] *= dlog.exp();
                }
            }
        }
        self.step += 1;
        if self.x.iter().any(|v| !v.is_finite()) || self.x.iter().map(|v| v * v).sum::<f64>().sqrt() > BLOW_UP_BOUND {
            return Err(SdeError::BlowUp { time: self.time(), bound: BLOW_UP_BOUND });
        }
        Ok(())
    }
}

fn supports_log_euler(sys: &System) -> bool {
    sys.domain() == Domain::PositiveOrthant && sys.dim() == sys.noise_dim()
}

/// Full path, recording every `record_every`-th state including the first.
pub fn simulate(sys: &System, cfg: &SimConfig, x0: &StateVector, replica: u64, record_every: usize) -> Result<Trajectory, SdeError> {
    let every = record_every.max(1) as u64;
    let mut sim = Simulation::new(sys, cfg, x0, replica)?;
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    while !sim.finished() {
        sim.advance()?;
        if sim.steps_taken() % every == 0 || sim.finished() {
            times.push(sim.time());
            states.push(StateVector::new(sim.state()));
        }
    }
    Ok(Trajectory { times, states })
}

/// Axis-aligned box split into equal bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: Vec<usize>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, bins: Vec<usize>) -> Result<Self, SdeError> {
        let g = Self { lower, upper, bins };
        if g.lower.len() != g.upper.len() || g.lower.len() != g.bins.len() || g.lower.is_empty() {
            return Err(SdeError::InvalidConfig("grid bounds and bins differ in dimension".into()));
        }
        if g.lower.iter().zip(&g.upper).any(|(a, b)| !(a < b)) || g.bins.iter().any(|&n| n == 0) {
            return Err(SdeError::InvalidConfig("grid needs lower < upper and at least one bin per axis".into()));
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn len(&self) -> usize {
        self.bins.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat bin index, `None` outside the box.
    pub fn index(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for i in 0..self.dim() {
            let s = (x[i] - self.lower[i]) / (self.upper[i] - self.lower[i]);
            if !(0.0..1.0).contains(&s) {
                return None;
            }
            idx = idx * self.bins[i] + ((s * self.bins[i] as f64) as usize).min(self.bins[i] - 1);
        }
        Some(idx)
    }

    pub fn center(&self, mut idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for i in (0..self.dim()).rev() {
            let k = idx % self.bins[i];
            idx /= self.bins[i];
            let w = (self.upper[i] - self.lower[i]) / self.bins[i] as f64;
            out[i] = self.lower[i] + (k as f64 + 0.5) * w;
        }
        out
    }

    /// Half-diagonal of one bin.
    pub fn bin_radius(&self) -> f64 {
        (0..self.dim())
            .map(|i| ((self.upper[i] - self.lower[i]) / self.bins[i] as f64 / 2.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Time-weighted histogram of visits; `overflow` holds time spent outside the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMeasure {
    pub grid: Grid,
    pub mass: Vec<f64>,
    pub overflow: f64,
    pub total_time: f64,
}

/// Unnormalized accumulator behind [`OccupationMeasure`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationAccumulator {
    grid: Grid,
    time: Vec<f64>,
    outside: f64,
}

impl OccupationAccumulator {
    pub fn new(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, time: vec![0.0; n], outside: 0.0 }
    }

    pub fn add(&mut self, x: &[f64], dt: f64) {
        match self.grid.index(x) {
            Some(k) => self.time[k] += dt,
            None => self.outside += dt,
        }
    }

    /// Adds another accumulator on the same grid.
    pub fn merge(&mut self, other: &Self) -> Result<(), SdeError> {
        if self.grid != other.grid {
            return Err(SdeError::InvalidConfig("cannot merge occupation on different grids".into()));
        }
        self.time.iter_mut().zip(&other.time).for_each(|(a, b)| *a += b);
        self.outside += other.outside;
        Ok(())
    }

    pub fn finish(&self) -> OccupationMeasure {
        let total: f64 = self.time.iter().sum::<f64>() + self.outside;
        let norm = if total > 0.0 { 1.0 / total } else { 0.0 };
        if self.outside > 0.0 {
            log::warn!("{:.3e} of the occupation time fell outside the grid box", self.outside * norm);
        }
        OccupationMeasure {
            grid: self.grid.clone(),
            mass: self.time.iter().map(|t| t * norm).collect(),
            overflow: self.outside * norm,
            total_time: total,
        }
    }
}

impl OccupationMeasure {
    /// Histogram of a recorded trajectory, each state weighted by the time to the next.
    pub fn from_trajectory(traj: &Trajectory, grid: &Grid) -> Self {
        let mut acc = OccupationAccumulator::new(grid.clone());
        for (w, x) in traj.times.windows(2).zip(&traj.states) {
            acc.add(x.as_slice(), w[1] - w[0]);
        }
        acc.finish()
    }

    /// Mass of the bins whose centers satisfy `inside`.
    pub fn mass_where(&self, inside: impl Fn(&[f64]) -> bool) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .filter(|(k, _)| inside(&self.grid.center(*k)))
            // fold from +0.0: an empty float sum is -0.0
            .fold(0.0, |acc, (_, m)| acc + m)
    }
}

/// Occupation measure of one replica after burn-in.
pub fn occupation(sys: &System, cfg: &SimConfig, x0: &StateVector, replica: u64, grid: &Grid) -> Result<OccupationMeasure, SdeError> {
    let mut sim = Simulation::new(sys, cfg, x0, replica)?;
    let mut acc = OccupationAccumulator::new(grid.clone());
    run_into(&mut sim, &mut acc, u64::MAX)?;
    Ok(acc.finish())
}

/// Advances `sim` by at most `max_steps`, adding post-burn-in visits to `acc`.
pub fn run_into(sim: &mut Simulation<'_>, acc: &mut OccupationAccumulator, max_steps: u64) -> Result<(), SdeError> {
    let burn = sim.cfg.burn_in_steps();
    let h = sim.cfg.step;
    let mut taken = 0;
    while !sim.finished() && taken < max_steps {
        if sim.steps_taken() >= burn {
            acc.add(&sim.x, h);
        }
        sim.advance()?;
        taken += 1;
    }
    Ok(())
}

/// Occupation mass of the `rho`-neighborhood of a class, judged at bin centers.
pub fn neighborhood_mass(sys: &System, occ: &OccupationMeasure, class: &EquivalenceClass, rho: f64) -> Result<f64, SdeError> {
    if !(rho > 0.0) {
        return Err(SdeError::InvalidConfig("neighborhood radius must be positive".into()));
    }
    Ok(match &class.shape {
        ClassShape::Point { at } => occ.mass_where(|x| at.distance(x) < rho),
        ClassShape::Level { level, .. } => {
            occ.mass_where(|x| sys.hamiltonian(x).map_or(false, |h| (h - level).abs() < rho))
        }
        ClassShape::Band { lo, hi } => {
            occ.mass_where(|x| sys.hamiltonian(x).map_or(false, |h| h > lo - rho && h < hi + rho))
        }
        ClassShape::Orbit { samples } => occ.mass_where(|x| distance_to_closed_polyline(samples, x) < rho),
    })
}

/// Region whose first exit is timed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Region {
    Everything,
    /// `{H < level}` for models with a first integral.
    HamiltonianBelow { level: f64 },
    /// `{x : ⟨normal, x⟩ < offset}`.
    HalfPlane { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn validate(&self, sys: &System) -> Result<(), SdeError> {
        let d = sys.dim();
        match self {
            Self::Everything => Ok(()),
            Self::HamiltonianBelow { level } if level.is_finite() && sys.has_hamiltonian() => Ok(()),
            Self::HamiltonianBelow { .. } => Err(SdeError::MalformedRegion("model has no first integral".into())),
            Self::HalfPlane { normal, offset } => {
                if normal.len() != d || normal.iter().all(|v| *v == 0.0) || !offset.is_finite() {
                    Err(SdeError::MalformedRegion("half-plane needs a nonzero normal of the state dimension".into()))
                } else {
                    Ok(())
                }
            }
            Self::Ball { center, radius } => {
                if center.len() != d || !(*radius > 0.0) {
                    Err(SdeError::MalformedRegion("ball needs a center of the state dimension and positive radius".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn contains(&self, sys: &System, x: &[f64]) -> bool {
        match self {
            Self::Everything => true,
            Self::HamiltonianBelow { level } => sys.hamiltonian(x).map_or(false, |h| h < *level),
            Self::HalfPlane { normal, offset } => normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() < *offset,
            Self::Ball { center, radius } => crate::models::euclidean_distance(center, x) < *radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    /// Exit time, or the horizon when censored.
    pub time: f64,
    pub censored: bool,
    /// First state outside the region, or the final state when censored.
    pub state: Vec<f64>,
}

/// First exit from `region` of one replica started at `x0`.
pub fn exit_time(sys: &System, cfg: &SimConfig, x0: &StateVector, region: &Region, replica: u64) -> Result<ExitRecord, SdeError> {
    region.validate(sys)?;
    if !region.contains(sys, x0.as_slice()) {
        return Err(SdeError::StartOutsideRegion);
    }
    let mut sim = Simulation::new(sys, cfg, x0, replica)?;
    while !sim.finished() {
        sim.advance()?;
        if !region.contains(sys, sim.state()) {
            return Ok(ExitRecord { time: sim.time(), censored: false, state: sim.state().to_vec() });
        }
    }
    Ok(ExitRecord { time: sim.time(), censored: true, state: sim.state().to_vec() })
}

/// Least-squares fit of `ln mass ≈ c - κ/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub kappa: f64,
    pub intercept: f64,
}

/// Fits the exponential concentration rate from `(ε, mass)` pairs with positive masses.
pub fn fit_concentration_rate(points: &[(f64, f64)]) -> Result<RateFit, SdeError> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(e, m)| *e > 0.0 && *m > 0.0).map(|(e, m)| (1.0 / e, m.ln())).collect();
    if pts.len() < 2 {
        return Err(SdeError::InvalidConfig("need two points with positive mass".into()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SdeError::InvalidConfig("need two distinct noise levels".into()));
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    Ok(RateFit { kappa: -slope, intercept: my - slope * mx })
}

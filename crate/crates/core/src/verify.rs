//! Sampled checks of the monotonicity, Lyapunov, dissipativity and growth
//! conditions that make a model's small-noise theory applicable.
//!
//! Every check minimizes a signed margin (positive = satisfied) over Halton
//! points of a region, then refines each sample by a fixed-budget pattern
//! search. Refinement depends only on the starting point, so a larger sample
//! set contains every point a smaller one found and margins never improve as
//! `samples` grows.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, ScalarNoise, System};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no built-in {what} for model {model}")]
    Unsupported { what: &'static str, model: String },
}

/// Coefficients of `dX = b dt + √ε σ dB` as seen by the checks.
pub trait Coefficients {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn in_domain(&self, x: &[f64]) -> bool;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `d×m`.
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
}

impl Coefficients for System {
    fn dim(&self) -> usize {
        System::dim(self)
    }
    fn noise_dim(&self) -> usize {
        System::noise_dim(self)
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        System::in_domain(self, x)
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.drift_into(x, out)
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        self.diffusion_into(x, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    /// Samples that fell inside the model's domain.
    pub samples: usize,
    pub region: String,
    pub worst_margin: f64,
    pub witness: Vec<f64>,
    /// `pass ⇔ worst_margin ≥ threshold`.
    pub threshold: f64,
    pub pass: bool,
    pub statistic: Option<Statistic>,
    /// Points where `V = 0` but `|σ*∇V| ≠ 0`; any of them fails the check.
    pub singular_samples: usize,
}

impl VerificationReport {
    fn new(check: &str, region: String, search: Search, threshold: f64) -> Self {
        let pass = search.evaluated > 0 && search.worst >= threshold && search.singular == 0;
        Self {
            check: check.into(),
            samples: search.evaluated,
            region,
            worst_margin: search.worst,
            witness: search.witness,
            threshold,
            pass,
            statistic: None,
            singular_samples: search.singular,
        }
    }

    fn with_statistic(mut self, name: &str, value: f64) -> Self {
        self.statistic = Some(Statistic { name: name.into(), value });
        self
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} on {}: worst margin {:.6e} at {:?} ({} samples)",
            if self.pass { "PASS" } else { "FAIL" },
            self.check,
            self.region,
            self.worst_margin,
            self.witness,
            self.samples
        )?;
        if let Some(s) = &self.statistic {
            write!(f, ", {} = {:.6e}", s.name, s.value)?;
        }
        if self.singular_samples > 0 {
            write!(f, ", {} singular samples", self.singular_samples)?;
        }
        Ok(())
    }
}

/// Where samples are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SampleRegion {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{inner ≤ |x - center| ≤ outer}` in two or three dimensions.
    Shell { center: Vec<f64>, inner: f64, outer: f64 },
}

impl SampleRegion {
    pub fn square(half_width: f64, dim: usize) -> Self {
        Self::Box { lower: vec![-half_width; dim], upper: vec![half_width; dim] }
    }

    pub fn shell(center: Vec<f64>, inner: f64, outer: f64) -> Self {
        Self::Shell { center, inner, outer }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lower, .. } => lower.len(),
            Self::Shell { center, .. } => center.len(),
        }
    }

    fn validate(&self, dim: usize) -> Result<(), VerifyError> {
        let bad = |m: &str| Err(VerifyError::InvalidArgument(m.into()));
        match self {
            Self::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return bad("box dimension differs from the model");
                }
                if lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
                    return bad("box needs lower < upper");
                }
            }
            Self::Shell { center, inner, outer } => {
                if center.len() != dim || !(2..=3).contains(&dim) {
                    return bad("shells are supported in two or three dimensions matching the model");
                }
                if !(*inner > 0.0 && inner < outer && outer.is_finite()) {
                    return bad("shell needs 0 < inner < outer");
                }
            }
        }
        Ok(())
    }

    /// Maps `u ∈ [0,1]^d` onto the region; shells are sampled uniformly in volume.
    pub fn point(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Self::Box { lower, upper } => lower.iter().zip(upper).zip(u).map(|((a, b), s)| a + s * (b - a)).collect(),
            Self::Shell { center, inner, outer } => {
                let d = center.len() as i32;
                let r = (inner.powi(d) + u[0] * (outer.powi(d) - inner.powi(d))).powf(1.0 / d as f64);
                let phi = std::f64::consts::TAU * u[1];
                let dir = if d == 2 {
                    vec![phi.cos(), phi.sin()]
                } else {
                    let z = 2.0 * u[2] - 1.0;
                    let rho = (1.0 - z * z).max(0.0).sqrt();
                    vec![rho * phi.cos(), rho * phi.sin(), z]
                };
                center.iter().zip(dir).map(|(c, e)| c + r * e).collect()
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Box { lower, upper } => {
                let sides: Vec<String> = lower.iter().zip(upper).map(|(a, b)| format!("[{a}, {b}]")).collect();
                sides.join("×")
            }
            Self::Shell { center, inner, outer } => format!("{inner} ≤ |x - {center:?}| ≤ {outer}"),
        }
    }
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Point `index` of the Halton sequence in `dim ≤ 12` dimensions.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    PRIMES[..dim]
        .iter()
        .map(|&b| {
            let (mut i, mut f, mut r) = (index, 1.0, 0.0);
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

/// Pattern-search evaluations spent on each sample.
const REFINE_BUDGET: usize = 24;
/// Initial pattern step in the unit parameter cube; independent of the sample
/// count so refinement is a function of the starting point alone.
const REFINE_STEP: f64 = 0.01;

struct Search {
    worst: f64,
    witness: Vec<f64>,
    evaluated: usize,
    singular: usize,
}

enum Eval {
    Margin(f64, Vec<f64>),
    Skip,
    Singular(Vec<f64>),
}

/// Minimum over `samples` Halton points in `[0,1]^k` of `f`, each refined locally.
fn search(k: usize, samples: usize, mut f: impl FnMut(&[f64]) -> Eval) -> Search {
    let mut out = Search { worst: f64::INFINITY, witness: Vec::new(), evaluated: 0, singular: 0 };
    let step0 = REFINE_STEP;
    for index in 1..=samples as u64 {
        let mut u = halton(index, k);
        let (mut best, mut at) = match f(&u) {
            Eval::Margin(m, x) => (m, x),
            Eval::Skip => continue,
            Eval::Singular(x) => {
                out.singular += 1;
                out.evaluated += 1;
                if out.witness.is_empty() {
                    out.witness = x;
                }
                continue;
            }
        };
        out.evaluated += 1;
        let mut step = step0;
        let mut spent = 0;
        'refine: while spent < REFINE_BUDGET && step > 1e-3 * step0 {
            for j in 0..k {
                for dir in [1.0, -1.0] {
                    let mut v = u.clone();
                    v[j] = (v[j] + dir * step).clamp(0.0, 1.0);
                    spent += 1;
                    if let Eval::Margin(m, x) = f(&v) {
                        if m < best {
                            (best, at, u) = (m, x, v);
                            continue 'refine;
                        }
                    }
                    if spent >= REFINE_BUDGET {
                        break 'refine;
                    }
                }
            }
            step /= 2.0;
        }
        if best < out.worst || (out.witness.is_empty() && best.is_finite()) {
            out.worst = out.worst.min(best);
            out.witness = at;
        }
    }
    out
}

/// Minimum of `margin` over the region, skipping points outside the model's domain.
pub fn check_inequality<C: Coefficients + ?Sized>(
    name: &str,
    sys: &C,
    region: &SampleRegion,
    samples: usize,
    threshold: f64,
    margin: impl Fn(&[f64]) -> f64,
) -> Result<VerificationReport, VerifyError> {
    region.validate(sys.dim())?;
    let result = search(region.dim(), samples, |u| {
        let x = region.point(u);
        if sys.in_domain(&x) {
            Eval::Margin(margin(&x), x)
        } else {
            Eval::Skip
        }
    });
    Ok(VerificationReport::new(name, region.describe(), result, threshold))
}

/// Empirical `L_R = max (2⟨x-y, b(x)-b(y)⟩ + ‖σ(x)-σ(y)‖²)/|x-y|²` over pairs
/// with `|x-y| ≤ eps0`; the margin is `max_rate - L_R`.
pub fn check_monotonicity<C: Coefficients + ?Sized>(
    sys: &C,
    region: &SampleRegion,
    eps0: f64,
    samples: usize,
    max_rate: f64,
) -> Result<VerificationReport, VerifyError> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(VerifyError::InvalidArgument("eps0 must lie in (0, 1)".into()));
    }
    region.validate(sys.dim())?;
    let (d, m) = (sys.dim(), sys.noise_dim());
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    let mut sx = vec![0.0; d * m];
    let mut sy = vec![0.0; d * m];
    let scale = eps0 / (d as f64).sqrt();
    let result = search(2 * d, samples, |u| {
        let x = region.point(&u[..d]);
        let y: Vec<f64> = x.iter().zip(&u[d..]).map(|(a, s)| a + scale * (2.0 * s - 1.0)).collect();
        let dist2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        // identical points carry no information about the rate
        if dist2 < 1e-24 || !sys.in_domain(&x) || !sys.in_domain(&y) {
            return Eval::Skip;
        }
        sys.drift(&x, &mut bx);
        sys.drift(&y, &mut by);
        sys.diffusion(&x, &mut sx);
        sys.diffusion(&y, &mut sy);
        let inner: f64 = (0..d).map(|i| (x[i] - y[i]) * (bx[i] - by[i])).sum();
        let frob: f64 = sx.iter().zip(&sy).map(|(a, b)| (a - b).powi(2)).sum();
        let rate = (2.0 * inner + frob) / dist2;
        Eval::Margin(max_rate - rate, x.into_iter().chain(y).collect())
    });
    let rate = max_rate - result.worst;
    Ok(VerificationReport::new("monotonicity", region.describe(), result, 0.0).with_statistic("L_R", rate))
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Lyapunov function with the constants of the integrability conditions
/// `J ≤ C(1+V)` and `Tr(σ*∇²Vσ) ≥ -M - CV`, where
/// `J = ⟨b,∇V⟩ + θ/2 Tr(σ*∇²Vσ) + |σ*∇V|²/(ηV)`.
#[derive(Clone)]
pub struct LyapunovCertificate {
    pub name: String,
    pub value: ScalarFn,
    pub gradient: VectorFn,
    /// Row-major `d×d`.
    pub hessian: VectorFn,
    pub theta: f64,
    pub eta: f64,
    /// Solved for over the sample when absent.
    pub c: Option<f64>,
    pub m: f64,
}

impl fmt::Debug for LyapunovCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovCertificate")
            .field("name", &self.name)
            .field("theta", &self.theta)
            .field("eta", &self.eta)
            .field("c", &self.c)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

/// Pointwise pieces of the Lyapunov conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovTerms {
    pub value: f64,
    /// `⟨b, ∇V⟩`.
    pub lie: f64,
    /// `Tr(σ*∇²Vσ)`.
    pub trace: f64,
    /// `|σ*∇V|²`.
    pub noise_gradient: f64,
}

impl LyapunovTerms {
    /// `J`, or `None` when `V = 0` while `|σ*∇V| ≠ 0`.
    pub fn j(&self, theta: f64, eta: f64) -> Option<f64> {
        let last = if self.value > 0.0 {
            self.noise_gradient / (eta * self.value)
        } else if self.noise_gradient == 0.0 {
            0.0
        } else {
            return None;
        };
        Some(self.lie + 0.5 * theta * self.trace + last)
    }

    /// Generator `L^ε V = ⟨b,∇V⟩ + ε/2 Tr(σ*∇²Vσ)`.
    pub fn generator(&self, eps: f64) -> f64 {
        self.lie + 0.5 * eps * self.trace
    }
}

impl LyapunovCertificate {
    pub fn terms<C: Coefficients + ?Sized>(&self, sys: &C, x: &[f64]) -> LyapunovTerms {
        let (d, m) = (sys.dim(), sys.noise_dim());
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * m];
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        sys.drift(x, &mut b);
        sys.diffusion(x, &mut s);
        (self.gradient)(x, &mut g);
        (self.hessian)(x, &mut h);
        let lie = b.iter().zip(&g).map(|(a, c)| a * c).sum();
        let mut trace = 0.0;
        let mut noise_gradient = 0.0;
        for k in 0..m {
            let col: Vec<f64> = (0..d).map(|i| s[i * m + k]).collect();
            for i in 0..d {
                for j in 0..d {
                    trace += col[i] * h[i * d + j] * col[j];
                }
            }
            noise_gradient += col.iter().zip(&g).map(|(a, c)| a * c).sum::<f64>().powi(2);
        }
        LyapunovTerms { value: (self.value)(x), lie, trace, noise_gradient }
    }

    /// Largest relative mismatch of the gradient and Hessian against central differences.
    pub fn derivative_mismatch(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        (self.gradient)(x, &mut g);
        (self.hessian)(x, &mut h);
        let mut worst: f64 = 0.0;
        let mut y = x.to_vec();
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for j in 0..d {
            let step = 1e-5 * (1.0 + x[j].abs());
            y[j] = x[j] + step;
            let vp = (self.value)(&y);
            (self.gradient)(&y, &mut gp);
            y[j] = x[j] - step;
            let vm = (self.value)(&y);
            (self.gradient)(&y, &mut gm);
            y[j] = x[j];
            let fd = (vp - vm) / (2.0 * step);
            worst = worst.max((fd - g[j]).abs() / (1.0 + g[j].abs()));
            for i in 0..d {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                worst = worst.max((fd - h[i * d + j]).abs() / (1.0 + h[i * d + j].abs()));
            }
        }
        worst
    }
}

/// Both integrability conditions; the statistic is the smallest `C` the sample needs.
pub fn check_lyapunov<C: Coefficients + ?Sized>(
    sys: &C,
    cert: &LyapunovCertificate,
    region: &SampleRegion,
    samples: usize,
) -> Result<VerificationReport, VerifyError> {
    region.validate(sys.dim())?;
    let needed = |x: &[f64]| -> Option<f64> {
        let t = cert.terms(sys, x);
        let j = t.j(cert.theta, cert.eta)?;
        let from_j = j / (1.0 + t.value);
        let from_trace = if t.value > 0.0 { (-cert.m - t.trace) / t.value } else if t.trace + cert.m >= 0.0 { 0.0 } else { f64::INFINITY };
        Some(from_j.max(from_trace).max(0.0))
    };
    let eval = |x: Vec<f64>, f: &dyn Fn(&[f64]) -> Option<f64>| -> Eval {
        if !sys.in_domain(&x) {
            return Eval::Skip;
        }
        match f(&x) {
            Some(m) => Eval::Margin(m, x),
            None => Eval::Singular(x),
        }
    };
    let smallest = search(region.dim(), samples, |u| eval(region.point(u), &|x| needed(x).map(|c| -c)));
    let c_needed = -smallest.worst;
    let Some(c) = cert.c else {
        let result = Search { worst: 0.0, ..smallest };
        return Ok(VerificationReport::new(&format!("lyapunov {}", cert.name), region.describe(), result, 0.0)
            .with_statistic("C", c_needed));
    };
    let margin = |x: &[f64]| -> Option<f64> {
        let t = cert.terms(sys, x);
        let j = t.j(cert.theta, cert.eta)?;
        Some((c * (1.0 + t.value) - j).min(t.trace + cert.m + c * t.value))
    };
    let result = search(region.dim(), samples, |u| eval(region.point(u), &margin));
    Ok(VerificationReport::new(&format!("lyapunov {}", cert.name), region.describe(), result, 0.0).with_statistic("C", c_needed))
}

/// Empirical `γ = min(-L^ε V)` over a shell; passes when `L^ε V ≤ 0` throughout.
pub fn check_dissipativity<C: Coefficients + ?Sized>(
    sys: &C,
    cert: &LyapunovCertificate,
    eps: f64,
    shell: &SampleRegion,
    samples: usize,
) -> Result<VerificationReport, VerifyError> {
    if !matches!(shell, SampleRegion::Shell { .. }) {
        return Err(VerifyError::InvalidArgument("dissipativity is checked on a shell".into()));
    }
    if !(eps >= 0.0) {
        return Err(VerifyError::InvalidArgument("eps must be nonnegative".into()));
    }
    let report = check_inequality("dissipativity", sys, shell, samples, 0.0, |x| -cert.terms(sys, x).generator(eps))?;
    let gamma = report.worst_margin;
    Ok(report.with_statistic("gamma", gamma))
}

/// Minimum of `V` grows from each shell `[r_k, r_{k+1}]` to the next.
pub fn check_radial_growth<C: Coefficients + ?Sized>(
    sys: &C,
    cert: &LyapunovCertificate,
    center: &[f64],
    radii: &[f64],
    samples: usize,
) -> Result<VerificationReport, VerifyError> {
    if radii.len() < 3 || radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(VerifyError::InvalidArgument("need at least three increasing radii".into()));
    }
    let mut minima = Vec::new();
    let mut evaluated = 0;
    for w in radii.windows(2) {
        let shell = SampleRegion::shell(center.to_vec(), w[0], w[1]);
        let r = check_inequality("shell minimum", sys, &shell, samples, 0.0, |x| (cert.value)(x))?;
        evaluated += r.samples;
        minima.push((r.worst_margin, r.witness));
    }
    let (k, gap) = minima
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least two shells");
    let result = Search { worst: gap, witness: minima[k + 1].1.clone(), evaluated, singular: 0 };
    let region = format!("shells around {center:?} with radii {radii:?}");
    Ok(VerificationReport::new(&format!("radial growth {}", cert.name), region, result, 0.0))
}

/// Gradient and Hessian of the certificate agree with central differences to `1e-6`.
pub fn check_certificate_derivatives<C: Coefficients + ?Sized>(
    sys: &C,
    cert: &LyapunovCertificate,
    region: &SampleRegion,
    samples: usize,
) -> Result<VerificationReport, VerifyError> {
    check_inequality(&format!("derivatives {}", cert.name), sys, region, samples, 0.0, |x| 1e-6 - cert.derivative_mismatch(x))
}

/// The symmetric matrix with unit diagonal and off-diagonal `(α+β)/2`.
pub fn competition_matrix(alpha: f64, beta: f64) -> Matrix3<f64> {
    let o = 0.5 * (alpha + beta);
    Matrix3::new(1.0, o, o, o, 1.0, o, o, o, 1.0)
}

/// Smallest eigenvalue must be strictly positive (threshold `1e-12`);
/// the witness lists all eigenvalues in increasing order.
pub fn check_positive_definite(alpha: f64, beta: f64) -> VerificationReport {
    let mut eig: Vec<f64> = SymmetricEigen::new(competition_matrix(alpha, beta)).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let result = Search { worst: eig[0], witness: eig, evaluated: 1, singular: 0 };
    VerificationReport::new("positive definite", format!("alpha = {alpha}, beta = {beta}"), result, 1e-12)
}

/// Polynomial majorant `c₁·g(x)` of the squared noise intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthBound {
    /// `x₁⁴ + x₂² + 1`.
    QuarticFirst,
    /// `x₁⁴ + |x₂|^{4/3} + 1`.
    QuarticCubeRoot,
    /// `1`.
    Constant,
}

impl GrowthBound {
    pub fn weight(self, x: &[f64]) -> f64 {
        match self {
            Self::QuarticFirst => x[0].powi(4) + x[1] * x[1] + 1.0,
            Self::QuarticCubeRoot => x[0].powi(4) + x[1].abs().powf(4.0 / 3.0) + 1.0,
            Self::Constant => 1.0,
        }
    }
}

/// Squared noise intensity in the form its growth bound is stated: the scalar
/// intensity for single-channel models, `Σ σᵢ²` for `σ = diag(xᵢσᵢ)` on the
/// positive orthant, and the Frobenius norm otherwise.
pub fn noise_intensity(sys: &System, x: &[f64]) -> f64 {
    if let Some(noise) = sys.scalar_noise() {
        return noise.value(x).powi(2);
    }
    let (d, m) = (sys.dim(), sys.noise_dim());
    let mut s = vec![0.0; d * m];
    sys.diffusion_into(x, &mut s);
    if sys.competition().is_some() {
        (0..d).map(|i| (s[i * m + i] / x[i]).powi(2)).sum()
    } else {
        s.iter().map(|v| v * v).sum()
    }
}

/// Domination ratio `inf g / noise_intensity` over the sample, positive exactly
/// when a finite `c₁` with `noise_intensity ≤ c₁·g` exists; the statistic is
/// the smallest such `c₁`.
pub fn check_growth_bound(sys: &System, bound: GrowthBound, region: &SampleRegion, samples: usize) -> Result<VerificationReport, VerifyError> {
    let needs_two = matches!(bound, GrowthBound::QuarticFirst | GrowthBound::QuarticCubeRoot);
    if needs_two && sys.dim() != 2 {
        return Err(VerifyError::InvalidArgument(format!("{bound:?} bound needs a planar model")));
    }
    let report = check_inequality("growth bound", sys, region, samples, f64::MIN_POSITIVE, |x| {
        bound.weight(x) / noise_intensity(sys, x)
    })?;
    let c1 = 1.0 / report.worst_margin;
    Ok(report.with_statistic("c1", c1))
}

fn param(sys: &System, key: &str) -> f64 {
    sys.params()[key]
}

/// `V = H + 3`, `θ = 2`, `η = 1` for the two polynomial examples.
fn polynomial_certificate(sys: &System) -> LyapunovCertificate {
    let (a, b, c) = (sys.clone(), sys.clone(), sys.clone());
    LyapunovCertificate {
        name: "H + 3".into(),
        value: Arc::new(move |x| a.hamiltonian(x).expect("planar state") + 3.0),
        gradient: Arc::new(move |x, out| out.copy_from_slice(&b.hamiltonian_gradient(x).expect("planar state"))),
        hessian: Arc::new(move |x, out| out.copy_from_slice(&c.hamiltonian_hessian(x).expect("planar state"))),
        theta: 2.0,
        eta: 1.0,
        c: Some(25.0),
        m: 2.0,
    }
}

const GOLDEN: f64 = 1.618_033_988_749_895;

/// Quartic Lyapunov function for the degenerate van der Pol oscillator,
/// `θ = ε/2`, `η = 8/ε`.
pub fn van_der_pol_certificate(eps: f64) -> Result<LyapunovCertificate, VerifyError> {
    if !(eps > 0.0) {
        return Err(VerifyError::InvalidArgument("eps must be positive".into()));
    }
    let a = (5f64.sqrt() - 1.0) / 24.0;
    // w = Y² + (Y¹)³/3 - φ Y¹ is the shifted velocity
    let w = |x: &[f64]| x[1] + x[0].powi(3) / 3.0 - GOLDEN * x[0];
    Ok(LyapunovCertificate {
        name: "quartic".into(),
        value: Arc::new(move |x| a * x[0].powi(4) + 0.5 * w(x).powi(2)),
        gradient: Arc::new(move |x, out| {
            let dw = x[0] * x[0] - GOLDEN;
            out[0] = 4.0 * a * x[0].powi(3) + w(x) * dw;
            out[1] = w(x);
        }),
        hessian: Arc::new(move |x, out| {
            let dw = x[0] * x[0] - GOLDEN;
            out[0] = 12.0 * a * x[0] * x[0] + dw * dw + 2.0 * x[0] * w(x);
            out[1] = dw;
            out[2] = dw;
            out[3] = 1.0;
        }),
        theta: 0.5 * eps,
        eta: 8.0 / eps,
        c: Some(2.0),
        m: 0.0,
    })
}

/// Closed form of `⟨b, ∇V⟩` for the van der Pol certificate.
pub fn van_der_pol_lie_derivative(x: &[f64]) -> f64 {
    -x[0].powi(4) / 3.0 + GOLDEN * x[0] * x[0] - (GOLDEN - 1.0) * x[1] * x[1]
}

/// `c₁` with `σ² ≤ c₁(v⁴ + i² + 1)` for the built-in intensities.
fn diode_growth_constant(noise: &ScalarNoise) -> Option<f64> {
    match noise {
        ScalarNoise::Constant(s) => Some(s * s),
        // s² + c v² ≤ (s² + c/2)(v⁴ + 1)
        ScalarNoise::SqrtQuadratic { s, c } => Some(s * s + 0.5 * c),
        ScalarNoise::Custom(_) => None,
    }
}

/// `V = Li² + Cv²`, `θ = L/(4c₁)`, `η = 16c₁/L`.
pub fn diode_certificate(sys: &System, c1: f64) -> Result<LyapunovCertificate, VerifyError> {
    let k = sys.diode_constants().ok_or_else(|| VerifyError::Unsupported { what: "diode certificate", model: sys.name().into() })?;
    if !(c1 > 0.0) {
        return Err(VerifyError::InvalidArgument("c1 must be positive".into()));
    }
    let (l, c) = (k.inductance, k.capacitance);
    Ok(LyapunovCertificate {
        name: "Li² + Cv²".into(),
        value: Arc::new(move |x| l * x[1] * x[1] + c * x[0] * x[0]),
        gradient: Arc::new(move |x, out| {
            out[0] = 2.0 * c * x[0];
            out[1] = 2.0 * l * x[1];
        }),
        hessian: Arc::new(move |_, out| out.copy_from_slice(&[2.0 * c, 0.0, 0.0, 2.0 * l])),
        theta: l / (4.0 * c1),
        eta: 16.0 * c1 / l,
        c: Some(4.0),
        m: 0.0,
    })
}

/// Relative-entropy Lyapunov function `Σ (xᵢ - e - e ln(xᵢ/e))` around the
/// interior equilibrium; `θ = η = 1`.
fn competition_certificate(alpha: f64, beta: f64) -> LyapunovCertificate {
    let e = 1.0 / (1.0 + alpha + beta);
    LyapunovCertificate {
        name: "relative entropy".into(),
        value: Arc::new(move |x| x.iter().map(|&v| v - e - e * (v / e).ln()).sum()),
        gradient: Arc::new(move |x, out| out.iter_mut().zip(x).for_each(|(g, &v)| *g = (v - e) / v)),
        hessian: Arc::new(move |x, out| {
            out.iter_mut().for_each(|h| *h = 0.0);
            for i in 0..3 {
                out[4 * i] = e / (x[i] * x[i]);
            }
        }),
        theta: 1.0,
        eta: 1.0,
        c: Some(2.0),
        m: 0.0,
    }
}

/// `V = H + 1/4`, `θ = 1/(8σ²)`, `η = 16σ²`.
fn figure_eight_certificate(sys: &System) -> LyapunovCertificate {
    let s2 = param(sys, "sigma").powi(2);
    let (a, b, c) = (sys.clone(), sys.clone(), sys.clone());
    LyapunovCertificate {
        name: "H + 1/4".into(),
        value: Arc::new(move |x| (a.hamiltonian(x).expect("planar state") + 0.25).max(0.0)),
        gradient: Arc::new(move |x, out| out.copy_from_slice(&b.hamiltonian_gradient(x).expect("planar state"))),
        hessian: Arc::new(move |x, out| out.copy_from_slice(&c.hamiltonian_hessian(x).expect("planar state"))),
        theta: 1.0 / (8.0 * s2),
        eta: 16.0 * s2,
        c: Some(2.0),
        m: 4.0 * s2,
    }
}

/// Built-in certificate of a model; `eps` only enters the van der Pol constants.
pub fn builtin_certificate(sys: &System, eps: f64) -> Result<LyapunovCertificate, VerifyError> {
    match sys.name() {
        "example41" | "example42" => Ok(polynomial_certificate(sys)),
        "vdp" => van_der_pol_certificate(eps),
        "diode" => {
            let noise = sys.scalar_noise().expect("diode has scalar noise");
            let c1 = diode_growth_constant(noise)
                .ok_or_else(|| VerifyError::Unsupported { what: "growth constant for custom noise", model: "diode".into() })?;
            diode_certificate(sys, c1)
        }
        "mayleonard" => {
            let (alpha, beta) = sys.competition().expect("competition model");
            Ok(competition_certificate(alpha, beta))
        }
        "figure8" => Ok(figure_eight_certificate(sys)),
        other => Err(VerifyError::Unsupported { what: "certificate", model: other.into() }),
    }
}

/// Noise level at which the asymptotic conditions are checked by default.
pub fn default_check_noise(sys: &System) -> f64 {
    match sys.name() {
        "vdp" => 0.1,
        "mayleonard" => 0.02,
        _ => 0.05,
    }
}

/// Box and shell each model's conditions are documented on.
pub fn builtin_regions(sys: &System) -> (SampleRegion, SampleRegion) {
    match sys.name() {
        "mayleonard" => {
            let (alpha, beta) = sys.competition().expect("competition model");
            let s = 1.0 + alpha + beta;
            let inner = 1.0 / (2f64.sqrt() * s);
            (
                SampleRegion::Box { lower: vec![0.05; 3], upper: vec![3.0; 3] },
                SampleRegion::shell(vec![1.0 / s; 3], inner, 50.0),
            )
        }
        "example41" | "example42" => (SampleRegion::square(5.0, 2), SampleRegion::shell(vec![0.0; 2], 5.0, 50.0)),
        "vdp" => (SampleRegion::square(4.0, 2), SampleRegion::shell(vec![0.0; 2], 5.0, 50.0)),
        _ => (SampleRegion::square(3.0, 2), SampleRegion::shell(vec![0.0; 2], 5.0, 50.0)),
    }
}

/// All checks of one built-in model on its documented regions.
pub fn builtin_sweep(sys: &System, eps: Option<f64>, samples: usize) -> Result<Vec<VerificationReport>, VerifyError> {
    let (bx, shell) = builtin_regions(sys);
    sweep(sys, eps, samples, &bx, &shell)
}

/// All checks of one built-in model, local ones on `bx` and asymptotic ones on `shell`.
pub fn sweep(sys: &System, eps: Option<f64>, samples: usize, bx: &SampleRegion, shell: &SampleRegion) -> Result<Vec<VerificationReport>, VerifyError> {
    let eps = eps.unwrap_or_else(|| default_check_noise(sys));
    let cert = builtin_certificate(sys, eps)?;
    let (bx, shell) = (bx.clone(), shell.clone());
    let SampleRegion::Shell { center, inner, outer } = &shell else {
        return Err(VerifyError::InvalidArgument("asymptotic checks need a shell region".into()));
    };
    let radii: Vec<f64> = (0..6).map(|k| inner + (outer - inner) * k as f64 / 5.0).collect();
    let mut out = vec![
        check_monotonicity(sys, &bx, 0.5, samples, 1e6)?,
        check_certificate_derivatives(sys, &cert, &bx, samples)?,
        check_radial_growth(sys, &cert, center, &radii, samples / 4)?,
        check_lyapunov(sys, &cert, &bx, samples)?,
        check_lyapunov(sys, &cert, &shell, samples)?,
        check_dissipativity(sys, &cert, eps, &shell, samples)?,
    ];
    match sys.name() {
        "example41" | "example42" => {
            let sign = if sys.name() == "example41" { 1.0 } else { -1.0 };
            out.push(check_inequality("trace closed form", sys, &bx, samples, 0.0, |x| {
                let closed = 3.0 * x[0] * x[0] + 2.0 * sign * x[0] - 1.0;
                1e-10 - (cert.terms(sys, x).trace - closed).abs()
            })?);
            out.push(check_inequality("trace above -2", sys, &SampleRegion::square(50.0, 2), samples, 0.0, |x| {
                cert.terms(sys, x).trace + 2.0
            })?);
        }
        "vdp" => {
            out.push(check_inequality("drift identity", sys, &bx, samples, 0.0, |x| {
                1e-10 * (1.0 + x[0].powi(4)) - (cert.terms(sys, x).lie - van_der_pol_lie_derivative(x)).abs()
            })?);
            out.push(check_inequality("quartic decay", sys, &shell, samples, 0.0, |x| {
                let t = cert.terms(sys, x);
                let bound = -0.2 * (x[0].powi(4) + x[1] * x[1]);
                let j = t.j(cert.theta, cert.eta).unwrap_or(f64::INFINITY);
                (bound - j).min(bound - t.generator(eps))
            })?);
            out.push(check_growth_bound(sys, GrowthBound::QuarticFirst, &bx, samples)?);
        }
        "diode" => {
            let r = check_inequality("decay rate", sys, &shell, samples, 0.0, |x| {
                -cert.terms(sys, x).generator(eps) / (x[1] * x[1] + x[0].powi(4))
            })?;
            let k = r.worst_margin;
            out.push(r.with_statistic("k", k));
            out.push(check_growth_bound(sys, GrowthBound::QuarticFirst, &bx, samples)?);
        }
        "mayleonard" => {
            let (alpha, beta) = sys.competition().expect("competition model");
            let pd = check_positive_definite(alpha, beta);
            let k = pd.worst_margin;
            out.push(pd);
            let s = 1.0 + alpha + beta;
            let e = 1.0 / s;
            let c1 = check_growth_bound(sys, GrowthBound::Constant, &bx, samples)?;
            let c1_value = c1.statistic.as_ref().map_or(f64::NAN, |s| s.value);
            out.push(c1);
            // with k = λ_min the bound is attained along an eigenvector, so half of it
            // leaves a strict margin away from E
            out.push(check_inequality("quadratic decay", sys, &shell, samples, 0.0, |x| {
                let dist2: f64 = x.iter().map(|v| (v - e).powi(2)).sum();
                -0.5 * k * dist2 + eps * c1_value / (2.0 * s) - cert.terms(sys, x).generator(eps)
            })?);
            let gamma = k / (4.0 * s * s);
            out.push(
                check_inequality("decay outside ball", sys, &shell, samples, 0.0, |x| -gamma - cert.terms(sys, x).generator(eps))?
                    .with_statistic("gamma", gamma),
            );
        }
        "figure8" => out.push(check_growth_bound(sys, GrowthBound::QuarticCubeRoot, &bx, samples)?),
        _ => {}
    }
    Ok(out)
}

//! Versioned JSON experiment configuration.

use std::path::{Path, PathBuf};

use qplab_core::models::{build_system, ParamMap, System};
use qplab_core::sde::{Grid, Scheme, SimConfig};
use qplab_core::verify::SampleRegion;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: SystemConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quasipotential: Option<QuasipotentialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wgraph: Option<WGraphConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default)]
    pub params: ParamMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub epsilons: Vec<f64>,
    pub step: f64,
    pub horizon: f64,
    /// Fraction of the horizon discarded before recording.
    #[serde(default = "default_burn_in_fraction")]
    pub burn_in_fraction: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub replicas: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    pub grid: Grid,
    pub radii: Vec<f64>,
    /// Adds the numerically located periodic orbit of a planar model as class `cycle`.
    #[serde(default)]
    pub locate_cycle: bool,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

fn default_burn_in_fraction() -> f64 {
    0.1
}

fn default_checkpoint_every() -> u64 {
    1_000_000
}

impl SimulateConfig {
    pub fn sim_config(&self, epsilon: f64, seed: u64) -> SimConfig {
        SimConfig {
            epsilon,
            step: self.step,
            horizon: self.horizon,
            burn_in: self.burn_in_fraction * self.horizon,
            seed,
            scheme: self.scheme,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixSource {
    Analytic,
    Numeric,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasipotentialConfig {
    pub method: MatrixSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default = "default_durations")]
    pub durations: Vec<f64>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_class_samples")]
    pub class_samples: usize,
    /// Replace each numeric entry by its cheapest chain through other classes.
    #[serde(default = "default_true")]
    pub closure: bool,
}

fn default_durations() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0, 32.0]
}

fn default_nodes() -> usize {
    300
}

fn default_class_samples() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WGraphConfig {
    pub source: MatrixSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Noise level of the asymptotic checks; model default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Keep only checks whose name starts with one of these.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub local_region: Option<SampleRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shell: Option<SampleRegion>,
}

fn default_samples() -> usize {
    4000
}

pub const CHECK_NAMES: [&str; 14] = [
    "monotonicity",
    "derivatives",
    "radial growth",
    "lyapunov",
    "dissipativity",
    "trace closed form",
    "trace above -2",
    "drift identity",
    "quartic decay",
    "growth bound",
    "decay rate",
    "positive definite",
    "quadratic decay",
    "decay outside ball",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    #[serde(default = "default_durations")]
    pub durations: Vec<f64>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        // file paths are relative to the config
        let base = path.parent().unwrap_or(Path::new("."));
        for file in [cfg.quasipotential.as_mut().and_then(|q| q.file.as_mut()), cfg.wgraph.as_mut().and_then(|w| w.file.as_mut())]
            .into_iter()
            .flatten()
        {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn build_system(&self) -> Result<System, CliError> {
        Ok(build_system(&self.system.name, &self.system.params)?)
    }

    /// Checks everything the given command needs before any computation starts.
    pub fn validate(&self, command: crate::Command) -> Result<System, CliError> {
        use crate::Command;
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        let sys = self.build_system()?;
        match command {
            Command::Simulate => {
                let sim = self.simulate.as_ref().ok_or_else(|| invalid("missing `simulate` block"))?;
                if sim.epsilons.is_empty() {
                    return Err(invalid("simulate.epsilons is empty"));
                }
                if sim.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                    return Err(invalid("simulate.epsilons must be positive"));
                }
                if sim.replicas == 0 {
                    return Err(invalid("simulate.replicas must be at least 1"));
                }
                if sim.radii.is_empty() || sim.radii.iter().any(|r| !(*r > 0.0)) {
                    return Err(invalid("simulate.radii must be a nonempty list of positive radii"));
                }
                if !(0.0..1.0).contains(&sim.burn_in_fraction) {
                    return Err(invalid("simulate.burn_in_fraction must lie in [0, 1)"));
                }
                if sim.checkpoint_every == 0 {
                    return Err(invalid("simulate.checkpoint_every must be positive"));
                }
                Grid::new(sim.grid.lower.clone(), sim.grid.upper.clone(), sim.grid.bins.clone())?;
                if sim.grid.dim() != sys.dim() {
                    return Err(invalid("simulate.grid dimension differs from the model"));
                }
                if let Some(x0) = &sim.initial_state {
                    sys.check_state(x0)?;
                }
                if sim.locate_cycle && sys.dim() != 2 {
                    return Err(invalid("simulate.locate_cycle needs a planar model"));
                }
                for &e in &sim.epsilons {
                    sim.sim_config(e, self.seed).validate()?;
                }
            }
            Command::Quasipotential => {
                let q = self.quasipotential.as_ref().ok_or_else(|| invalid("missing `quasipotential` block"))?;
                validate_source(q.method, q.file.as_deref(), &sys)?;
                if q.durations.is_empty() || q.durations.iter().any(|t| !(*t > 0.0)) {
                    return Err(invalid("quasipotential.durations must be positive and nonempty"));
                }
                if q.nodes < 8 {
                    return Err(invalid("quasipotential.nodes must be at least 8"));
                }
            }
            Command::WGraph => {
                let w = self.wgraph.as_ref().ok_or_else(|| invalid("missing `wgraph` block"))?;
                validate_source(w.source, w.file.as_deref(), &sys)?;
            }
            Command::Verify => {
                let v = self.verify.clone().unwrap_or_else(VerifyConfig::default);
                if v.samples == 0 {
                    return Err(invalid("verify.samples must be positive"));
                }
                if let Some(checks) = &v.checks {
                    if let Some(bad) = checks.iter().find(|c| !CHECK_NAMES.iter().any(|n| n.starts_with(c.as_str()) || c.starts_with(n))) {
                        return Err(invalid(format!("unknown check `{bad}`")));
                    }
                }
                if matches!(v.shell, Some(SampleRegion::Box { .. })) {
                    return Err(invalid("verify.shell must be a shell region"));
                }
            }
            Command::ActionMin => {
                let a = self.action.as_ref().ok_or_else(|| invalid("missing `action` block"))?;
                sys.check_state(&a.from)?;
                sys.check_state(&a.to)?;
                if a.durations.is_empty() || a.durations.iter().any(|t| !(*t > 0.0)) {
                    return Err(invalid("action.durations must be positive and nonempty"));
                }
                if a.nodes < 8 {
                    return Err(invalid("action.nodes must be at least 8"));
                }
            }
        }
        Ok(sys)
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { samples: default_samples(), eps: None, checks: None, local_region: None, shell: None }
    }
}

fn validate_source(source: MatrixSource, file: Option<&Path>, sys: &System) -> Result<(), CliError> {
    match source {
        MatrixSource::File if file.is_none() => Err(invalid("matrix source `file` needs a `file` path")),
        MatrixSource::Analytic if !sys.flags().decomposable => {
            Err(invalid(format!("analytic matrix needs a decomposable model, {} is not", sys.name())))
        }
        _ => Ok(()),
    }
}

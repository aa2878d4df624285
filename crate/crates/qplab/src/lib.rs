//! Experiment driver behind the `qplab` binary: reads a JSON config, runs one
//! command and writes CSV/JSON outputs plus a manifest into a directory.
//!
//! Outputs depend only on the effective config (including the seed), never on
//! the thread count or wall clock, so reruns are byte-identical.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qplab_core::action::{analytic_class_graph, class_quasipotential, quasipotential_estimate, ActionError, QpConfig};
use qplab_core::flow::{poincare_fixed_point, FlowError};
use qplab_core::models::{ClassShape, EquivalenceClass, ModelError, StateVector, System};
use qplab_core::sde::{neighborhood_mass, run_into, OccupationAccumulator, SdeError, SimCheckpoint, SimConfig, Simulation};
use qplab_core::verify::{builtin_regions, sweep, VerificationReport, VerifyError};
use qplab_core::wgraph::{chain_closure, class_values, lambda_value, minimizing_set, ClassGraph, WGraphError, MAX_CLASSES};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use config::ExperimentConfig;
use config::{MatrixSource, QuasipotentialConfig, SimulateConfig, VerifyConfig};
use output::{content_hash, io_error, OutputDir};

/// Environment variable capping the worker threads when `--threads` is absent.
pub const THREADS_ENV: &str = "QPLAB_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    WGraph(#[from] WGraphError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Quasipotential,
    WGraph,
    Verify,
    ActionMin,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Quasipotential => "quasipotential",
            Self::WGraph => "wgraph",
            Self::Verify => "verify",
            Self::ActionMin => "action-min",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config_hash: String,
    /// A requested check failed or part of the computation errored.
    pub failed: bool,
    /// One line per failure, for the terminal.
    pub problems: Vec<String>,
    pub files: Vec<String>,
}

/// Loads, validates and runs one command.
pub fn run(command: Command, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    run_config(command, &cfg, &opts.out, thread_count(opts.threads)?)
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

/// Runs `command` on an already loaded config; `threads = 0` lets rayon decide.
pub fn run_config(command: Command, cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunSummary, CliError> {
    let sys = cfg.validate(command)?;
    let canonical = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    let hash = content_hash(canonical.as_bytes());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;

    let mut dir = OutputDir::create(out, hash.clone(), cfg.seed)?;
    // the effective config reproduces this directory when passed back to --config
    let config_path = out.join("config.json");
    fs::write(&config_path, &canonical).map_err(|e| io_error(&config_path, e))?;

    let problems = pool.install(|| match command {
        Command::Simulate => simulate(&sys, cfg, &mut dir),
        Command::Quasipotential => quasipotential(&sys, cfg, &mut dir),
        Command::WGraph => wgraph(&sys, cfg, &mut dir),
        Command::Verify => verify(&sys, cfg, &mut dir),
        Command::ActionMin => action_min(&sys, cfg, &mut dir),
    })?;
    let files = dir.finish(command.name())?.into_iter().map(|e| e.file).collect();
    Ok(RunSummary { config_hash: hash, failed: !problems.is_empty(), problems, files })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Serialize, Deserialize)]
struct ReplicaCheckpoint {
    config_hash: String,
    simulation: SimCheckpoint,
    accumulator: OccupationAccumulator,
}

#[derive(Debug, Serialize)]
struct MassEntry {
    epsilon: f64,
    class: String,
    rho: f64,
    mean: f64,
    /// Standard error over replicas; absent with a single replica.
    std_error: Option<f64>,
    replicas: usize,
}

#[derive(Debug, Serialize)]
struct ReplicaFailure {
    epsilon: f64,
    replica: u64,
    error: String,
}

/// Mean and standard error of the mean.
pub fn mean_and_error(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().fold(0.0, |a, v| a + v) / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Classes whose neighborhoods are measured, with the located cycle appended on request.
pub fn simulation_classes(sys: &System, locate_cycle: bool) -> Result<Vec<EquivalenceClass>, CliError> {
    let mut classes = sys.classes();
    if locate_cycle {
        let orbit = poincare_fixed_point(sys, 2.0, 1e-10)?;
        classes.push(EquivalenceClass { label: "cycle".into(), shape: ClassShape::Orbit { samples: orbit.samples.states } });
    }
    Ok(classes)
}

fn simulate(sys: &System, cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<Vec<String>, CliError> {
    let sim = cfg.simulate.as_ref().expect("validated");
    let classes = simulation_classes(sys, sim.locate_cycle)?;
    let x0 = sim.initial_state.clone().map(StateVector).unwrap_or_else(|| sys.default_initial_state());
    let checkpoints = dir.path().join("checkpoints");
    fs::create_dir_all(&checkpoints).map_err(|e| io_error(&checkpoints, e))?;

    let mut entries = Vec::new();
    let mut overflow = Vec::new();
    let mut failures = Vec::new();
    for (ei, &eps) in sim.epsilons.iter().enumerate() {
        let sim_cfg = sim.sim_config(eps, cfg.seed);
        let runs: Vec<Result<OccupationAccumulator, SdeError>> = (0..sim.replicas)
            .into_par_iter()
            .map(|r| {
                let path = checkpoints.join(format!("eps{ei}-replica{r}.json"));
                run_replica(sys, sim, &sim_cfg, &x0, r, &path, dir.config_hash())
            })
            .collect();

        let mut pooled = OccupationAccumulator::new(sim.grid.clone());
        let mut measures = Vec::new();
        for (r, run) in runs.into_iter().enumerate() {
            match run {
                Ok(acc) => {
                    pooled.merge(&acc)?;
                    measures.push(acc.finish());
                }
                Err(e) => failures.push(ReplicaFailure { epsilon: eps, replica: r as u64, error: e.to_string() }),
            }
        }
        if measures.is_empty() {
            continue;
        }
        for class in &classes {
            for &rho in &sim.radii {
                let masses =
                    measures.iter().map(|m| neighborhood_mass(sys, m, class, rho)).collect::<Result<Vec<_>, _>>()?;
                let (mean, std_error) = mean_and_error(&masses);
                entries.push(MassEntry { epsilon: eps, class: class.label.clone(), rho, mean, std_error, replicas: masses.len() });
            }
        }
        let pooled = pooled.finish();
        overflow.push(json!({ "epsilon": eps, "mass": pooled.overflow }));

        let mut csv = String::new();
        csv.push_str(&(1..=sys.dim()).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","));
        csv.push_str(",mass\n");
        for (k, m) in pooled.mass.iter().enumerate().filter(|(_, m)| **m > 0.0) {
            for c in pooled.grid.center(k) {
                csv.push_str(&format!("{c},"));
            }
            csv.push_str(&format!("{m}\n"));
        }
        dir.write_csv(&format!("occupation_eps{eps}.csv"), &csv)?;
    }
    // only empty if every checkpoint was consumed
    let _ = fs::remove_dir(&checkpoints);

    let problems = failures.iter().map(|f| format!("epsilon {} replica {}: {}", f.epsilon, f.replica, f.error)).collect();
    dir.write_json(
        "neighborhood_mass.json",
        &json!({
            "model": sys.name(),
            "initial_state": x0,
            "classes": classes.iter().map(|c| &c.label).collect::<Vec<_>>(),
            "entries": entries,
            "overflow": overflow,
            "failures": failures,
        }),
    )?;
    Ok(problems)
}

/// One replica, resumed from `path` when a matching checkpoint is there.
fn run_replica(
    sys: &System,
    sim: &SimulateConfig,
    sim_cfg: &SimConfig,
    x0: &StateVector,
    replica: u64,
    path: &Path,
    config_hash: &str,
) -> Result<OccupationAccumulator, SdeError> {
    let resumed = fs::read_to_string(path)
        .ok()
        .and_then(|text| serde_json::from_str::<ReplicaCheckpoint>(&text).ok())
        .filter(|c| c.config_hash == config_hash && c.simulation.config == *sim_cfg && c.simulation.replica == replica);
    let (mut run, mut acc) = match resumed {
        Some(c) => {
            log::info!("resuming replica {replica} at step {}", c.simulation.step);
            (Simulation::resume(sys, &c.simulation)?, c.accumulator)
        }
        None => (Simulation::new(sys, sim_cfg, x0, replica)?, OccupationAccumulator::new(sim.grid.clone())),
    };
    let result = loop {
        if let Err(e) = run_into(&mut run, &mut acc, sim.checkpoint_every) {
            break Err(e);
        }
        if run.finished() {
            break Ok(acc);
        }
        let snapshot =
            ReplicaCheckpoint { config_hash: config_hash.into(), simulation: run.checkpoint(), accumulator: acc.clone() };
        if let Err(e) = write_atomically(path, &snapshot) {
            log::warn!("checkpoint {} not written: {e}", path.display());
        }
    };
    let _ = fs::remove_file(path);
    result
}

fn write_atomically(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(value)?)?;
    fs::rename(tmp, path)
}

// ---------------------------------------------------------- quasipotential

#[derive(Debug, Clone, Serialize)]
pub struct EntryReport {
    pub from: String,
    pub to: String,
    pub value: Option<f64>,
    pub argmin_duration: Option<f64>,
    pub at_grid_edge: bool,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassSummary {
    pub class: String,
    #[serde(rename = "W")]
    pub w: Option<f64>,
    pub mass_exponent: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphAnalysis {
    pub classes: Vec<ClassSummary>,
    pub nu: Option<f64>,
    pub minimizing_set: Vec<String>,
    /// Absent with a single class.
    pub lambda: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// W values, minimizing set, Λ and mass exponents of a class graph.
pub fn analyze(graph: &ClassGraph) -> Result<GraphAnalysis, CliError> {
    if graph.len() > MAX_CLASSES {
        return Err(WGraphError::TooLarge(graph.len()).into());
    }
    if graph.len() == 1 {
        return Ok(GraphAnalysis {
            classes: vec![ClassSummary { class: graph.labels[0].clone(), w: Some(0.0), mass_exponent: Some(0.0) }],
            nu: Some(0.0),
            minimizing_set: graph.labels.clone(),
            lambda: None,
        });
    }
    let values = class_values(graph)?;
    let (nu, set) = minimizing_set(graph)?;
    let classes = graph
        .labels
        .iter()
        .zip(&values)
        .map(|(label, &w)| ClassSummary { class: label.clone(), w: finite(w), mass_exponent: finite(w - nu) })
        .collect();
    Ok(GraphAnalysis {
        classes,
        nu: finite(nu),
        minimizing_set: set.into_iter().map(|i| graph.labels[i].clone()).collect(),
        lambda: finite(lambda_value(graph)?),
    })
}

pub struct ClassMatrix {
    /// Entries as estimated, before any chain closure.
    pub raw: ClassGraph,
    pub graph: ClassGraph,
    pub entries: Vec<EntryReport>,
}

/// Numeric class-to-class estimates, one parallel task per ordered pair.
pub fn numeric_class_matrix(sys: &System, q: &QuasipotentialConfig) -> Result<ClassMatrix, CliError> {
    let classes = sys.classes();
    let l = classes.len();
    let qp = QpConfig { durations: q.durations.clone(), nodes: q.nodes, class_samples: q.class_samples, ..QpConfig::default() };
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|i| (0..l).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let entries: Vec<EntryReport> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (from, to) = (classes[i].label.clone(), classes[j].label.clone());
            match class_quasipotential(sys, &classes[i], &classes[j], &qp) {
                Ok(est) => EntryReport {
                    from,
                    to,
                    value: Some(est.value),
                    argmin_duration: Some(est.argmin_duration),
                    at_grid_edge: est.at_grid_edge,
                    converged: est.converged,
                    error: None,
                },
                Err(e) => EntryReport {
                    from,
                    to,
                    value: None,
                    argmin_duration: None,
                    at_grid_edge: false,
                    converged: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut costs = vec![vec![None; l]; l];
    for (i, row) in costs.iter_mut().enumerate() {
        row[i] = Some(0.0);
    }
    for (&(i, j), e) in pairs.iter().zip(&entries) {
        costs[i][j] = e.value.map(|v| v.max(0.0));
    }
    let raw = ClassGraph::new(classes.into_iter().map(|c| c.label).collect(), costs, "numeric")?;
    let graph = if q.closure { chain_closure(&raw) } else { raw.clone() };
    Ok(ClassMatrix { raw, graph, entries })
}

fn load_graph(path: &Path) -> Result<ClassGraph, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let graph: ClassGraph =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    graph.validate()?;
    Ok(graph)
}

fn class_matrix(sys: &System, source: MatrixSource, file: Option<&Path>, q: &QuasipotentialConfig) -> Result<ClassMatrix, CliError> {
    match source {
        MatrixSource::Numeric => numeric_class_matrix(sys, q),
        MatrixSource::Analytic => {
            let graph = analytic_class_graph(sys)?;
            Ok(ClassMatrix { raw: graph.clone(), graph, entries: Vec::new() })
        }
        MatrixSource::File => {
            let graph = load_graph(file.expect("validated"))?;
            Ok(ClassMatrix { raw: graph.clone(), graph, entries: Vec::new() })
        }
    }
}

fn entry_problems(entries: &[EntryReport]) -> Vec<String> {
    entries
        .iter()
        .filter_map(|e| e.error.as_ref().map(|err| format!("entry {} -> {}: {err}", e.from, e.to)))
        .collect()
}

fn warn_entries(entries: &[EntryReport]) {
    for e in entries.iter().filter(|e| e.error.is_none()) {
        if !e.converged {
            log::warn!("entry {} -> {} did not converge", e.from, e.to);
        }
        if e.at_grid_edge {
            log::warn!("entry {} -> {} is minimal at the edge of the duration grid", e.from, e.to);
        }
    }
}

fn quasipotential(sys: &System, cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<Vec<String>, CliError> {
    let q = cfg.quasipotential.as_ref().expect("validated");
    let m = class_matrix(sys, q.method, q.file.as_deref(), q)?;
    warn_entries(&m.entries);
    let analysis = analyze(&m.graph)?;
    dir.write_json(
        "quasipotential.json",
        &json!({
            "model": sys.name(),
            "method": q.method,
            "labels": m.graph.labels,
            "V": m.graph.costs,
            "raw": m.raw.costs,
            "entries": m.entries,
            "analysis": analysis,
        }),
    )?;
    dir.write_csv("quasipotential.csv", &matrix_csv(&m.graph))?;
    Ok(entry_problems(&m.entries))
}

fn matrix_csv(graph: &ClassGraph) -> String {
    let mut csv = format!("from,{}\n", graph.labels.join(","));
    for (label, row) in graph.labels.iter().zip(&graph.costs) {
        csv.push_str(label);
        for v in row {
            match v {
                Some(v) => csv.push_str(&format!(",{v}")),
                None => csv.push_str(",inf"),
            }
        }
        csv.push('\n');
    }
    csv
}

fn wgraph(sys: &System, cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<Vec<String>, CliError> {
    let w = cfg.wgraph.as_ref().expect("validated");
    let defaults = QuasipotentialConfig {
        method: MatrixSource::Numeric,
        file: None,
        durations: vec![2.0, 4.0, 8.0, 16.0, 32.0],
        nodes: 300,
        class_samples: 4,
        closure: true,
    };
    let q = cfg.quasipotential.clone().unwrap_or(defaults);
    let m = class_matrix(sys, w.source, w.file.as_deref(), &q)?;
    warn_entries(&m.entries);
    let analysis = analyze(&m.graph)?;
    dir.write_json(
        "wgraph.json",
        &json!({
            "model": sys.name(),
            "source": w.source,
            "labels": m.graph.labels,
            "V": m.graph.costs,
            "analysis": analysis,
        }),
    )?;
    Ok(entry_problems(&m.entries))
}

// ------------------------------------------------------------------ verify

/// Built-in checks, restricted to the configured name prefixes.
pub fn verify_reports(sys: &System, v: &VerifyConfig) -> Result<Vec<VerificationReport>, CliError> {
    let (bx, shell) = builtin_regions(sys);
    let bx = v.local_region.clone().unwrap_or(bx);
    let shell = v.shell.clone().unwrap_or(shell);
    let mut reports = sweep(sys, v.eps, v.samples, &bx, &shell)?;
    if let Some(keep) = &v.checks {
        reports.retain(|r| keep.iter().any(|k| r.check.starts_with(k.as_str())));
    }
    Ok(reports)
}

fn verify(sys: &System, cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<Vec<String>, CliError> {
    let v = cfg.verify.clone().unwrap_or_default();
    let reports = verify_reports(sys, &v)?;
    let text: String = reports.iter().map(|r| format!("{r}\n")).collect();
    dir.write_text("verify.txt", &text)?;
    dir.write_json("verify.json", &json!({ "model": sys.name(), "reports": reports }))?;
    Ok(reports.iter().filter(|r| !r.pass).map(|r| r.to_string()).collect())
}

// -------------------------------------------------------------- action-min

fn action_min(sys: &System, cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<Vec<String>, CliError> {
    let a = cfg.action.as_ref().expect("validated");
    let qp = QpConfig { durations: a.durations.clone(), nodes: a.nodes, ..QpConfig::default() };
    let est = quasipotential_estimate(sys, &StateVector::new(a.from.clone()), &StateVector::new(a.to.clone()), &qp)?;
    if !est.converged {
        log::warn!("action minimization did not converge");
    }
    if est.at_grid_edge {
        log::warn!("minimum at the edge of the duration grid");
    }
    if let Some(path) = &est.path {
        dir.write_csv("path.csv", &path.states().to_csv())?;
    }
    let per_duration: Vec<BTreeMap<&str, f64>> =
        est.per_duration.iter().map(|&(t, v)| BTreeMap::from([("duration", t), ("action", v)])).collect();
    dir.write_json(
        "action.json",
        &json!({
            "model": sys.name(),
            "from": a.from,
            "to": a.to,
            "value": est.value,
            "argmin_duration": est.argmin_duration,
            "per_duration": per_duration,
            "at_grid_edge": est.at_grid_edge,
            "converged": est.converged,
        }),
    )?;
    Ok(Vec::new())
}

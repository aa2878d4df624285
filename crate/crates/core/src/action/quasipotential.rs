//! Quasipotential estimates: minimum action over a grid of durations, and
//! closed forms for decomposable drifts `b = -∇U + l`.

use super::{minimize_action, ActionError, MinimizeOptions, OptimizedPath, PathInit};
use crate::flow::{cycle_measure, cycle_measure_around};
use crate::models::{ClassShape, Connection, EquivalenceClass, StateVector, System};
use crate::optim::DescentOptions;
use crate::wgraph::{chain_closure, ClassGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct QpConfig {
    /// Candidate durations, searched in increasing order.
    pub durations: Vec<f64>,
    /// Interior nodes per path.
    pub nodes: usize,
    /// Points sampled on each non-point class.
    pub class_samples: usize,
    pub descent: DescentOptions,
    /// Also start from the time-reversed extremal flow on decomposable models.
    pub extremal_start: bool,
}

impl Default for QpConfig {
    fn default() -> Self {
        Self {
            durations: vec![2.0, 4.0, 8.0, 16.0, 32.0],
            nodes: 300,
            class_samples: 4,
            descent: DescentOptions::default(),
            extremal_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpEstimate {
    pub value: f64,
    /// Smallest duration attaining the minimum.
    pub argmin_duration: f64,
    /// `(T, best action at T)` for every duration tried.
    pub per_duration: Vec<(f64, f64)>,
    /// The minimum sits at the first or last duration; the grid may need extending.
    pub at_grid_edge: bool,
    /// Every optimization behind the reported minimum converged.
    pub converged: bool,
    pub from: StateVector,
    pub to: StateVector,
    pub path: Option<OptimizedPath>,
}

/// Minimum over `cfg.durations` of the locally minimized action from `x` to `y`.
/// Each duration is started from a straight line and from the previous
/// duration's minimizer; ties keep the smaller duration.
pub fn quasipotential_estimate(
    sys: &System,
    x: &StateVector,
    y: &StateVector,
    cfg: &QpConfig,
) -> Result<QpEstimate, ActionError> {
    if cfg.durations.is_empty() {
        return Err(ActionError::InvalidArgument("duration grid is empty".into()));
    }
    let mut durations = cfg.durations.clone();
    durations.sort_by(f64::total_cmp);
    if x == y {
        return Ok(QpEstimate {
            value: 0.0,
            argmin_duration: durations[0],
            per_duration: durations.iter().map(|&t| (t, 0.0)).collect(),
            at_grid_edge: false,
            converged: true,
            from: x.clone(),
            to: y.clone(),
            path: None,
        });
    }
    let mut best: Option<(f64, f64, bool, OptimizedPath)> = None;
    let mut per_duration = Vec::with_capacity(durations.len());
    let mut previous: Option<OptimizedPath> = None;
    for &t in &durations {
        let mut inits = vec![PathInit::Linear];
        if let Some(p) = &previous {
            inits.push(PathInit::Given(p.states().with_duration(t)?));
        }
        if cfg.extremal_start && sys.flags().decomposable {
            inits.push(PathInit::Extremal);
        }
        let mut local: Option<(f64, bool, OptimizedPath)> = None;
        for init in inits {
            let opts = MinimizeOptions { descent: cfg.descent, init };
            let run = match minimize_action(sys, x, y, t, cfg.nodes, &opts) {
                Ok(r) => r,
                Err(ActionError::OutsideDomain(_) | ActionError::UndefinedObjective | ActionError::Flow(_)) => continue,
                Err(e) => return Err(e),
            };
            if local.as_ref().map_or(true, |(v, _, _)| run.action.value < *v) {
                local = Some((run.action.value, run.converged, run.path));
            }
        }
        let Some((value, converged, path)) = local else {
            return Err(ActionError::UndefinedObjective);
        };
        per_duration.push((t, value));
        if best.as_ref().map_or(true, |(v, _, _, _)| value < *v) {
            best = Some((value, t, converged, path.clone()));
        }
        previous = Some(path);
    }
    let (value, argmin, converged, path) = best.expect("grid is nonempty");
    let at_grid_edge = durations.len() > 1 && (argmin == durations[0] || argmin == durations[durations.len() - 1]);
    if at_grid_edge {
        log::warn!("minimum action at grid edge T = {argmin}; consider extending the duration grid");
    }
    Ok(QpEstimate {
        value,
        argmin_duration: argmin,
        per_duration,
        at_grid_edge,
        converged,
        from: x.clone(),
        to: y.clone(),
        path: Some(path),
    })
}

/// Representative states of a class: the point itself, or `samples` points
/// spread along a curve.
pub fn class_anchor_points(sys: &System, class: &EquivalenceClass, samples: usize) -> Result<Vec<StateVector>, ActionError> {
    let samples = samples.max(1);
    let spread = |points: &[StateVector]| -> Vec<StateVector> {
        (0..samples).map(|k| points[k * points.len() / samples].clone()).collect()
    };
    match &class.shape {
        ClassShape::Point { at } => Ok(vec![at.clone()]),
        ClassShape::Level { level, center } => {
            let m = match center {
                Some(c) => cycle_measure_around(sys, *level, 64, c.as_slice())?,
                None => cycle_measure(sys, *level, 64)?,
            };
            Ok(spread(&m.points))
        }
        ClassShape::Band { lo, hi } => Ok(spread(&cycle_measure(sys, 0.5 * (lo + hi), 64)?.points)),
        ClassShape::Orbit { samples: pts } if !pts.is_empty() => Ok(spread(pts)),
        ClassShape::Orbit { .. } => Err(ActionError::InvalidArgument(format!("class {} has no samples", class.label))),
    }
}

/// Minimum of [`quasipotential_estimate`] over anchor points of two classes.
pub fn class_quasipotential(
    sys: &System,
    from: &EquivalenceClass,
    to: &EquivalenceClass,
    cfg: &QpConfig,
) -> Result<QpEstimate, ActionError> {
    let sources = class_anchor_points(sys, from, cfg.class_samples)?;
    let targets = class_anchor_points(sys, to, cfg.class_samples)?;
    let mut best: Option<QpEstimate> = None;
    for x in &sources {
        for y in &targets {
            let est = quasipotential_estimate(sys, x, y, cfg)?;
            if best.as_ref().map_or(true, |b| est.value < b.value) {
                best = Some(est);
            }
        }
    }
    Ok(best.expect("every class has an anchor point"))
}

/// `max(0, 2(U(y) - U(x)))`, attained along extremals between connected classes.
pub fn analytic_quasipotential(sys: &System, x: &StateVector, y: &StateVector) -> Result<f64, ActionError> {
    let ux = sys.potential(x.as_slice())?;
    let uy = sys.potential(y.as_slice())?;
    Ok((2.0 * (uy - ux)).max(0.0))
}

/// Class-to-class matrix of a decomposable model: direct connections cost
/// `0` downhill and `2ΔU` uphill, longer transitions follow the cheapest chain.
pub fn analytic_class_graph(sys: &System) -> Result<ClassGraph, ActionError> {
    let classes = sys.classes();
    let potentials = classes.iter().map(|c| sys.class_potential(c)).collect::<Result<Vec<_>, _>>()?;
    let l = classes.len();
    let mut costs = vec![vec![None; l]; l];
    for (i, row) in costs.iter_mut().enumerate() {
        row[i] = Some(0.0);
    }
    for (from, to, kind) in sys.connections()? {
        costs[from][to] = Some(match kind {
            Connection::Downhill => 0.0,
            Connection::Uphill => 2.0 * (potentials[to] - potentials[from]),
        });
    }
    let direct = ClassGraph::new(classes.into_iter().map(|c| c.label).collect(), costs, "analytic")
        .map_err(|e| ActionError::InvalidArgument(e.to_string()))?;
    Ok(chain_closure(&direct))
}

//! W-graphs on a finite set of recurrent classes.
//!
//! For `W ⊂ L = {0..l}`, a W-graph assigns every node outside `W` one arrow
//! to another node so that no cycles form; following arrows from any node ends
//! in `W`. With transition costs `V(i, j)` the graph cost is the sum over its
//! arrows, and `W(K_i)` is the cheapest `{i}`-graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest class count accepted by brute-force enumeration.
pub const MAX_CLASSES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WGraphError {
    #[error("{0} classes exceed the enumeration limit of {MAX_CLASSES}")]
    TooLarge(usize),
    #[error("target set must satisfy 1 ≤ |W| < l, got |W| = {size} with l = {classes}")]
    InvalidTargetSize { size: usize, classes: usize },
    #[error("target index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("cost matrix must be square with one label per row")]
    Shape,
    #[error("cost V({0}, {1}) = {2} is negative or NaN")]
    InvalidEntry(usize, usize, f64),
}

/// Transition costs between classes; `None` marks an absent edge (infinite cost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGraph {
    pub labels: Vec<String>,
    #[serde(rename = "V")]
    pub costs: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    pub provenance: String,
}

impl ClassGraph {
    pub fn new(labels: Vec<String>, costs: Vec<Vec<Option<f64>>>, provenance: impl Into<String>) -> Result<Self, WGraphError> {
        let g = Self { labels, costs, provenance: provenance.into() };
        g.validate()?;
        Ok(g)
    }

    pub fn from_dense(labels: Vec<String>, costs: &[Vec<f64>], provenance: impl Into<String>) -> Result<Self, WGraphError> {
        let costs = costs
            .iter()
            .map(|row| row.iter().map(|&v| if v.is_infinite() { None } else { Some(v) }).collect())
            .collect();
        Self::new(labels, costs, provenance)
    }

    pub fn validate(&self) -> Result<(), WGraphError> {
        let l = self.labels.len();
        if self.costs.len() != l || self.costs.iter().any(|r| r.len() != l) {
            return Err(WGraphError::Shape);
        }
        for (i, row) in self.costs.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    if !(*v >= 0.0) {
                        return Err(WGraphError::InvalidEntry(i, j, *v));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cost(&self, i: usize, j: usize) -> Option<f64> {
        self.costs[i][j]
    }
}

/// Arrow assignment: `arrows[i] = Some(j)` for `i ∉ W`, `None` for `i ∈ W`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WGraph {
    pub arrows: Vec<Option<usize>>,
}

impl WGraph {
    /// Sum of arrow costs, `None` if an arrow uses an absent edge.
    pub fn cost(&self, graph: &ClassGraph) -> Option<f64> {
        self.arrows
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|j| (i, j)))
            .try_fold(0.0, |acc, (i, j)| graph.cost(i, j).map(|c| acc + c))
    }
}

fn check_targets(l: usize, targets: &BTreeSet<usize>) -> Result<(), WGraphError> {
    if l > MAX_CLASSES {
        return Err(WGraphError::TooLarge(l));
    }
    if targets.is_empty() || targets.len() >= l {
        return Err(WGraphError::InvalidTargetSize { size: targets.len(), classes: l });
    }
    if let Some(&bad) = targets.iter().find(|&&i| i >= l) {
        return Err(WGraphError::IndexOutOfRange { index: bad, classes: l });
    }
    Ok(())
}

/// Lazily enumerates every W-graph on `l` nodes with target set `targets`.
pub fn enumerate_wgraphs(l: usize, targets: &BTreeSet<usize>) -> Result<WGraphIter, WGraphError> {
    check_targets(l, targets)?;
    let free: Vec<usize> = (0..l).filter(|i| !targets.contains(i)).collect();
    Ok(WGraphIter { l, choice: vec![0; free.len()], free, done: false })
}

/// Iterator returned by [`enumerate_wgraphs`].
#[derive(Debug, Clone)]
pub struct WGraphIter {
    l: usize,
    free: Vec<usize>,
    /// Per free node, index into the `l - 1` other nodes.
    choice: Vec<usize>,
    done: bool,
}

impl WGraphIter {
    fn current(&self) -> Vec<Option<usize>> {
        let mut arrows = vec![None; self.l];
        for (&node, &c) in self.free.iter().zip(&self.choice) {
            arrows[node] = Some(if c < node { c } else { c + 1 });
        }
        arrows
    }

    fn advance(&mut self) {
        for c in self.choice.iter_mut() {
            *c += 1;
            if *c < self.l - 1 {
                return;
            }
            *c = 0;
        }
        self.done = true;
    }
}

/// True when following arrows from every node terminates.
fn acyclic(arrows: &[Option<usize>]) -> bool {
    let l = arrows.len();
    (0..l).all(|start| {
        let mut node = start;
        for _ in 0..=l {
            match arrows[node] {
                None => return true,
                Some(next) => node = next,
            }
        }
        false
    })
}

impl Iterator for WGraphIter {
    type Item = WGraph;

    fn next(&mut self) -> Option<WGraph> {
        while !self.done {
            let arrows = self.current();
            self.advance();
            if acyclic(&arrows) {
                return Some(WGraph { arrows });
            }
        }
        None
    }
}

/// Cheapest W-graph cost; `f64::INFINITY` if every W-graph uses an absent edge.
pub fn w_value(graph: &ClassGraph, targets: &BTreeSet<usize>) -> Result<f64, WGraphError> {
    graph.validate()?;
    Ok(enumerate_wgraphs(graph.len(), targets)?
        .filter_map(|g| g.cost(graph))
        .fold(f64::INFINITY, f64::min))
}

/// `W(K_i)` for every class.
pub fn class_values(graph: &ClassGraph) -> Result<Vec<f64>, WGraphError> {
    (0..graph.len()).map(|i| w_value(graph, &BTreeSet::from([i]))).collect()
}

/// Relative tolerance for ties among the `W(K_i)`.
const TIE: f64 = 1e-12;

/// `(ν, L₀)`: the minimal class value and the classes attaining it.
pub fn minimizing_set(graph: &ClassGraph) -> Result<(f64, BTreeSet<usize>), WGraphError> {
    let values = class_values(graph)?;
    let nu = values.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE * nu.abs().max(1.0);
    let set = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= nu + slack)
        .map(|(i, _)| i)
        .collect();
    Ok((nu, set))
}

/// `Λ = ν - min over pairs {i, j} of the cheapest {i, j}-graph`.
pub fn lambda_value(graph: &ClassGraph) -> Result<f64, WGraphError> {
    let (nu, _) = minimizing_set(graph)?;
    let l = graph.len();
    let mut best = f64::INFINITY;
    for i in 0..l {
        for j in i + 1..l {
            // with two classes the only {i, j}-graph has no arrows
            let cost = if l == 2 { 0.0 } else { w_value(graph, &BTreeSet::from([i, j]))? };
            best = best.min(cost);
        }
    }
    Ok(nu - best)
}

/// Exponent `W(K_i) - ν` of the small-noise mass of class `i`.
pub fn mass_exponent(graph: &ClassGraph, class: usize) -> Result<f64, WGraphError> {
    if class >= graph.len() {
        return Err(WGraphError::IndexOutOfRange { index: class, classes: graph.len() });
    }
    let values = class_values(graph)?;
    let nu = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(values[class] - nu)
}

/// Shortest-chain closure `min over k of V(i,k) + V(k,j)` (Floyd–Warshall).
pub fn chain_closure(graph: &ClassGraph) -> ClassGraph {
    let l = graph.len();
    let mut d: Vec<Vec<f64>> = (0..l)
        .map(|i| (0..l).map(|j| if i == j { 0.0 } else { graph.cost(i, j).unwrap_or(f64::INFINITY) }).collect())
        .collect();
    for k in 0..l {
        for i in 0..l {
            for j in 0..l {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    ClassGraph {
        labels: graph.labels.clone(),
        costs: d.into_iter().map(|r| r.into_iter().map(|v| v.is_finite().then_some(v)).collect()).collect(),
        provenance: graph.provenance.clone(),
    }
}

//! Limited-memory quasi-Newton descent with Armijo backtracking.
//!
//! Every accepted iterate strictly decreases the objective. With `memory = 0`
//! the direction is the negative gradient, i.e. plain gradient descent.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub max_iter: usize,
    /// Stop when the objective drops by less than `ftol·max(|f|, 1)` over `patience` iterations.
    pub ftol: f64,
    pub patience: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub gtol: f64,
    pub memory: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self { max_iter: 20_000, ftol: 1e-13, patience: 20, gtol: 1e-11, memory: 12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns `None` where the objective is undefined.
pub fn minimize(
    x0: &[f64],
    mut f: impl FnMut(&[f64], &mut [f64]) -> Option<f64>,
    opts: DescentOptions,
) -> Option<DescentResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g)?;
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut stall = 0;
    for iter in 1..=opts.max_iter {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= opts.gtol {
            return Some(DescentResult { x, value: fx, iterations: iter - 1, converged: true, history });
        }
        // two-loop recursion
        dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -dot(&g, &g);
        }
        let mut step = if pairs.is_empty() { 1.0 / dot(&g, &g).sqrt().max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            trial.iter_mut().zip(&x).zip(&dir).for_each(|((t, xi), di)| *t = xi + step * di);
            if let Some(ft) = f(&trial, &mut g_trial) {
                if ft <= fx + 1e-4 * step * slope && ft < fx {
                    accepted = Some(ft);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            if pairs.is_empty() {
                // no decrease even along the gradient: numerically stationary
                return Some(DescentResult { x, value: fx, iterations: iter, converged: true, history });
            }
            pairs.clear();
            continue;
        };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && opts.memory > 0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - ft;
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_trial);
        fx = ft;
        history.push(fx);
        if decrease <= opts.ftol * fx.abs().max(1.0) {
            stall += 1;
            if stall >= opts.patience {
                return Some(DescentResult { x, value: fx, iterations: iter, converged: true, history });
            }
        } else {
            stall = 0;
        }
    }
    Some(DescentResult { x, value: fx, iterations: opts.max_iter, converged: false, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (1.0 - x[0], x[1] - x[0] * x[0]);
            g[0] = -2.0 * a - 400.0 * x[0] * b;
            g[1] = 200.0 * b;
            Some(a * a + 100.0 * b * b)
        };
        let r = minimize(&[-1.2, 1.0], f, DescentOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn gradient_descent_variant_also_descends() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            g[1] = 20.0 * x[1];
            Some(x[0] * x[0] + 10.0 * x[1] * x[1])
        };
        let opts = DescentOptions { memory: 0, ..Default::default() };
        let r = minimize(&[3.0, -2.0], f, opts).unwrap();
        assert!(r.value < 1e-12);
        assert!(r.history.windows(2).all(|w| w[1] < w[0]));
    }
}

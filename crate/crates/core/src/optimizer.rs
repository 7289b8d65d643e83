//! Minimization of `Σ T[x_1..x_G] / (w_1[x_1] ... w_G[x_G])` over a product
//! of probability simplices, one per weight group.
//!
//! For a single group the minimum has the closed form `(Σ √Q_X)²` attained
//! at `q_X ∝ √Q_X`. With several groups each group's marginal problem is of
//! the single-group form, which gives an alternating scheme that never
//! increases the objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::TOL;

pub const DEFAULT_SEED: u64 = 0x7472_6565;

/// Upper limit on the number of simplex points `grid_check` enumerates.
pub const GRID_BUDGET: f64 = 1e7;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("grid of {points:.3e} points exceeds the budget of {budget:.0e}")]
    GridTooLarge { points: f64, budget: f64 },
    #[error("grid step must divide 1, got {0}")]
    BadStep(f64),
}

/// Block values laid out row-major, one axis per weight group.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl BlockTensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        BlockTensor { dims, data: vec![0.0; n] }
    }

    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "tensor shape mismatch");
        BlockTensor { dims, data }
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn get_mut(&mut self, idx: &[usize]) -> &mut f64 {
        let o = self.offset(idx);
        &mut self.data[o]
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (slot, &d) in idx.iter_mut().zip(&self.dims).rev() {
            *slot = offset % d;
            offset /= d;
        }
        idx
    }

    pub fn scaled(&self, c: f64) -> BlockTensor {
        BlockTensor { dims: self.dims.clone(), data: self.data.iter().map(|x| x * c).collect() }
    }

    /// Objective at the given weights. Cells whose weight product is zero
    /// are left out; see [`Minimum`].
    pub fn objective(&self, weights: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (o, &t) in self.data.iter().enumerate() {
            let idx = self.unravel(o);
            let denom: f64 = idx.iter().zip(weights).map(|(&i, w)| w[i]).product();
            if denom > 0.0 {
                total += t / denom;
            }
        }
        total
    }

    /// Group-`g` marginal with every other group's weights held fixed.
    fn marginal(&self, g: usize, weights: &[Vec<f64>]) -> Vec<f64> {
        let mut r = vec![0.0; self.dims[g]];
        for (o, &t) in self.data.iter().enumerate() {
            let idx = self.unravel(o);
            let denom: f64 =
                idx.iter().zip(weights).enumerate().filter(|(h, _)| *h != g).map(|(_, (&i, w))| w[i]).product();
            if denom > 0.0 {
                r[idx[g]] += t / denom;
            }
        }
        r
    }
}

/// A minimizing weight assignment. Labels whose block vanishes get weight
/// zero and drop out of the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub weights: Vec<Vec<f64>>,
    pub value: f64,
    /// False when alternating updates hit `max_iter` without settling.
    pub converged: bool,
    pub iterations: usize,
    /// Group updates that raised the objective; zero for a correct descent.
    pub descent_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Minimum(Minimum),
    /// Some block is negative, so the infimum over weights is `-∞`.
    NotViolable,
}

impl Outcome {
    pub fn value(&self) -> f64 {
        match self {
            Outcome::Minimum(m) => m.value,
            Outcome::NotViolable => f64::NEG_INFINITY,
        }
    }

    pub fn minimum(&self) -> Option<&Minimum> {
        match self {
            Outcome::Minimum(m) => Some(m),
            Outcome::NotViolable => None,
        }
    }
}

/// Closed-form minimum of `Σ_X Q_X / q_X` over the simplex.
pub fn optimize_single_group(q: &[f64]) -> Outcome {
    match closed_form(q) {
        Some((weights, value)) => Outcome::Minimum(Minimum {
            weights: vec![weights],
            value,
            converged: true,
            iterations: 0,
            descent_violations: 0,
        }),
        None => Outcome::NotViolable,
    }
}

fn closed_form(q: &[f64]) -> Option<(Vec<f64>, f64)> {
    if q.iter().any(|&x| x < -TOL) {
        return None;
    }
    let roots: Vec<f64> = q.iter().map(|&x| if x > TOL { x.sqrt() } else { 0.0 }).collect();
    let total: f64 = roots.iter().sum();
    if total == 0.0 {
        let n = q.len().max(1);
        return Some((vec![1.0 / n as f64; q.len()], 0.0));
    }
    Some((roots.iter().map(|r| r / total).collect(), total * total))
}

#[derive(Debug, Clone, Copy)]
pub struct AlternatingOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AlternatingOptions {
    fn default() -> Self {
        AlternatingOptions { tol: 1e-12, max_iter: 1000, restarts: 8, seed: DEFAULT_SEED }
    }
}

/// Minimizes over every group's simplex. Zero and one group are solved
/// exactly; more groups use alternating closed-form updates from a uniform
/// start plus `restarts` random starts, keeping the best.
pub fn minimize(tensor: &BlockTensor, opts: &AlternatingOptions) -> Outcome {
    match tensor.dims.len() {
        0 => Outcome::Minimum(Minimum {
            weights: vec![],
            value: tensor.data[0],
            converged: true,
            iterations: 0,
            descent_violations: 0,
        }),
        1 => optimize_single_group(&tensor.data),
        _ => optimize_multi_group(tensor, opts),
    }
}

pub fn optimize_multi_group(tensor: &BlockTensor, opts: &AlternatingOptions) -> Outcome {
    let runs: Vec<Outcome> = (0..=opts.restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                tensor.dims.iter().map(|&d| vec![1.0 / d as f64; d]).collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(r as u64);
                tensor.dims.iter().map(|&d| random_simplex(&mut rng, d)).collect()
            };
            alternate(tensor, start, opts)
        })
        .collect();

    let mut best: Option<Minimum> = None;
    let mut violations = 0;
    for run in runs {
        match run {
            Outcome::NotViolable => return Outcome::NotViolable,
            Outcome::Minimum(m) => {
                violations += m.descent_violations;
                if best.as_ref().is_none_or(|b| m.value < b.value) {
                    best = Some(m);
                }
            }
        }
    }
    let mut best = best.expect("at least one run");
    best.descent_violations = violations;
    Outcome::Minimum(best)
}

fn random_simplex(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn alternate(tensor: &BlockTensor, mut weights: Vec<Vec<f64>>, opts: &AlternatingOptions) -> Outcome {
    let mut value = tensor.objective(&weights);
    let mut descent_violations = 0;
    for iter in 1..=opts.max_iter {
        let before = value;
        for g in 0..tensor.dims.len() {
            let r = tensor.marginal(g, &weights);
            let Some((w, _)) = closed_form(&r) else {
                return Outcome::NotViolable;
            };
            weights[g] = w;
            let next = tensor.objective(&weights);
            if next > value + 1e-12 * value.abs().max(1.0) {
                descent_violations += 1;
            }
            value = next;
        }
        if (before - value).abs() <= opts.tol * value.abs().max(1.0) {
            return Outcome::Minimum(Minimum { weights, value, converged: true, iterations: iter, descent_violations });
        }
    }
    Outcome::Minimum(Minimum { weights, value, converged: false, iterations: opts.max_iter, descent_violations })
}

/// Exhaustive minimum over simplex grids with spacing `step`. A single group
/// is separable and is minimized over its grid by dynamic programming; more
/// groups are enumerated point by point within [`GRID_BUDGET`].
pub fn grid_check(tensor: &BlockTensor, step: f64) -> Result<f64, OptimizerError> {
    let n = (1.0 / step).round();
    if !(step > 0.0) || (n * step - 1.0).abs() > 1e-9 {
        return Err(OptimizerError::BadStep(step));
    }
    let n = n as usize;
    match tensor.dims.len() {
        0 => Ok(tensor.data[0]),
        1 => {
            let work = tensor.dims[0] as f64 * (n as f64 + 1.0).powi(2);
            if work > 1e3 * GRID_BUDGET {
                return Err(OptimizerError::GridTooLarge { points: work, budget: 1e3 * GRID_BUDGET });
            }
            Ok(separable_grid_min(&tensor.data, n, step))
        }
        _ => {
            let points: f64 = tensor.dims.iter().map(|&d| binomial(n + d - 1, d - 1)).product();
            if points > GRID_BUDGET {
                return Err(OptimizerError::GridTooLarge { points, budget: GRID_BUDGET });
            }
            let grids: Vec<Vec<Vec<f64>>> = tensor
                .dims
                .iter()
                .map(|&d| {
                    compositions(n, d).into_iter().map(|c| c.iter().map(|&u| u as f64 * step).collect()).collect()
                })
                .collect();
            let mut best = f64::INFINITY;
            let mut cursor = vec![0usize; grids.len()];
            loop {
                let w: Vec<Vec<f64>> = cursor.iter().zip(&grids).map(|(&i, g)| g[i].clone()).collect();
                best = best.min(grid_objective(tensor, &w));
                let mut g = grids.len();
                loop {
                    if g == 0 {
                        return Ok(best);
                    }
                    g -= 1;
                    cursor[g] += 1;
                    if cursor[g] < grids[g].len() {
                        break;
                    }
                    cursor[g] = 0;
                }
            }
        }
    }
}

/// Objective where a zero weight under a nonzero cell is `±∞`.
fn grid_objective(tensor: &BlockTensor, weights: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (o, &t) in tensor.data.iter().enumerate() {
        let idx = tensor.unravel(o);
        let denom: f64 = idx.iter().zip(weights).map(|(&i, w)| w[i]).product();
        total += cell_cost(t, denom);
    }
    total
}

fn cell_cost(t: f64, denom: f64) -> f64 {
    if denom > 0.0 {
        t / denom
    } else if t > TOL {
        f64::INFINITY
    } else if t < -TOL {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

fn separable_grid_min(q: &[f64], n: usize, step: f64) -> f64 {
    // best[b]: minimum over the coordinates seen so far using b grid units.
    let mut best: Vec<f64> = (0..=n).map(|u| cell_cost(q[0], u as f64 * step)).collect();
    for &qk in &q[1..] {
        let cost: Vec<f64> = (0..=n).map(|u| cell_cost(qk, u as f64 * step)).collect();
        best = (0..=n).map(|b| (0..=b).map(|u| best[b - u] + cost[u]).fold(f64::INFINITY, f64::min)).collect();
    }
    best[n]
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All ways of writing `n` as an ordered sum of `d` non-negative parts.
fn compositions(n: usize, d: usize) -> Vec<Vec<usize>> {
    if d == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, d - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

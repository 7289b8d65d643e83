//! Noise visibility: setting it, minimizing the inequality's left-hand side
//! over weights at a fixed strategy, and locating the critical value.

use super::{evaluate_inequality, QuantumError, QuantumStrategy, StateSpec};
use crate::expression::{CorrelatorTable, Inequality};
use crate::network::Network;
use crate::optimizer::{minimize, AlternatingOptions, BlockTensor, Outcome};

/// Coarse scan spacing used to bracket the critical visibility.
pub const SCAN_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub enum Visibility {
    /// Total `V`; every source gets `v = V^{1/N}`.
    Global(f64),
    /// One `v` per source, in network order.
    PerSource(Vec<f64>),
}

/// Applies `vis` to every noisy GHZ source and returns the new strategy with
/// the resulting total visibility `Π v_j`.
pub fn set_visibility(
    net: &Network,
    strat: &QuantumStrategy,
    vis: &Visibility,
) -> Result<(QuantumStrategy, f64), QuantumError> {
    let values: Vec<f64> = match vis {
        Visibility::Global(v) => {
            check_range(*v)?;
            for s in &net.sources {
                if let Some(StateSpec::Explicit(_)) = strat.states.get(&s.id) {
                    return Err(QuantumError::ExplicitStateInGlobalMode(s.id.clone()));
                }
            }
            let per = v.powf(1.0 / net.sources.len() as f64);
            vec![per; net.sources.len()]
        }
        Visibility::PerSource(list) => {
            if list.len() != net.sources.len() {
                return Err(QuantumError::VisibilityCount { expected: net.sources.len(), got: list.len() });
            }
            for &v in list {
                check_range(v)?;
            }
            list.clone()
        }
    };
    let mut out = strat.clone();
    for (s, &v) in net.sources.iter().zip(&values) {
        let state = out.states.get_mut(&s.id).ok_or_else(|| QuantumError::MissingState(s.id.clone()))?;
        if let StateSpec::NoisyGhz { v: old, .. } = state {
            *old = v;
        }
    }
    let total = total_visibility(net, &out);
    Ok((out, total))
}

fn check_range(v: f64) -> Result<(), QuantumError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(QuantumError::BadVisibility(v));
    }
    Ok(())
}

/// `Π v_j` over noisy GHZ sources; explicit states count as 1.
pub fn total_visibility(net: &Network, strat: &QuantumStrategy) -> f64 {
    net.sources
        .iter()
        .map(|s| match strat.states.get(&s.id) {
            Some(StateSpec::NoisyGhz { v, .. }) => *v,
            _ => 1.0,
        })
        .product()
}

#[derive(Debug, Clone)]
pub struct LhsMin {
    pub table: CorrelatorTable,
    pub blocks: BlockTensor,
    pub outcome: Outcome,
    /// `-∞` when some block is negative.
    pub value: f64,
}

/// Quantum correlators of `strat` and the left-hand side minimized over all
/// weight groups.
pub fn lhs_min(ineq: &Inequality, strat: &QuantumStrategy, opts: &AlternatingOptions) -> Result<LhsMin, QuantumError> {
    let (table, blocks) = evaluate_inequality(ineq, strat)?;
    let outcome = minimize(&blocks, opts);
    let value = outcome.value();
    Ok(LhsMin { table, blocks, outcome, value })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalVisibility {
    Critical(f64),
    /// `LHS_min(1) ≤ bound`.
    NotViolated,
    /// Violated on the whole scan, including `V = 0`.
    ViolatedEverywhere,
}

impl CriticalVisibility {
    pub fn value(&self) -> Option<f64> {
        match self {
            CriticalVisibility::Critical(v) => Some(*v),
            _ => None,
        }
    }
}

/// Largest `V` with `LHS_min(V) = bound`, within `tol`. The strategy's
/// sources are driven together through global visibility.
pub fn critical_visibility(
    ineq: &Inequality,
    strat: &QuantumStrategy,
    tol: f64,
) -> Result<CriticalVisibility, QuantumError> {
    if !(tol > 0.0) {
        return Err(QuantumError::BadTolerance);
    }
    let opts = AlternatingOptions::default();
    let excess = |v: f64| -> Result<f64, QuantumError> {
        let (s, _) = set_visibility(&ineq.network, strat, &Visibility::Global(v))?;
        Ok(lhs_min(ineq, &s, &opts)?.value - ineq.bound)
    };

    if excess(1.0)? <= 0.0 {
        return Ok(CriticalVisibility::NotViolated);
    }
    let steps = (1.0 / SCAN_STEP).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let values = grid.iter().map(|&v| excess(v)).collect::<Result<Vec<_>, _>>()?;

    // Largest bracketed crossing, in case the curve is not monotone.
    let Some(i) = (0..steps).rev().find(|&i| values[i] <= 0.0 && values[i + 1] > 0.0) else {
        return Ok(CriticalVisibility::ViolatedEverywhere);
    };
    let (mut lo, mut hi) = (grid[i], grid[i + 1]);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if excess(mid)? <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalVisibility::Critical(0.5 * (lo + hi)))
}

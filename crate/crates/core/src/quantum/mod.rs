//! Exact evaluation of full correlators for quantum strategies on tree
//! networks.
//!
//! Each source prepares a state on its ports (qubit `0` is the most
//! significant tensor factor) and each observer measures a dichotomic
//! observable on the qubits it receives, factored in its port order.

mod contract;
pub mod observable;
mod visibility;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expression::{CorrelatorTable, ExpressionError, Inequality};
use crate::network::{Network, NetworkError};
use crate::optimizer::BlockTensor;

pub use contract::Evaluator;
pub use observable::{build_named_observable, check_dichotomic, Matrix};
pub use visibility::{
    critical_visibility, lhs_min, set_visibility, total_visibility, CriticalVisibility, LhsMin, Visibility, SCAN_STEP,
};

pub const DEFAULT_MAX_QUBITS: usize = 14;

/// Qubit cap, overridable through `TREEBELL_MAX_QUBITS`.
pub fn max_qubits() -> usize {
    std::env::var("TREEBELL_MAX_QUBITS").ok().and_then(|v| v.parse().ok()).unwrap_or(DEFAULT_MAX_QUBITS)
}

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Expression(#[from] ExpressionError),
    #[error("unknown observable primitive '{0}'")]
    UnknownPrimitive(String),
    #[error("'{expr}' has {factors} tensor factors but the observer holds {ports} ports")]
    ArityMismatch { expr: String, factors: usize, ports: usize },
    #[error("no state for source '{0}'")]
    MissingState(String),
    #[error("no observables for observer '{0}'")]
    MissingObservables(String),
    #[error("strategy mentions '{0}', which is not in the network")]
    UnknownId(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid state for source '{source_id}': {reason}")]
    BadState { source_id: String, reason: String },
    #[error("invalid observable {setting} of '{observer}': {reason}")]
    BadObservable { observer: String, setting: usize, reason: String },
    #[error("correlator has imaginary part {0:e}; inputs are not Hermitian")]
    Imaginary(f64),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("visibility {0} outside [0, 1]")]
    BadVisibility(f64),
    #[error("global visibility needs noisy GHZ sources only; '{0}' has an explicit state")]
    ExplicitStateInGlobalMode(String),
    #[error("expected {expected} per-source visibilities, got {got}")]
    VisibilityCount { expected: usize, got: usize },
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// `v |φ_m><φ_m| + (1 - v) I / 2^m` with `|φ_m> = (|0..0> + |1..1>)/√2`, or
/// an explicit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSpec {
    NoisyGhz { parties: usize, v: f64 },
    Explicit(Matrix),
}

impl StateSpec {
    pub fn ghz(parties: usize, v: f64) -> Self {
        StateSpec::NoisyGhz { parties, v }
    }

    pub fn dim(&self) -> usize {
        match self {
            StateSpec::NoisyGhz { parties, .. } => 1 << parties,
            StateSpec::Explicit(m) => m.nrows(),
        }
    }

    pub fn density(&self) -> Matrix {
        match self {
            StateSpec::NoisyGhz { parties, v } => {
                let d = 1usize << parties;
                let mut rho = Matrix::identity(d, d).scale((1.0 - v) / d as f64);
                let half = Complex64::new(v / 2.0, 0.0);
                for &(r, c) in &[(0, 0), (0, d - 1), (d - 1, 0), (d - 1, d - 1)] {
                    rho[(r, c)] += half;
                }
                rho
            }
            StateSpec::Explicit(m) => m.clone(),
        }
    }

    /// Hermitian, unit trace and positive semidefinite within `1e-9`.
    pub fn check(&self) -> Result<(), String> {
        match self {
            StateSpec::NoisyGhz { parties, v } => {
                if *parties == 0 {
                    return Err("GHZ state needs at least one party".into());
                }
                if !(0.0..=1.0).contains(v) {
                    return Err(format!("visibility {v} outside [0, 1]"));
                }
                Ok(())
            }
            StateSpec::Explicit(m) => {
                if !m.is_square() || !m.nrows().is_power_of_two() {
                    return Err(format!("matrix is {}x{}, not a qubit register", m.nrows(), m.ncols()));
                }
                if !observable::is_hermitian(m, 1e-9) {
                    return Err("density matrix is not Hermitian".into());
                }
                let tr = m.trace();
                if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
                    return Err(format!("trace is {tr}"));
                }
                let min = m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
                if min < -1e-9 {
                    return Err(format!("not positive semidefinite (eigenvalue {min:e})"));
                }
                Ok(())
            }
        }
    }
}

/// A dichotomic observable, remembering the expression it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub expr: Option<String>,
    pub matrix: Matrix,
}

impl Observable {
    pub fn parse(expr: &str, ports: usize) -> Result<Self, QuantumError> {
        Ok(Observable { expr: Some(expr.to_string()), matrix: build_named_observable(expr, ports)? })
    }

    pub fn from_matrix(matrix: Matrix) -> Self {
        Observable { expr: None, matrix }
    }
}

/// States per source id and observables per observer id (indexed by
/// setting).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "StrategyFile", try_from = "StrategyFile")]
pub struct QuantumStrategy {
    pub states: BTreeMap<String, StateSpec>,
    pub observables: BTreeMap<String, Vec<Observable>>,
}

impl QuantumStrategy {
    /// Builds observables from expression strings; each observer's port
    /// count is taken from `net`.
    pub fn from_exprs(
        net: &Network,
        states: impl IntoIterator<Item = (String, StateSpec)>,
        exprs: &[(&str, Vec<String>)],
    ) -> Result<Self, QuantumError> {
        let mut observables = BTreeMap::new();
        for (id, list) in exprs {
            let obs = net.observer(id).ok_or_else(|| QuantumError::UnknownId(id.to_string()))?;
            let parsed = list.iter().map(|e| Observable::parse(e, obs.ports.len())).collect::<Result<Vec<_>, _>>()?;
            observables.insert(id.to_string(), parsed);
        }
        Ok(QuantumStrategy { states: states.into_iter().collect(), observables })
    }

    /// Checks dimensions, setting counts and the state/observable invariants
    /// against `net`.
    pub fn check(&self, net: &Network) -> Result<(), QuantumError> {
        net.validate()?;
        for id in self.states.keys() {
            if net.source_index(id).is_none() {
                return Err(QuantumError::UnknownId(id.clone()));
            }
        }
        for id in self.observables.keys() {
            if net.observer_index(id).is_none() {
                return Err(QuantumError::UnknownId(id.clone()));
            }
        }
        for s in &net.sources {
            let state = self.states.get(&s.id).ok_or_else(|| QuantumError::MissingState(s.id.clone()))?;
            if state.dim() != 1 << s.arity {
                return Err(QuantumError::Dimension(format!(
                    "source '{}' has {} ports but its state has dimension {}",
                    s.id,
                    s.arity,
                    state.dim()
                )));
            }
            state.check().map_err(|reason| QuantumError::BadState { source_id: s.id.clone(), reason })?;
        }
        for o in &net.observers {
            let list = self.observables.get(&o.id).ok_or_else(|| QuantumError::MissingObservables(o.id.clone()))?;
            if list.len() != o.num_settings {
                return Err(QuantumError::Dimension(format!(
                    "observer '{}' has {} settings but {} observables",
                    o.id,
                    o.num_settings,
                    list.len()
                )));
            }
            for (k, ob) in list.iter().enumerate() {
                let bad = |reason: String| QuantumError::BadObservable { observer: o.id.clone(), setting: k, reason };
                if ob.matrix.nrows() != 1 << o.ports.len() {
                    return Err(bad(format!(
                        "dimension {} but the observer holds {} ports",
                        ob.matrix.nrows(),
                        o.ports.len()
                    )));
                }
                check_dichotomic(&ob.matrix).map_err(bad)?;
            }
        }
        Ok(())
    }
}

/// `⟨Π_k O_k⟩` for one setting assignment (network observer order).
pub fn correlator(net: &Network, strat: &QuantumStrategy, settings: &[usize]) -> Result<f64, QuantumError> {
    Evaluator::new(net, strat)?.correlator(settings)
}

/// Correlators for every setting assignment used by `ineq`, and the
/// resulting block tensor.
pub fn evaluate_inequality(
    ineq: &Inequality,
    strat: &QuantumStrategy,
) -> Result<(CorrelatorTable, BlockTensor), QuantumError> {
    let eval = Evaluator::new(&ineq.network, strat)?;
    let table = ineq
        .settings_needed()
        .into_par_iter()
        .map(|s| eval.correlator(&s).map(|e| (s, e)))
        .collect::<Result<CorrelatorTable, _>>()?;
    let blocks = ineq.block_values(&table)?;
    Ok((table, blocks))
}

/// `(|X| mod 4) / 2`.
pub fn sg_even(label: u32) -> u32 {
    (label.count_ones() % 4) / 2
}

/// `((|X| - 1) mod 4) / 2`, for odd `|X|`.
pub fn sg_odd(label: u32) -> u32 {
    ((label.count_ones() + 3) % 4) / 2
}

/// Hub observable for block `X` in the star family: `±σ_x^{⊗n}` for even
/// `|X|` and `±σ_y^{⊗n}` for odd `|X|`. Each source then contributes
/// `n_y = |X|` or `|X| + 1` factors of `σ_y` to its GHZ expectation, worth
/// `(-1)^{n_y/2}`, so the sign `(-1)^{n·n_y/2}` makes every block positive.
/// For `n = 1` and even `|X|` this is `(-1)^{sg_e(X)}`; for odd `|X|` it is
/// `-(-1)^{sg_o(X)}`.
pub fn star_hub_expr(label: u32, n: usize) -> String {
    let size = label.count_ones() as usize;
    let (n_y, prim) = if size.is_multiple_of(2) { (size, "X") } else { (size + 1, "Y") };
    let body = vec![prim; n].join("⊗");
    if (n * n_y / 2) % 2 == 1 {
        format!("-{body}")
    } else {
        body
    }
}

/// Star network strategy: noisy `(L+1)`-party GHZ states in sources
/// `S1..SN`, `(M+, M-)` on every leaf `A{j}_{k}`, and the sign rule above at
/// the hub `A1_{L+1}`.
pub fn star_hub_strategy(n: usize, l: usize, v: f64) -> QuantumStrategy {
    let m_plus = Observable { expr: Some("M+".into()), matrix: observable::m_plus() };
    let m_minus = Observable { expr: Some("M-".into()), matrix: observable::m_minus() };
    let mut strat = QuantumStrategy::default();
    for j in 1..=n {
        strat.states.insert(format!("S{j}"), StateSpec::ghz(l + 1, v));
        for k in 1..=l {
            strat.observables.insert(format!("A{j}_{k}"), vec![m_plus.clone(), m_minus.clone()]);
        }
    }
    let hub = (0..1u32 << l)
        .map(|x| {
            let e = star_hub_expr(x, n);
            Observable::parse(&e, n).expect("well-formed hub expression")
        })
        .collect();
    strat.observables.insert(format!("A1_{}", l + 1), hub);
    strat
}

/// `(|00..0> + |11..1>)/√2` amplitudes, for tests and diagnostics.
pub fn ghz_vector(parties: usize) -> Vec<Complex64> {
    let d = 1usize << parties;
    let mut v = vec![Complex64::new(0.0, 0.0); d];
    v[0] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    v[d - 1] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum StateFile {
    Ghz { parties: usize, v: f64 },
    Matrix { data: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ObservableFile {
    Expr(String),
    Matrix(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StrategyFile {
    states: BTreeMap<String, StateFile>,
    observables: BTreeMap<String, Vec<ObservableFile>>,
}

fn to_pairs(m: &Matrix) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push([m[(r, c)].re, m[(r, c)].im]);
        }
    }
    out
}

fn from_pairs(data: &[[f64; 2]]) -> Result<Matrix, QuantumError> {
    let d = (data.len() as f64).sqrt().round() as usize;
    if d * d != data.len() || d == 0 {
        return Err(QuantumError::Dimension(format!("{} entries do not form a square matrix", data.len())));
    }
    Ok(DMatrix::from_row_iterator(d, d, data.iter().map(|[re, im]| Complex64::new(*re, *im))))
}

impl From<QuantumStrategy> for StrategyFile {
    fn from(s: QuantumStrategy) -> Self {
        StrategyFile {
            states: s
                .states
                .into_iter()
                .map(|(k, v)| {
                    let f = match v {
                        StateSpec::NoisyGhz { parties, v } => StateFile::Ghz { parties, v },
                        StateSpec::Explicit(m) => StateFile::Matrix { data: to_pairs(&m) },
                    };
                    (k, f)
                })
                .collect(),
            observables: s
                .observables
                .into_iter()
                .map(|(k, list)| {
                    let list = list
                        .into_iter()
                        .map(|o| match o.expr {
                            Some(e) => ObservableFile::Expr(e),
                            None => ObservableFile::Matrix(to_pairs(&o.matrix)),
                        })
                        .collect();
                    (k, list)
                })
                .collect(),
        }
    }
}

impl TryFrom<StrategyFile> for QuantumStrategy {
    type Error = QuantumError;

    fn try_from(f: StrategyFile) -> Result<Self, Self::Error> {
        let mut states = BTreeMap::new();
        for (k, v) in f.states {
            let s = match v {
                StateFile::Ghz { parties, v } => StateSpec::NoisyGhz { parties, v },
                StateFile::Matrix { data } => StateSpec::Explicit(from_pairs(&data)?),
            };
            states.insert(k, s);
        }
        let mut observables = BTreeMap::new();
        for (k, list) in f.observables {
            let mut parsed = Vec::with_capacity(list.len());
            for o in list {
                parsed.push(match o {
                    ObservableFile::Expr(e) => {
                        // Port count is checked against the network later; the
                        // factor count fixes the dimension here.
                        let ports = e.split(['⊗', '*']).count();
                        Observable::parse(&e, ports)?
                    }
                    ObservableFile::Matrix(data) => Observable::from_matrix(from_pairs(&data)?),
                });
            }
            observables.insert(k, parsed);
        }
        Ok(QuantumStrategy { states, observables })
    }
}

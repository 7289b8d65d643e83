//! Weight-parameterized Bell-type inequalities over full correlators.
//!
//! An [`Inequality`] is a list of raw terms `coeff * <a^1_{x1} ... a^M_{xM}>`,
//! each optionally divided by one weight per [`WeightGroup`]. A weight group
//! is the simplex of free parameters introduced by one extension step; its
//! labels are subsets of `{1..L}` encoded as bitmasks (bit `k-1` set iff
//! `k` is in the subset).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Network, NetworkError};
use crate::optimizer::BlockTensor;
use crate::TOL;

/// Correlator values keyed by the setting of every observer, in network
/// observer order.
pub type CorrelatorTable = BTreeMap<Vec<usize>, f64>;

#[derive(Debug, Error)]
pub enum ExpressionError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("bound must be positive, got {0}")]
    NonPositiveBound(f64),
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("term {term}: {reason}")]
    BadTerm { term: usize, reason: String },
    #[error("weight group '{group}': {reason}")]
    BadGroup { group: String, reason: String },
    #[error("no correlator for settings {0:?}")]
    MissingCorrelator(Vec<usize>),
    #[error("weights for group '{group}': {reason}")]
    BadWeights { group: String, reason: String },
    #[error("block {labels:?} has zero weight but value {value:e}")]
    ZeroWeightNonzeroBlock { labels: Vec<Option<u32>>, value: f64 },
    #[error("term {0} does not reference every weight group; no block tensor exists")]
    IncompleteWeightRefs(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightGroup {
    pub id: String,
    pub source: String,
    pub labels: Vec<u32>,
}

impl WeightGroup {
    pub fn new(id: impl Into<String>, source: impl Into<String>, l: usize) -> Self {
        WeightGroup { id: id.into(), source: source.into(), labels: subset_labels(l) }
    }

    pub fn label_position(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&x| x == label)
    }
}

/// One `coeff * <...>` term. `settings` is indexed like the network's
/// observers, `weights` like the inequality's weight groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub settings: Vec<usize>,
    pub weights: Vec<Option<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "InequalityFile", try_from = "InequalityFile")]
pub struct Inequality {
    pub network: Network,
    pub weight_groups: Vec<WeightGroup>,
    pub terms: Vec<Term>,
    pub bound: f64,
}

/// Probability vectors per weight group, aligned with each group's labels.
pub type WeightAssignment = Vec<Vec<f64>>;

/// All subsets of `{1..L}` as bitmasks, ascending.
pub fn subset_labels(l: usize) -> Vec<u32> {
    (0..1u32 << l).collect()
}

pub fn subset_size(label: u32) -> u32 {
    label.count_ones()
}

/// `δ^k_X` for 1-based `k`.
pub fn contains(label: u32, k: usize) -> bool {
    label >> (k - 1) & 1 == 1
}

/// Human-readable subset, e.g. `{1,2}` or `∅`.
pub fn label_name(label: u32) -> String {
    if label == 0 {
        return "∅".into();
    }
    let items: Vec<String> = (1..=32).filter(|&k| contains(label, k)).map(|k| k.to_string()).collect();
    format!("{{{}}}", items.join(","))
}

impl Inequality {
    pub fn new(network: Network, bound: f64) -> Self {
        Inequality { network, weight_groups: Vec::new(), terms: Vec::new(), bound }
    }

    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.weight_groups.iter().position(|g| g.id == id)
    }

    pub fn validate(&self) -> Result<(), ExpressionError> {
        self.network.validate()?;
        if !(self.bound > 0.0) {
            return Err(ExpressionError::NonPositiveBound(self.bound));
        }
        for g in &self.weight_groups {
            let bad = |reason: String| ExpressionError::BadGroup { group: g.id.clone(), reason };
            let j =
                self.network.source_index(&g.source).ok_or_else(|| bad(format!("unknown source '{}'", g.source)))?;
            let l = self.network.sources[j].arity - 1;
            let mut labels = g.labels.clone();
            labels.sort_unstable();
            if labels != subset_labels(l) {
                return Err(bad(format!("labels must be the {} subsets of {{1..{l}}}", 1usize << l)));
            }
        }
        if self.weight_groups.iter().enumerate().any(|(i, g)| self.weight_groups[..i].iter().any(|h| h.id == g.id)) {
            return Err(ExpressionError::BadGroup { group: "?".into(), reason: "duplicate group id".into() });
        }
        for (t, term) in self.terms.iter().enumerate() {
            let bad = |reason: String| ExpressionError::BadTerm { term: t, reason };
            if term.settings.len() != self.network.observers.len() {
                return Err(bad("settings must cover every observer".into()));
            }
            for (s, o) in term.settings.iter().zip(&self.network.observers) {
                if *s >= o.num_settings {
                    return Err(bad(format!("setting {s} out of range for '{}'", o.id)));
                }
            }
            if term.weights.len() != self.weight_groups.len() {
                return Err(bad("weight references misaligned with groups".into()));
            }
            for (w, g) in term.weights.iter().zip(&self.weight_groups) {
                if let Some(label) = w {
                    if g.label_position(*label).is_none() {
                        return Err(bad(format!("label {label} not in group '{}'", g.id)));
                    }
                }
            }
            if !term.coeff.is_finite() {
                return Err(bad("non-finite coefficient".into()));
            }
        }
        Ok(())
    }

    /// Distinct setting assignments appearing in the terms.
    pub fn settings_needed(&self) -> Vec<Vec<usize>> {
        let mut v: Vec<Vec<usize>> = self.terms.iter().map(|t| t.settings.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn check_weights(&self, w: &WeightAssignment) -> Result<(), ExpressionError> {
        if w.len() != self.weight_groups.len() {
            return Err(ExpressionError::BadWeights {
                group: "*".into(),
                reason: format!("expected {} vectors, got {}", self.weight_groups.len(), w.len()),
            });
        }
        for (g, v) in self.weight_groups.iter().zip(w) {
            let bad = |reason: String| ExpressionError::BadWeights { group: g.id.clone(), reason };
            if v.len() != g.labels.len() {
                return Err(bad(format!("expected {} entries", g.labels.len())));
            }
            if v.iter().any(|&x| !(x >= 0.0)) {
                return Err(bad("negative entry".into()));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > TOL {
                return Err(bad(format!("sums to {s}")));
            }
        }
        Ok(())
    }

    /// Sum of `coeff * E` per distinct weight-reference tuple.
    fn cells(&self, table: &CorrelatorTable) -> Result<BTreeMap<Vec<Option<u32>>, f64>, ExpressionError> {
        let mut cells = BTreeMap::new();
        for t in &self.terms {
            let e = table.get(&t.settings).ok_or_else(|| ExpressionError::MissingCorrelator(t.settings.clone()))?;
            *cells.entry(t.weights.clone()).or_insert(0.0) += t.coeff * e;
        }
        Ok(cells)
    }

    /// `Σ coeff·E / Π weights`. Blocks with a zero weight are skipped when
    /// their value vanishes and are an error otherwise.
    pub fn evaluate(&self, table: &CorrelatorTable, w: &WeightAssignment) -> Result<f64, ExpressionError> {
        self.check_weights(w)?;
        let mut total = 0.0;
        for (labels, value) in self.cells(table)? {
            let mut denom = 1.0;
            for ((label, g), wv) in labels.iter().zip(&self.weight_groups).zip(w) {
                if let Some(label) = label {
                    denom *= wv[g.label_position(*label).expect("validated label")];
                }
            }
            if denom == 0.0 {
                if value.abs() > TOL {
                    return Err(ExpressionError::ZeroWeightNonzeroBlock { labels, value });
                }
                continue;
            }
            total += value / denom;
        }
        Ok(total)
    }

    /// Block values over the product of all weight groups' labels, with
    /// coefficient signs folded in. A single group gives the vector of `Q_X`;
    /// no groups gives a scalar holding the whole left-hand side.
    pub fn block_values(&self, table: &CorrelatorTable) -> Result<BlockTensor, ExpressionError> {
        let dims: Vec<usize> = self.weight_groups.iter().map(|g| g.labels.len()).collect();
        let mut tensor = BlockTensor::zeros(dims);
        for (i, t) in self.terms.iter().enumerate() {
            let mut idx = Vec::with_capacity(t.weights.len());
            for (label, g) in t.weights.iter().zip(&self.weight_groups) {
                let label = label.ok_or(ExpressionError::IncompleteWeightRefs(i))?;
                idx.push(g.label_position(label).expect("validated label"));
            }
            let e = table.get(&t.settings).ok_or_else(|| ExpressionError::MissingCorrelator(t.settings.clone()))?;
            *tensor.get_mut(&idx) += t.coeff * e;
        }
        Ok(tensor)
    }

    /// Merges terms with equal settings and weight references, drops
    /// vanishing coefficients and sorts terms by (weights, settings).
    pub fn canonicalize(&self) -> Inequality {
        let mut merged: BTreeMap<(Vec<Option<u32>>, Vec<usize>), f64> = BTreeMap::new();
        for t in &self.terms {
            *merged.entry((t.weights.clone(), t.settings.clone())).or_insert(0.0) += t.coeff;
        }
        let terms = merged
            .into_iter()
            .filter(|(_, c)| c.abs() > TOL)
            .map(|((weights, settings), coeff)| Term { coeff, settings, weights })
            .collect();
        Inequality { terms, ..self.clone() }
    }

    pub fn scale(&self, factor: f64) -> Result<Inequality, ExpressionError> {
        if !(factor > 0.0) {
            return Err(ExpressionError::NonPositiveScale(factor));
        }
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff *= factor;
        }
        out.bound *= factor;
        Ok(out)
    }

    pub fn uniform_weights(&self) -> WeightAssignment {
        self.weight_groups.iter().map(|g| vec![1.0 / g.labels.len() as f64; g.labels.len()]).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermFile {
    coeff: f64,
    settings: BTreeMap<String, usize>,
    #[serde(default)]
    weights: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InequalityFile {
    network: Network,
    bound: f64,
    #[serde(default)]
    weight_groups: Vec<WeightGroup>,
    terms: Vec<TermFile>,
}

impl From<Inequality> for InequalityFile {
    fn from(ineq: Inequality) -> Self {
        let terms = ineq
            .terms
            .iter()
            .map(|t| TermFile {
                coeff: t.coeff,
                settings: ineq.network.observers.iter().zip(&t.settings).map(|(o, &s)| (o.id.clone(), s)).collect(),
                weights: ineq
                    .weight_groups
                    .iter()
                    .zip(&t.weights)
                    .filter_map(|(g, w)| w.map(|l| (g.id.clone(), l)))
                    .collect(),
            })
            .collect();
        InequalityFile { network: ineq.network, bound: ineq.bound, weight_groups: ineq.weight_groups, terms }
    }
}

impl TryFrom<InequalityFile> for Inequality {
    type Error = ExpressionError;

    fn try_from(file: InequalityFile) -> Result<Self, Self::Error> {
        let mut terms = Vec::with_capacity(file.terms.len());
        for (i, t) in file.terms.into_iter().enumerate() {
            let bad = |reason: String| ExpressionError::BadTerm { term: i, reason };
            if let Some(k) = t.settings.keys().find(|k| file.network.observer_index(k).is_none()) {
                return Err(bad(format!("unknown observer '{k}'")));
            }
            let settings = file
                .network
                .observers
                .iter()
                .map(|o| t.settings.get(&o.id).copied().ok_or_else(|| bad(format!("missing setting for '{}'", o.id))))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(k) = t.weights.keys().find(|k| !file.weight_groups.iter().any(|g| &g.id == *k)) {
                return Err(bad(format!("unknown weight group '{k}'")));
            }
            let weights = file.weight_groups.iter().map(|g| t.weights.get(&g.id).copied()).collect();
            terms.push(Term { coeff: t.coeff, settings, weights });
        }
        let ineq = Inequality { network: file.network, weight_groups: file.weight_groups, terms, bound: file.bound };
        ineq.validate()?;
        Ok(ineq)
    }
}

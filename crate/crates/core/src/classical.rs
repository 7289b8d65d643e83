//! Local-hidden-variable network models: each source sends the same symbol
//! from a finite alphabet to all of its ports, and each observer answers
//! deterministically from its setting and the symbols it receives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expression::{CorrelatorTable, ExpressionError, Inequality, WeightAssignment, WeightGroup};
use crate::network::{Network, NetworkError};
use crate::optimizer::{minimize, AlternatingOptions, BlockTensor, Outcome};
use crate::TOL;

/// Largest joint hidden-variable space summed over exactly.
pub const JOINT_BUDGET: usize = 1_000_000;
/// Largest number of deterministic models [`enumerate_deterministic`] yields.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;
/// Slack on the classical bound.
pub const BOUND_TOL: f64 = 1e-9;
pub const DEFAULT_CARDINALITY: usize = 4;

#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Expression(#[from] ExpressionError),
    #[error("model does not fit the network: {0}")]
    Shape(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("weight group '{group}' cannot be induced: {reason}")]
    NotInducible { group: String, reason: String },
    #[error("weight group '{group}' has q[{label}] = 0 but its blocks reach {value:e}")]
    ZeroWeightBlock { group: String, label: u32, value: f64 },
    #[error("alphabet size must be at least 1")]
    ZeroCardinality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhvSource {
    pub id: String,
    pub probs: Vec<f64>,
}

impl LhvSource {
    pub fn cardinality(&self) -> usize {
        self.probs.len()
    }
}

/// `outcomes[setting][tuple]`, where `tuple` indexes the received symbols in
/// port order with the first port most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub observer: String,
    pub outcomes: Vec<Vec<i8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhvModel {
    pub sources: Vec<LhvSource>,
    pub responses: Vec<ResponseTable>,
}

impl LhvModel {
    /// Number of symbol tuples observer `k` can receive.
    fn tuples(&self, net: &Network, k: usize) -> usize {
        net.observers[k]
            .ports
            .iter()
            .map(|(sid, _)| self.sources[net.source_index(sid).expect("validated")].cardinality())
            .product()
    }

    pub fn check(&self, net: &Network) -> Result<(), ClassicalError> {
        net.validate()?;
        if self.sources.len() != net.sources.len() || self.responses.len() != net.observers.len() {
            return Err(ClassicalError::Shape(format!(
                "{} sources and {} response tables for a network with {} and {}",
                self.sources.len(),
                self.responses.len(),
                net.sources.len(),
                net.observers.len()
            )));
        }
        for (s, spec) in self.sources.iter().zip(&net.sources) {
            if s.id != spec.id {
                return Err(ClassicalError::Shape(format!("source '{}' where '{}' was expected", s.id, spec.id)));
            }
            if s.probs.is_empty() || s.probs.iter().any(|&p| !(p >= 0.0)) {
                return Err(ClassicalError::Shape(format!("source '{}' has an invalid distribution", s.id)));
            }
            let total: f64 = s.probs.iter().sum();
            if (total - 1.0).abs() > TOL {
                return Err(ClassicalError::Shape(format!("source '{}' probabilities sum to {total}", s.id)));
            }
        }
        for (k, (r, spec)) in self.responses.iter().zip(&net.observers).enumerate() {
            if r.observer != spec.id {
                return Err(ClassicalError::Shape(format!(
                    "response table '{}' where '{}' was expected",
                    r.observer, spec.id
                )));
            }
            let tuples = self.tuples(net, k);
            if r.outcomes.len() != spec.num_settings || r.outcomes.iter().any(|row| row.len() != tuples) {
                return Err(ClassicalError::Shape(format!(
                    "observer '{}' needs {} settings × {} symbol tuples",
                    spec.id, spec.num_settings, tuples
                )));
            }
            if r.outcomes.iter().flatten().any(|&a| a != 1 && a != -1) {
                return Err(ClassicalError::Shape(format!("observer '{}' has an outcome outside ±1", spec.id)));
            }
        }
        Ok(())
    }
}

/// The joint hidden-variable space flattened once, so that every
/// correlator is a weighted sum over it.
struct Joint {
    probs: Vec<f64>,
    /// Per observer, the symbol-tuple index seen at each joint point.
    tuple_of: Vec<Vec<u32>>,
}

impl Joint {
    fn new(net: &Network, model: &LhvModel) -> Result<Self, ClassicalError> {
        model.check(net)?;
        let dims: Vec<usize> = model.sources.iter().map(|s| s.cardinality()).collect();
        let size = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n <= JOINT_BUDGET);
        let Some(size) = size else {
            return Err(ClassicalError::ResourceLimit(format!(
                "joint alphabet {dims:?} exceeds {JOINT_BUDGET} points"
            )));
        };
        let mut probs = Vec::with_capacity(size);
        let mut symbols = vec![vec![0usize; dims.len()]; size];
        for (idx, sym) in symbols.iter_mut().enumerate() {
            let mut rest = idx;
            let mut p = 1.0;
            for j in (0..dims.len()).rev() {
                sym[j] = rest % dims[j];
                rest /= dims[j];
                p *= model.sources[j].probs[sym[j]];
            }
            probs.push(p);
        }
        let tuple_of = net
            .observers
            .iter()
            .map(|o| {
                let srcs: Vec<usize> =
                    o.ports.iter().map(|(sid, _)| net.source_index(sid).expect("validated")).collect();
                symbols.iter().map(|sym| srcs.iter().fold(0usize, |acc, &j| acc * dims[j] + sym[j]) as u32).collect()
            })
            .collect();
        Ok(Joint { probs, tuple_of })
    }

    fn correlator(&self, model: &LhvModel, settings: &[usize]) -> f64 {
        let rows: Vec<&[i8]> = model.responses.iter().zip(settings).map(|(r, &s)| r.outcomes[s].as_slice()).collect();
        let mut total = 0.0;
        for (lam, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut sign = 1i8;
            for (k, row) in rows.iter().enumerate() {
                sign *= row[self.tuple_of[k][lam] as usize];
            }
            total += p * f64::from(sign);
        }
        total
    }
}

/// `Σ_λ Π_j p_j(λ_j) Π_k a_k(x_k, λ̄_k)` for one setting per observer.
pub fn exact_correlator(net: &Network, model: &LhvModel, settings: &[usize]) -> Result<f64, ClassicalError> {
    if settings.len() != net.observers.len() || settings.iter().zip(&net.observers).any(|(&s, o)| s >= o.num_settings) {
        return Err(ClassicalError::Shape(format!("settings {settings:?} do not fit the network")));
    }
    Ok(Joint::new(net, model)?.correlator(model, settings))
}

/// Correlators for every setting assignment `ineq` uses.
pub fn exact_correlators(ineq: &Inequality, model: &LhvModel) -> Result<CorrelatorTable, ClassicalError> {
    let joint = Joint::new(&ineq.network, model)?;
    Ok(ineq
        .settings_needed()
        .into_iter()
        .map(|s| {
            let e = joint.correlator(model, &s);
            (s, e)
        })
        .collect())
}

/// Observers holding ports `1..` of the group's source, when each of them
/// has exactly that one port and two settings.
fn group_observers(net: &Network, group: &WeightGroup) -> Result<Vec<usize>, ClassicalError> {
    let bad = |reason: String| ClassicalError::NotInducible { group: group.id.clone(), reason };
    let j = net.source_index(&group.source).ok_or_else(|| bad(format!("unknown source '{}'", group.source)))?;
    let owners = net.port_owners(j);
    owners[1..]
        .iter()
        .map(|o| {
            let k = o.ok_or_else(|| bad("dangling port".into()))?;
            let obs = &net.observers[k];
            if obs.ports.len() != 1 {
                return Err(bad(format!("observer '{}' receives {} subsystems", obs.id, obs.ports.len())));
            }
            if obs.num_settings != 2 {
                return Err(bad(format!("observer '{}' has {} settings", obs.id, obs.num_settings)));
            }
            Ok(k)
        })
        .collect()
}

/// `q_X = P(μ : b^k_0(μ) = (-1)^{δ^k_X} b^k_1(μ) for all k)` over the group
/// source's alphabet; bit `k-1` of `X` is set exactly where `b^k_0 ≠ b^k_1`.
pub fn induced_weights(net: &Network, model: &LhvModel, group: &WeightGroup) -> Result<Vec<f64>, ClassicalError> {
    model.check(net)?;
    let (j, positions) = symbol_labels(net, model, group)?;
    let mut q = vec![0.0; group.labels.len()];
    for (&pos, &p) in positions.iter().zip(&model.sources[j].probs) {
        q[pos] += p;
    }
    Ok(q)
}

/// The group's source index and, per symbol of that source, the position
/// of the label whose event contains it.
fn symbol_labels(net: &Network, model: &LhvModel, group: &WeightGroup) -> Result<(usize, Vec<usize>), ClassicalError> {
    let observers = group_observers(net, group)?;
    let j = net.source_index(&group.source).expect("checked by group_observers");
    let positions = (0..model.sources[j].cardinality())
        .map(|mu| {
            let mut label = 0u32;
            for (bit, &k) in observers.iter().enumerate() {
                let row = &model.responses[k].outcomes;
                if row[0][mu] != row[1][mu] {
                    label |= 1 << bit;
                }
            }
            group.label_position(label).ok_or_else(|| ClassicalError::NotInducible {
                group: group.id.clone(),
                reason: format!("pattern {label} is not a label"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((j, positions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub lhs: f64,
    pub bound: f64,
    pub satisfied: bool,
    /// Induced weights per group; `None` where the group is minimized over.
    pub induced: Vec<Option<Vec<f64>>>,
    /// Weights achieving `lhs`, when it is finite.
    pub weights: Option<WeightAssignment>,
    pub blocks: Vec<f64>,
    /// True when the induced/minimized mix exceeded the bound and `lhs`
    /// comes from minimizing over every group jointly.
    pub joint_fallback: bool,
}

/// Evaluates `ineq` on `model`. Groups whose sign pattern is a function of
/// their own source use the induced weights, after checking that every block
/// with `q_X = 0` vanishes; the other groups are minimized over their
/// simplex. When some group is minimized and the result exceeds the bound,
/// the joint minimum over all groups is used instead.
pub fn check_model(ineq: &Inequality, model: &LhvModel) -> Result<CheckResult, ClassicalError> {
    let table = exact_correlators(ineq, model)?;
    let blocks = ineq.block_values(&table)?;
    let net = &ineq.network;

    let mut labels = Vec::with_capacity(ineq.weight_groups.len());
    for group in &ineq.weight_groups {
        match symbol_labels(net, model, group) {
            Ok(l) => labels.push(Some(l)),
            Err(ClassicalError::NotInducible { .. }) => labels.push(None),
            Err(e) => return Err(e),
        }
    }
    let induced: Vec<Option<Vec<f64>>> = labels
        .iter()
        .zip(&ineq.weight_groups)
        .map(|(l, g)| {
            l.as_ref().map(|(j, positions)| {
                let mut q = vec![0.0; g.labels.len()];
                for (&pos, &p) in positions.iter().zip(&model.sources[*j].probs) {
                    q[pos] += p;
                }
                q
            })
        })
        .collect();
    check_zero_blocks(ineq, &blocks, &induced)?;

    let opts = AlternatingOptions::default();
    let normalized = conditioned_blocks(ineq, model, &labels, &induced, &blocks.dims)?;
    let (outcome, free) = reduce(&normalized, &induced);
    let mut lhs = outcome.value();
    let mut weights = outcome.minimum().map(|m| merge_weights(&induced, &free, &m.weights));
    let mut joint_fallback = false;
    if lhs > ineq.bound + BOUND_TOL && !free.is_empty() {
        let joint = minimize(&blocks, &opts);
        if joint.value() < lhs {
            lhs = joint.value();
            weights = joint.minimum().map(|m| m.weights.clone());
            joint_fallback = true;
        }
    }
    Ok(CheckResult {
        lhs,
        bound: ineq.bound,
        satisfied: lhs <= ineq.bound + BOUND_TOL,
        induced,
        weights,
        blocks: blocks.data,
        joint_fallback,
    })
}

/// Block values divided by the induced weights, computed as expectations
/// with every inducible group's source conditioned on its label's event.
/// Dividing the plain block by a tiny weight would amplify rounding in the
/// cancelling terms. Cells with a zero induced weight are left at zero.
fn conditioned_blocks(
    ineq: &Inequality,
    model: &LhvModel,
    labels: &[Option<(usize, Vec<usize>)>],
    induced: &[Option<Vec<f64>>],
    dims: &[usize],
) -> Result<BlockTensor, ClassicalError> {
    let mut cells: std::collections::BTreeMap<Vec<usize>, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, t) in ineq.terms.iter().enumerate() {
        let idx = t
            .weights
            .iter()
            .zip(&ineq.weight_groups)
            .map(|(label, g)| {
                let label = label.ok_or(ExpressionError::IncompleteWeightRefs(i))?;
                Ok(g.label_position(label).expect("validated label"))
            })
            .collect::<Result<Vec<usize>, ExpressionError>>()?;
        cells.entry(idx).or_default().push(i);
    }
    let mut out = BlockTensor::zeros(dims.to_vec());
    for (idx, terms) in cells {
        let mut conditioned = model.clone();
        let mut empty = false;
        for (g, l) in labels.iter().enumerate() {
            if let (Some((j, positions)), Some(q)) = (l, &induced[g]) {
                let mass = q[idx[g]];
                if mass == 0.0 {
                    empty = true;
                    break;
                }
                for (p, &pos) in conditioned.sources[*j].probs.iter_mut().zip(positions) {
                    *p = if pos == idx[g] { *p / mass } else { 0.0 };
                }
            }
        }
        if empty {
            continue;
        }
        let joint = Joint::new(&ineq.network, &conditioned)?;
        let value: f64 =
            terms.iter().map(|&i| ineq.terms[i].coeff * joint.correlator(&conditioned, &ineq.terms[i].settings)).sum();
        *out.get_mut(&idx) = value;
    }
    Ok(out)
}

fn check_zero_blocks(
    ineq: &Inequality,
    blocks: &BlockTensor,
    induced: &[Option<Vec<f64>>],
) -> Result<(), ClassicalError> {
    for (offset, &value) in blocks.data.iter().enumerate() {
        if value.abs() <= TOL {
            continue;
        }
        let idx = blocks.unravel(offset);
        for (g, q) in induced.iter().enumerate() {
            if let Some(q) = q {
                if q[idx[g]] == 0.0 {
                    let group = &ineq.weight_groups[g];
                    return Err(ClassicalError::ZeroWeightBlock {
                        group: group.id.clone(),
                        label: group.labels[idx[g]],
                        value,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Sums a conditioned tensor over the induced groups' axes and minimizes
/// over the rest. Returns the outcome and the indices of the free groups.
fn reduce(normalized: &BlockTensor, induced: &[Option<Vec<f64>>]) -> (Outcome, Vec<usize>) {
    let free: Vec<usize> = (0..induced.len()).filter(|&g| induced[g].is_none()).collect();
    let dims: Vec<usize> = free.iter().map(|&g| normalized.dims[g]).collect();
    let mut reduced = BlockTensor::zeros(dims);
    for (offset, &value) in normalized.data.iter().enumerate() {
        let idx = normalized.unravel(offset);
        let sub: Vec<usize> = free.iter().map(|&g| idx[g]).collect();
        *reduced.get_mut(&sub) += value;
    }
    (minimize(&reduced, &AlternatingOptions::default()), free)
}

fn merge_weights(induced: &[Option<Vec<f64>>], free: &[usize], found: &[Vec<f64>]) -> WeightAssignment {
    induced
        .iter()
        .enumerate()
        .map(|(g, q)| match q {
            Some(q) => q.clone(),
            None => found[free.iter().position(|&f| f == g).expect("free group")].clone(),
        })
        .collect()
}

fn dirichlet(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn random_model_with(net: &Network, d: usize, rng: &mut ChaCha8Rng) -> LhvModel {
    let sources: Vec<LhvSource> =
        net.sources.iter().map(|s| LhvSource { id: s.id.clone(), probs: dirichlet(rng, d) }).collect();
    let responses = net
        .observers
        .iter()
        .map(|o| {
            let tuples = d.pow(o.ports.len() as u32);
            let outcomes = (0..o.num_settings)
                .map(|_| (0..tuples).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
                .collect();
            ResponseTable { observer: o.id.clone(), outcomes }
        })
        .collect();
    LhvModel { sources, responses }
}

/// Model `stream` of the family seeded by `seed`: Dirichlet(1, …, 1) source
/// distributions over `d` symbols and uniform ±1 responses.
pub fn random_model_stream(net: &Network, d: usize, seed: u64, stream: u64) -> Result<LhvModel, ClassicalError> {
    if d == 0 {
        return Err(ClassicalError::ZeroCardinality);
    }
    net.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Ok(random_model_with(net, d, &mut rng))
}

pub fn random_model(net: &Network, d: usize, seed: u64) -> Result<LhvModel, ClassicalError> {
    random_model_stream(net, d, seed, 0)
}

/// All models with one-hot source distributions and every response table.
#[derive(Debug, Clone)]
pub struct DeterministicModels {
    net: Network,
    d: usize,
    /// Bits of response table per observer.
    table_bits: Vec<usize>,
    next: u128,
    count: u128,
}

impl DeterministicModels {
    pub fn count(&self) -> u128 {
        self.count
    }
}

impl Iterator for DeterministicModels {
    type Item = LhvModel;

    fn next(&mut self) -> Option<LhvModel> {
        if self.next >= self.count {
            return None;
        }
        let mut rest = self.next;
        self.next += 1;
        let sources = self
            .net
            .sources
            .iter()
            .map(|s| {
                let mut probs = vec![0.0; self.d];
                probs[(rest % self.d as u128) as usize] = 1.0;
                rest /= self.d as u128;
                LhvSource { id: s.id.clone(), probs }
            })
            .collect();
        let responses = self
            .net
            .observers
            .iter()
            .zip(&self.table_bits)
            .map(|(o, &bits)| {
                let tuples = bits / o.num_settings;
                let mut code = rest % (1u128 << bits);
                rest >>= bits;
                let outcomes = (0..o.num_settings)
                    .map(|_| {
                        (0..tuples)
                            .map(|_| {
                                let a = if code & 1 == 0 { 1 } else { -1 };
                                code >>= 1;
                                a
                            })
                            .collect()
                    })
                    .collect();
                ResponseTable { observer: o.id.clone(), outcomes }
            })
            .collect();
        Some(LhvModel { sources, responses })
    }
}

pub fn enumerate_deterministic(net: &Network, d: usize) -> Result<DeterministicModels, ClassicalError> {
    if d == 0 {
        return Err(ClassicalError::ZeroCardinality);
    }
    net.validate()?;
    let table_bits: Vec<usize> = net.observers.iter().map(|o| o.num_settings * d.pow(o.ports.len() as u32)).collect();
    let total_bits: usize = table_bits.iter().sum();
    let choices = (d as f64).powi(net.sources.len() as i32);
    let estimate = choices * 2f64.powi(total_bits as i32);
    if total_bits >= 64 || estimate > ENUMERATION_BUDGET as f64 {
        return Err(ClassicalError::ResourceLimit(format!(
            "{estimate:.3e} deterministic models exceed the budget of {ENUMERATION_BUDGET}"
        )));
    }
    let count = (d as u128).pow(net.sources.len() as u32) << total_bits;
    Ok(DeterministicModels { net: net.clone(), d, table_bits, next: 0, count })
}

/// A model that breaks the classical bound, with what was measured on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub index: Option<u64>,
    pub model: LhvModel,
    pub blocks: Vec<f64>,
    pub induced: Vec<Option<Vec<f64>>>,
    pub lhs: f64,
    pub bound: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub samples: u64,
    pub cardinality: usize,
    pub seed: u64,
    pub violations: u64,
    /// Zero-weight blocks found nonzero.
    pub invariant_failures: u64,
    pub joint_fallbacks: u64,
    pub max_lhs: f64,
    pub bound: f64,
    pub counterexample: Option<Counterexample>,
}

/// Checks `samples` random models, model `i` drawn from stream `i` of
/// `seed`, so results do not depend on the thread count.
pub fn random_campaign(
    ineq: &Inequality,
    d: usize,
    samples: u64,
    seed: u64,
) -> Result<CampaignSummary, ClassicalError> {
    ineq.validate()?;
    if d == 0 {
        return Err(ClassicalError::ZeroCardinality);
    }
    struct Acc {
        violations: u64,
        invariant_failures: u64,
        joint_fallbacks: u64,
        max_lhs: f64,
        first: Option<Counterexample>,
    }
    let empty =
        || Acc { violations: 0, invariant_failures: 0, joint_fallbacks: 0, max_lhs: f64::NEG_INFINITY, first: None };
    let merge = |mut a: Acc, b: Acc| {
        a.violations += b.violations;
        a.invariant_failures += b.invariant_failures;
        a.joint_fallbacks += b.joint_fallbacks;
        a.max_lhs = a.max_lhs.max(b.max_lhs);
        a.first = match (a.first, b.first) {
            (Some(x), Some(y)) => Some(if x.index <= y.index { x } else { y }),
            (x, y) => x.or(y),
        };
        a
    };
    let acc = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Acc, ClassicalError> {
            let model = random_model_stream(&ineq.network, d, seed, i)?;
            let mut acc = empty();
            match check_model(ineq, &model) {
                Ok(r) => {
                    acc.max_lhs = r.lhs;
                    acc.joint_fallbacks += u64::from(r.joint_fallback);
                    if !r.satisfied {
                        acc.violations += 1;
                        acc.first = Some(Counterexample {
                            index: Some(i),
                            model,
                            blocks: r.blocks,
                            induced: r.induced,
                            lhs: r.lhs,
                            bound: r.bound,
                            reason: "classical bound exceeded".into(),
                        });
                    }
                }
                Err(e @ ClassicalError::ZeroWeightBlock { .. }) => {
                    acc.invariant_failures += 1;
                    let table = exact_correlators(ineq, &model)?;
                    let blocks = ineq.block_values(&table)?.data;
                    acc.first = Some(Counterexample {
                        index: Some(i),
                        model,
                        blocks,
                        induced: vec![],
                        lhs: f64::NAN,
                        bound: ineq.bound,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
            Ok(acc)
        })
        .try_reduce(empty, |a, b| Ok(merge(a, b)))?;
    Ok(CampaignSummary {
        samples,
        cardinality: d,
        seed,
        violations: acc.violations,
        invariant_failures: acc.invariant_failures,
        joint_fallbacks: acc.joint_fallbacks,
        max_lhs: acc.max_lhs,
        bound: ineq.bound,
        counterexample: acc.first,
    })
}

/// Largest `check_model` value over all deterministic models with alphabet
/// size `d`.
pub fn deterministic_max(ineq: &Inequality, d: usize) -> Result<(f64, LhvModel), ClassicalError> {
    let models: Vec<LhvModel> = enumerate_deterministic(&ineq.network, d)?.collect();
    let results = models.par_iter().map(|m| check_model(ineq, m).map(|r| r.lhs)).collect::<Result<Vec<f64>, _>>()?;
    let (best, _) = results
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok((results[best], models[best].clone()))
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub lhs: f64,
    pub model: LhvModel,
    pub accepted_moves: usize,
}

/// Hill climbing on `check_model`'s left-hand side: single response flips
/// kept when they increase it, alternated with line searches moving
/// probability between two symbols of one source.
pub fn adversarial_search(
    ineq: &Inequality,
    d: usize,
    iters: usize,
    seed: u64,
) -> Result<SearchResult, ClassicalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = random_model_with(&ineq.network, d.max(1), &mut rng);
    let score = |m: &LhvModel| check_model(ineq, m).map(|r| r.lhs);
    let mut best = score(&model)?;
    let mut accepted = 0;
    for it in 0..iters {
        if it % 2 == 0 || d < 2 {
            let k = rng.random_range(0..model.responses.len());
            let s = rng.random_range(0..model.responses[k].outcomes.len());
            let t = rng.random_range(0..model.responses[k].outcomes[s].len());
            model.responses[k].outcomes[s][t] *= -1;
            let v = score(&model)?;
            // From a -∞ start any move is taken, so the walk can leave it.
            if v > best || best == f64::NEG_INFINITY {
                best = v;
                accepted += 1;
            } else {
                model.responses[k].outcomes[s][t] *= -1;
            }
        } else {
            let j = rng.random_range(0..model.sources.len());
            let a = rng.random_range(0..d);
            let b = (a + 1 + rng.random_range(0..d - 1)) % d;
            let mass = model.sources[j].probs[a] + model.sources[j].probs[b];
            let original = (model.sources[j].probs[a], model.sources[j].probs[b]);
            let mut choice = original;
            for step in 0..=10 {
                let pa = (mass * step as f64 / 10.0).min(mass);
                let pb = (mass - pa).max(0.0);
                model.sources[j].probs[a] = pa;
                model.sources[j].probs[b] = pb;
                let v = score(&model)?;
                if v > best {
                    best = v;
                    choice = (pa, pb);
                    accepted += 1;
                }
            }
            model.sources[j].probs[a] = choice.0;
            model.sources[j].probs[b] = choice.1;
        }
    }
    Ok(SearchResult { lhs: best, model, accepted_moves: accepted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extension::{chsh_on, extend_inequality, mermin3_on, Extension};
    use crate::network::{ObserverSpec, SourceSpec};

    fn pair(probs: Vec<f64>, a: Vec<Vec<i8>>, b: Vec<Vec<i8>>) -> (Network, LhvModel) {
        let ineq = chsh_on("A", "B");
        let model = LhvModel {
            sources: vec![LhvSource { id: "S1".into(), probs }],
            responses: vec![
                ResponseTable { observer: "A".into(), outcomes: a },
                ResponseTable { observer: "B".into(), outcomes: b },
            ],
        };
        (ineq.network, model)
    }

    #[test]
    fn perfect_and_absent_correlation() {
        let (net, m) = pair(vec![0.5, 0.5], vec![vec![1, -1]; 2], vec![vec![1, -1]; 2]);
        assert_eq!(exact_correlator(&net, &m, &[0, 1]).unwrap(), 1.0);
        let (net, m) = pair(vec![0.5, 0.5], vec![vec![1, -1]; 2], vec![vec![1, 1]; 2]);
        assert_eq!(exact_correlator(&net, &m, &[0, 0]).unwrap(), 0.0);
        let (net, m) = pair(vec![0.0, 1.0], vec![vec![1, -1], vec![1, 1]], vec![vec![-1, -1]; 2]);
        assert_eq!(exact_correlator(&net, &m, &[0, 0]).unwrap(), 1.0);
        assert_eq!(exact_correlator(&net, &m, &[1, 0]).unwrap(), -1.0);
    }

    #[test]
    fn shape_errors() {
        let (net, mut m) = pair(vec![0.5, 0.5], vec![vec![1, -1]; 2], vec![vec![1, -1]; 2]);
        m.responses[0].outcomes[0].pop();
        assert!(matches!(exact_correlator(&net, &m, &[0, 0]), Err(ClassicalError::Shape(_))));
        let (net, mut m) = pair(vec![0.5, 0.6], vec![vec![1, -1]; 2], vec![vec![1, -1]; 2]);
        assert!(exact_correlator(&net, &m, &[0, 0]).is_err());
        m.sources[0].probs = vec![0.5, 0.5];
        m.responses[1].outcomes[0][0] = 0;
        assert!(exact_correlator(&net, &m, &[0, 0]).is_err());
    }

    #[test]
    fn components_factorize() {
        let o = |id: &str, s: &str| ObserverSpec { id: id.into(), num_settings: 1, ports: vec![(s.into(), 0)] };
        let net = Network {
            sources: vec![SourceSpec { id: "S1".into(), arity: 1 }, SourceSpec { id: "S2".into(), arity: 1 }],
            observers: vec![o("A", "S1"), o("B", "S2")],
        };
        for seed in 0..20 {
            let m = random_model(&net, 3, seed).unwrap();
            let joint = exact_correlator(&net, &m, &[0, 0]).unwrap();
            let marginal = |k: usize| -> f64 {
                m.sources[k].probs.iter().zip(&m.responses[k].outcomes[0]).map(|(p, &a)| p * f64::from(a)).sum()
            };
            assert!((joint - marginal(0) * marginal(1)).abs() < 1e-14);
        }
    }

    fn l_model(l: usize, probs: Vec<f64>, b: Vec<[Vec<i8>; 2]>) -> (Inequality, LhvModel) {
        let ineq = extend_inequality(&chsh_on("A1", "A2"), &Extension::new("A2", l)).unwrap();
        let d = probs.len();
        let mut responses = Vec::new();
        for o in &ineq.network.observers {
            let tuples: usize = o.ports.iter().map(|(sid, _)| if sid == "S1" { 1 } else { d }).product();
            responses.push(ResponseTable { observer: o.id.clone(), outcomes: vec![vec![1; tuples]; o.num_settings] });
        }
        for (k, rows) in b.into_iter().enumerate() {
            let id = ineq.network.port_owners(1)[k + 1].unwrap();
            responses[id].outcomes = rows.to_vec();
        }
        let model = LhvModel {
            sources: vec![LhvSource { id: "S1".into(), probs: vec![1.0] }, LhvSource { id: "S2".into(), probs }],
            responses,
        };
        (ineq, model)
    }

    #[test]
    fn induced_weights_count_sign_patterns() {
        let (ineq, m) = l_model(1, vec![0.5, 0.5], vec![[vec![1, 1], vec![1, -1]]]);
        assert_eq!(induced_weights(&ineq.network, &m, &ineq.weight_groups[0]).unwrap(), vec![0.5, 0.5]);

        let (ineq, m) = l_model(1, vec![0.3, 0.7], vec![[vec![1, -1], vec![1, -1]]]);
        assert_eq!(induced_weights(&ineq.network, &m, &ineq.weight_groups[0]).unwrap(), vec![1.0, 0.0]);

        // Symbol μ realizes pattern μ: bit k-1 set when b^k flips.
        let (ineq, m) = l_model(
            2,
            vec![0.25; 4],
            vec![[vec![1, 1, 1, 1], vec![1, -1, 1, -1]], [vec![1, 1, 1, 1], vec![1, 1, -1, -1]]],
        );
        assert_eq!(induced_weights(&ineq.network, &m, &ineq.weight_groups[0]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn all_plus_model_on_extended_chsh() {
        let (ineq, m) = l_model(2, vec![1.0], vec![[vec![1], vec![1]], [vec![1], vec![1]]]);
        let r = check_model(&ineq, &m).unwrap();
        assert_eq!(r.induced, vec![Some(vec![1.0, 0.0, 0.0, 0.0])]);
        assert!((r.blocks[0] - 1.0).abs() < 1e-12);
        assert!(r.blocks[1..].iter().all(|b| b.abs() < 1e-12));
        assert!((r.lhs - 1.0).abs() < 1e-12 && r.satisfied && !r.joint_fallback);
    }

    #[test]
    fn multi_sourced_group_observer_is_not_inducible() {
        let ineq = extend_inequality(&chsh_on("A1", "A2"), &Extension::new("A2", 1)).unwrap();
        let b = ineq.network.port_owners(1)[1].unwrap();
        let b_id = ineq.network.observers[b].id.clone();
        let ineq = extend_inequality(&ineq, &Extension::new(b_id, 1)).unwrap();
        let m = random_model(&ineq.network, 2, 1).unwrap();
        assert!(matches!(
            induced_weights(&ineq.network, &m, &ineq.weight_groups[0]),
            Err(ClassicalError::NotInducible { .. })
        ));
        let r = check_model(&ineq, &m).unwrap();
        assert!(r.induced[0].is_none() && r.induced[1].is_some());
    }

    #[test]
    fn deterministic_counts_and_maxima() {
        let chsh = chsh_on("A1", "A2");
        assert_eq!(enumerate_deterministic(&chsh.network, 1).unwrap().count(), 16);
        assert_eq!(enumerate_deterministic(&chsh.network, 2).unwrap().count(), 512);
        let values: Vec<f64> =
            enumerate_deterministic(&chsh.network, 1).unwrap().map(|m| check_model(&chsh, &m).unwrap().lhs).collect();
        assert!(values.iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
        assert_eq!(deterministic_max(&chsh, 1).unwrap().0, 1.0);
        assert_eq!(deterministic_max(&mermin3_on(["A1", "A2", "A3"]), 1).unwrap().0, 1.0);
        assert!(matches!(enumerate_deterministic(&chsh.network, 8), Err(ClassicalError::ResourceLimit(_))));
    }

    #[test]
    fn random_models_are_reproducible() {
        let net = chsh_on("A1", "A2").network;
        assert_eq!(random_model(&net, 4, 9).unwrap(), random_model(&net, 4, 9).unwrap());
        assert_ne!(random_model(&net, 4, 9).unwrap(), random_model(&net, 4, 10).unwrap());
        let m = random_model(&net, 1, 3).unwrap();
        assert_eq!(m.sources[0].probs, vec![1.0]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<LhvModel>(&json).unwrap(), m);
    }

    #[test]
    fn correlator_histogram_is_symmetric() {
        let net = chsh_on("A1", "A2").network;
        let values: Vec<f64> = (0..4000)
            .map(|i| {
                let m = random_model_stream(&net, 4, 5, i).unwrap();
                exact_correlator(&net, &m, &[0, 0]).unwrap()
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let positive = values.iter().filter(|&&v| v > 0.0).count() as f64 / values.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((positive - 0.5).abs() < 0.05, "positive fraction {positive}");
    }

    #[test]
    fn small_campaign_and_search_on_chsh() {
        let chsh = chsh_on("A1", "A2");
        let s = random_campaign(&chsh, 4, 500, 42).unwrap();
        assert_eq!(s.violations, 0);
        assert!(s.max_lhs <= 1.0 + BOUND_TOL);
        assert_eq!(s, random_campaign(&chsh, 4, 500, 42).unwrap());
        let best = adversarial_search(&chsh, 2, 200, 1).unwrap();
        assert!((best.lhs - 1.0).abs() < 1e-12, "{}", best.lhs);
    }

    #[test]
    fn conditioned_cells_match_divided_blocks() {
        let ineq = crate::catalog::example3().unwrap().canonical;
        for seed in 0..20 {
            let m = random_model(&ineq.network, 4, seed).unwrap();
            let blocks = ineq.block_values(&exact_correlators(&ineq, &m).unwrap()).unwrap();
            let labels: Vec<_> =
                ineq.weight_groups.iter().map(|g| Some(symbol_labels(&ineq.network, &m, g).unwrap())).collect();
            let induced: Vec<_> =
                ineq.weight_groups.iter().map(|g| Some(induced_weights(&ineq.network, &m, g).unwrap())).collect();
            let r = conditioned_blocks(&ineq, &m, &labels, &induced, &blocks.dims).unwrap();
            for (offset, &b) in blocks.data.iter().enumerate() {
                let idx = blocks.unravel(offset);
                let w: f64 = induced.iter().zip(&idx).map(|(q, &i)| q.as_ref().unwrap()[i]).product();
                assert!((r.data[offset] * w - b).abs() < 1e-12, "seed {seed} cell {idx:?}");
            }
        }
    }

    #[test]
    fn tiny_induced_weight_stays_bounded() {
        let ineq = crate::catalog::example3().unwrap().inequality;
        for seed in 0..50 {
            let mut m = random_model(&ineq.network, 4, seed).unwrap();
            let probs = &mut m.sources[1].probs;
            let moved = probs[1] - 1e-17;
            probs[1] = 1e-17;
            probs[0] += moved;
            let r = check_model(&ineq, &m).unwrap();
            assert!(r.satisfied, "seed {seed}: lhs {}", r.lhs);
        }
    }
}

//! Iterative construction of network inequalities.
//!
//! Given an inequality on a network and an observer `A`, attaching a new
//! `(L+1)`-party source that links `A` to `L` new two-setting observers
//! `B^1..B^L` yields an inequality on the larger network: `A`'s settings are
//! grouped into `2^L` blocks `κ_X`, every term whose `A`-setting lies in
//! `κ_X` is multiplied by `Π_k (b^k_0 + (-1)^{δ^k_X} b^k_1)/2` and divided
//! by a new weight `q_X`. When `A` has fewer than `2^L` settings they are
//! first duplicated up to `lcm(s, 2^L)`, and the bound is multiplied by the
//! duplication multiplicity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expression::{subset_labels, ExpressionError, Inequality, Term, WeightGroup};
use crate::network::{ExtensionIds, Network, NetworkError, ObserverSpec, SourceSpec};

#[derive(Debug, Error)]
pub enum ExtensionError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Expression(#[from] ExpressionError),
    #[error("invalid setting partition for '{observer}': {reason}")]
    BadPartition { observer: String, reason: String },
    #[error("invalid duplication map for '{observer}': {reason}")]
    BadDuplication { observer: String, reason: String },
    #[error("weight group id '{0}' already exists")]
    GroupClash(String),
    #[error("unknown base inequality '{0}' (expected chsh, mermin3 or star_base(L))")]
    UnknownBase(String),
    #[error("L must be at least 1")]
    ZeroL,
    #[error("L = {0} is too large")]
    LTooLarge(usize),
}

/// Assignment of an observer's settings to the `2^L` blocks `κ_X`;
/// `blocks[X]` lists the settings of block `X`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingPartition {
    pub observer: String,
    pub blocks: Vec<Vec<usize>>,
}

/// How an observer's enlarged setting list maps back onto its original one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicationMap {
    pub observer: String,
    pub new_to_old: Vec<usize>,
    pub multiplicity: usize,
}

impl DuplicationMap {
    pub fn identity(observer: &str, settings: usize) -> Self {
        DuplicationMap { observer: observer.into(), new_to_old: (0..settings).collect(), multiplicity: 1 }
    }

    /// Number of original settings the map was built for.
    pub fn original_count(&self) -> usize {
        self.new_to_old.len() / self.multiplicity.max(1)
    }
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn check_l(l: usize) -> Result<(), ExtensionError> {
    match l {
        0 => Err(ExtensionError::ZeroL),
        l if l > 16 => Err(ExtensionError::LTooLarge(l)),
        _ => Ok(()),
    }
}

/// Default duplication of `settings` original settings for an extension by
/// `l` observers: identity when there are already `2^l` or more; otherwise
/// `lcm(settings, 2^l)` new settings. Two original settings are paired by
/// subset-cardinality parity (new setting `X` copies setting `|X| mod 2`);
/// any other count copies setting `i mod settings`.
pub fn default_duplication(observer: &str, settings: usize, l: usize) -> DuplicationMap {
    let blocks = 1usize << l;
    if settings >= blocks {
        return DuplicationMap::identity(observer, settings);
    }
    let count = lcm(settings, blocks);
    let new_to_old =
        (0..count).map(|i| if settings == 2 { (i as u32).count_ones() as usize % 2 } else { i % settings }).collect();
    DuplicationMap { observer: observer.into(), new_to_old, multiplicity: count / settings }
}

/// Enlarges `at`'s setting list as the extension by `l` observers requires.
/// Terms keep their original setting indices; copies are realized when the
/// extension assigns new settings to blocks.
pub fn duplicate_settings(
    ineq: &Inequality,
    at: &str,
    l: usize,
) -> Result<(Inequality, DuplicationMap), ExtensionError> {
    check_l(l)?;
    let obs = ineq.network.observer(at).ok_or_else(|| NetworkError::UnknownObserver(at.into()))?;
    let map = default_duplication(at, obs.num_settings, l);
    let mut out = ineq.clone();
    out.network = ineq.network.with_settings(at, map.new_to_old.len())?;
    Ok((out, map))
}

/// Round-robin partition: setting `i` goes to block `i mod 2^l`. With
/// exactly `2^l` settings this is the trivial partition `κ_X = {X}`.
pub fn default_partition(observer: &str, settings: usize, l: usize) -> SettingPartition {
    let n = 1usize << l;
    let mut blocks = vec![Vec::new(); n];
    for i in 0..settings {
        blocks[i % n].push(i);
    }
    SettingPartition { observer: observer.into(), blocks }
}

/// One extension step. Unset fields take their defaults.
#[derive(Debug, Clone, Default)]
pub struct Extension {
    pub at: String,
    pub l: usize,
    pub group: Option<String>,
    pub ids: Option<ExtensionIds>,
    pub partition: Option<SettingPartition>,
    pub duplication: Option<DuplicationMap>,
}

impl Extension {
    pub fn new(at: impl Into<String>, l: usize) -> Self {
        Extension { at: at.into(), l, ..Default::default() }
    }

    pub fn group(mut self, id: impl Into<String>) -> Self {
        self.group = Some(id.into());
        self
    }

    pub fn named(mut self, source: impl Into<String>, observers: &[&str]) -> Self {
        self.ids =
            Some(ExtensionIds { source: source.into(), observers: observers.iter().map(|s| s.to_string()).collect() });
        self
    }
}

pub fn extend_inequality(ineq: &Inequality, step: &Extension) -> Result<Inequality, ExtensionError> {
    check_l(step.l)?;
    ineq.validate()?;
    let l = step.l;
    let n_blocks = 1usize << l;
    let at = step.at.as_str();
    let at_idx = ineq.network.observer_index(at).ok_or_else(|| NetworkError::UnknownObserver(at.into()))?;
    let current = ineq.network.observers[at_idx].num_settings;

    let group_id = step.group.clone().unwrap_or_else(|| {
        let mut n = ineq.weight_groups.len() + 1;
        while ineq.group_index(&format!("q{n}")).is_some() {
            n += 1;
        }
        format!("q{n}")
    });
    if ineq.group_index(&group_id).is_some() {
        return Err(ExtensionError::GroupClash(group_id));
    }

    let dup = match &step.duplication {
        Some(d) => d.clone(),
        None => default_duplication(at, current, l),
    };
    let original = check_duplication(ineq, at_idx, current, &dup)?;
    let new_count = dup.new_to_old.len();

    let partition = match &step.partition {
        Some(p) => p.clone(),
        None => default_partition(at, new_count, l),
    };
    let block_of = check_partition(&partition, at, new_count, n_blocks)?;

    let mut preimages = vec![Vec::new(); original];
    for (i, &j) in dup.new_to_old.iter().enumerate() {
        preimages[j].push(i);
    }

    let ids = match &step.ids {
        Some(ids) => {
            if ids.observers.len() != l {
                return Err(NetworkError::ObserverCount { expected: l, got: ids.observers.len() }.into());
            }
            ids.clone()
        }
        None => {
            let letter = (b'B' + ineq.weight_groups.len().min(24) as u8) as char;
            ineq.network.default_extension_ids(l, letter)
        }
    };
    let network = ineq.network.with_settings(at, new_count)?.extend_named(at, &ids)?;

    let mut groups = ineq.weight_groups.clone();
    groups.push(WeightGroup { id: group_id, source: ids.source.clone(), labels: subset_labels(l) });

    let scale = 1.0 / n_blocks as f64;
    let mut terms = Vec::with_capacity(ineq.terms.len() * dup.multiplicity * n_blocks);
    for t in &ineq.terms {
        for &i in &preimages[t.settings[at_idx]] {
            let x = block_of[i];
            for pattern in 0..n_blocks as u32 {
                let sign = if (x & pattern).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                let mut settings = t.settings.clone();
                settings[at_idx] = i;
                settings.extend((0..l).map(|k| (pattern >> k & 1) as usize));
                let mut weights = t.weights.clone();
                weights.push(Some(x));
                terms.push(Term { coeff: t.coeff * sign * scale, settings, weights });
            }
        }
    }

    let out = Inequality { network, weight_groups: groups, terms, bound: ineq.bound * dup.multiplicity as f64 };
    Ok(out.canonicalize())
}

/// Validates `dup` against the inequality and returns the original setting
/// count. The inequality may or may not have had its settings enlarged yet.
fn check_duplication(
    ineq: &Inequality,
    at_idx: usize,
    current: usize,
    dup: &DuplicationMap,
) -> Result<usize, ExtensionError> {
    let at = &ineq.network.observers[at_idx].id;
    let bad = |reason: String| ExtensionError::BadDuplication { observer: at.clone(), reason };
    if &dup.observer != at {
        return Err(bad(format!("map is for '{}'", dup.observer)));
    }
    let m = dup.multiplicity;
    if m == 0 {
        return Err(bad("multiplicity must be positive".into()));
    }
    let len = dup.new_to_old.len();
    let original = if len == current * m {
        current
    } else if len == current && current.is_multiple_of(m) {
        current / m
    } else {
        return Err(bad(format!("{len} new settings do not match {current} settings with multiplicity {m}")));
    };
    let mut counts = vec![0usize; original];
    for &j in &dup.new_to_old {
        if j >= original {
            return Err(bad(format!("original setting {j} out of range")));
        }
        counts[j] += 1;
    }
    if counts.iter().any(|&c| c != m) {
        return Err(bad(format!("every original setting needs exactly {m} copies")));
    }
    if ineq.terms.iter().any(|t| t.settings[at_idx] >= original) {
        return Err(bad("terms use settings beyond the original ones".into()));
    }
    Ok(original)
}

/// Block label of every setting.
fn check_partition(
    p: &SettingPartition,
    at: &str,
    settings: usize,
    n_blocks: usize,
) -> Result<Vec<u32>, ExtensionError> {
    let bad = |reason: String| ExtensionError::BadPartition { observer: at.into(), reason };
    if p.observer != at {
        return Err(bad(format!("partition is for '{}'", p.observer)));
    }
    if p.blocks.len() != n_blocks {
        return Err(bad(format!("expected {n_blocks} blocks, got {}", p.blocks.len())));
    }
    let mut block_of = vec![None; settings];
    for (x, block) in p.blocks.iter().enumerate() {
        if block.is_empty() {
            return Err(bad(format!("block {x} is empty")));
        }
        for &i in block {
            if i >= settings {
                return Err(bad(format!("setting {i} out of range")));
            }
            if block_of[i].replace(x as u32).is_some() {
                return Err(bad(format!("setting {i} appears in two blocks")));
            }
        }
    }
    block_of.into_iter().enumerate().map(|(i, b)| b.ok_or_else(|| bad(format!("setting {i} is in no block")))).collect()
}

/// Starting inequalities with bound 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Base {
    Chsh,
    Mermin3,
    StarBase(usize),
}

impl FromStr for Base {
    type Err = ExtensionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "chsh" => return Ok(Base::Chsh),
            "mermin3" | "mermin" => return Ok(Base::Mermin3),
            _ => {}
        }
        let arg = lower
            .strip_prefix("star_base")
            .map(|r| r.trim_start_matches(['(', ':']).trim_end_matches(')'))
            .and_then(|r| r.parse::<usize>().ok());
        match arg {
            Some(l) if l >= 1 => Ok(Base::StarBase(l)),
            _ => Err(ExtensionError::UnknownBase(s.into())),
        }
    }
}

impl fmt::Display for Base {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Base::Chsh => write!(f, "chsh"),
            Base::Mermin3 => write!(f, "mermin3"),
            Base::StarBase(l) => write!(f, "star_base({l})"),
        }
    }
}

fn single_source(ids: &[String], settings: &[usize]) -> Network {
    Network {
        sources: vec![SourceSpec { id: "S1".into(), arity: ids.len() }],
        observers: ids
            .iter()
            .zip(settings)
            .enumerate()
            .map(|(p, (id, &s))| ObserverSpec { id: id.clone(), num_settings: s, ports: vec![("S1".into(), p)] })
            .collect(),
    }
}

/// `<(a1_0 + a1_1)/2 a2_0> + <(a1_0 - a1_1)/2 a2_1> <= 1` on observers
/// `first` (the averaged side) and `second`.
pub fn chsh_on(first: &str, second: &str) -> Inequality {
    let mut ineq = Inequality::new(single_source(&[first.into(), second.into()], &[2, 2]), 1.0);
    for (a, b, c) in [(0, 0, 0.5), (1, 0, 0.5), (0, 1, 0.5), (1, 1, -0.5)] {
        ineq.terms.push(Term { coeff: c, settings: vec![a, b], weights: vec![] });
    }
    ineq.canonicalize()
}

/// `<(a1_0 a2_1 + a1_1 a2_0)/2 a3_0> + <(a1_0 a2_0 - a1_1 a2_1)/2 a3_1> <= 1`.
pub fn mermin3_on(ids: [&str; 3]) -> Inequality {
    let names: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    let mut ineq = Inequality::new(single_source(&names, &[2, 2, 2]), 1.0);
    for (a, b, c, coeff) in [(0, 1, 0, 0.5), (1, 0, 0, 0.5), (0, 0, 1, 0.5), (1, 1, 1, -0.5)] {
        ineq.terms.push(Term { coeff, settings: vec![a, b, c], weights: vec![] });
    }
    ineq.canonicalize()
}

/// Star-network base on one `(L+1)`-party source: leaves `A1_1..A1_L`
/// and hub `A1_{L+1}` with `2^L` settings;
/// `Σ_X <Π_k (a^k_0 + (-1)^{δ^k_X} a^k_1)/2 · hub_X> <= 1`.
pub fn star_base(l: usize) -> Result<Inequality, ExtensionError> {
    check_l(l)?;
    let n = 1usize << l;
    let mut ids: Vec<String> = (1..=l).map(|k| format!("A1_{k}")).collect();
    ids.push(format!("A1_{}", l + 1));
    let mut settings = vec![2; l];
    settings.push(n);
    let mut ineq = Inequality::new(single_source(&ids, &settings), 1.0);
    for x in 0..n as u32 {
        for pattern in 0..n as u32 {
            let sign = if (x & pattern).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            let mut s: Vec<usize> = (0..l).map(|k| (pattern >> k & 1) as usize).collect();
            s.push(x as usize);
            ineq.terms.push(Term { coeff: sign / n as f64, settings: s, weights: vec![] });
        }
    }
    Ok(ineq.canonicalize())
}

pub fn build_base(base: Base) -> Result<Inequality, ExtensionError> {
    match base {
        Base::Chsh => Ok(chsh_on("A1", "A2")),
        Base::Mermin3 => Ok(mermin3_on(["A1", "A2", "A3"])),
        Base::StarBase(l) => star_base(l),
    }
}

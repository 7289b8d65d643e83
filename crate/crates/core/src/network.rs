//! Tree-structured networks of independent sources and observers.
//!
//! A network is a bipartite arrangement: every source emits a system split
//! into `arity` parts (ports), and every port is received by exactly one
//! observer. Observers may hold ports of several sources. The constructions
//! in this crate are only valid when the source/observer incidence graph has
//! no cycle, so [`Network::validate`] checks the forest condition alongside
//! the wiring invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub id: String,
    pub arity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverSpec {
    pub id: String,
    #[serde(rename = "settings")]
    pub num_settings: usize,
    /// Received subsystems as `(source id, port index)`, in the order the
    /// observer's local observables factor over them.
    pub ports: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Network {
    pub sources: Vec<SourceSpec>,
    pub observers: Vec<ObserverSpec>,
}

/// A single broken structural invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateSourceId(String),
    DuplicateObserverId(String),
    ZeroArity(String),
    ZeroSettings(String),
    UnknownSource { observer: String, source: String },
    PortOutOfRange { observer: String, source: String, port: usize },
    PortClaimedTwice { source: String, port: usize, first: String, second: String },
    DanglingPort { source: String, port: usize },
    Cycle { source: String, observer: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSourceId(id) => write!(f, "duplicate source id '{id}'"),
            Violation::DuplicateObserverId(id) => write!(f, "duplicate observer id '{id}'"),
            Violation::ZeroArity(id) => write!(f, "source '{id}' has arity 0"),
            Violation::ZeroSettings(id) => write!(f, "observer '{id}' has no settings"),
            Violation::UnknownSource { observer, source } => {
                write!(f, "observer '{observer}' references unknown source '{source}'")
            }
            Violation::PortOutOfRange { observer, source, port } => {
                write!(f, "observer '{observer}' references port {port} of source '{source}', which does not exist")
            }
            Violation::PortClaimedTwice { source, port, first, second } => {
                write!(f, "port {port} of source '{source}' claimed by both '{first}' and '{second}'")
            }
            Violation::DanglingPort { source, port } => {
                write!(f, "dangling port: port {port} of source '{source}' is unassigned")
            }
            Violation::Cycle { source, observer } => {
                write!(f, "cycle detected: link between source '{source}' and observer '{observer}' closes a loop")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown observer '{0}'")]
    UnknownObserver(String),
    #[error("unknown source '{0}'")]
    UnknownSource(String),
    #[error("extension needs at least one new observer")]
    EmptyExtension,
    #[error("id '{0}' is already used in the network")]
    IdClash(String),
    #[error("expected {expected} new observer ids, got {got}")]
    ObserverCount { expected: usize, got: usize },
    #[error("invalid network: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Ids for the parts created by [`Network::extend_named`].
#[derive(Debug, Clone)]
pub struct ExtensionIds {
    pub source: String,
    pub observers: Vec<String>,
}

impl Network {
    pub fn source_index(&self, id: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.id == id)
    }

    pub fn observer_index(&self, id: &str) -> Option<usize> {
        self.observers.iter().position(|o| o.id == id)
    }

    pub fn observer(&self, id: &str) -> Option<&ObserverSpec> {
        self.observers.iter().find(|o| o.id == id)
    }

    pub fn total_parties(&self) -> usize {
        self.sources.iter().map(|s| s.arity).sum()
    }

    fn id_in_use(&self, id: &str) -> bool {
        self.source_index(id).is_some() || self.observer_index(id).is_some()
    }

    /// Observer index holding each port of `source`, in port order.
    /// Only meaningful on a validated network.
    pub fn port_owners(&self, source: usize) -> Vec<Option<usize>> {
        let src = &self.sources[source];
        let mut owners = vec![None; src.arity];
        for (k, obs) in self.observers.iter().enumerate() {
            for (sid, port) in &obs.ports {
                if *sid == src.id && *port < src.arity {
                    owners[*port] = Some(k);
                }
            }
        }
        owners
    }

    /// Lists every broken invariant; an empty list means the network is a
    /// valid forest with a complete, unambiguous port assignment.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let mut seen = BTreeSet::new();
        for s in &self.sources {
            if !seen.insert(s.id.as_str()) {
                out.push(Violation::DuplicateSourceId(s.id.clone()));
            }
            if s.arity == 0 {
                out.push(Violation::ZeroArity(s.id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for o in &self.observers {
            if !seen.insert(o.id.as_str()) {
                out.push(Violation::DuplicateObserverId(o.id.clone()));
            }
            if o.num_settings == 0 {
                out.push(Violation::ZeroSettings(o.id.clone()));
            }
        }

        let arity: BTreeMap<&str, usize> = self.sources.iter().map(|s| (s.id.as_str(), s.arity)).collect();
        let mut claimed: BTreeMap<(&str, usize), &str> = BTreeMap::new();
        for o in &self.observers {
            for (sid, port) in &o.ports {
                match arity.get(sid.as_str()) {
                    None => out.push(Violation::UnknownSource { observer: o.id.clone(), source: sid.clone() }),
                    Some(&a) if *port >= a => {
                        out.push(Violation::PortOutOfRange { observer: o.id.clone(), source: sid.clone(), port: *port })
                    }
                    Some(_) => {
                        if let Some(first) = claimed.insert((sid.as_str(), *port), o.id.as_str()) {
                            out.push(Violation::PortClaimedTwice {
                                source: sid.clone(),
                                port: *port,
                                first: first.to_string(),
                                second: o.id.clone(),
                            });
                        }
                    }
                }
            }
        }
        for s in &self.sources {
            for port in 0..s.arity {
                if !claimed.contains_key(&(s.id.as_str(), port)) {
                    out.push(Violation::DanglingPort { source: s.id.clone(), port });
                }
            }
        }

        // Several ports of one source held by the same observer form a single
        // link; only distinct (source, observer) links can close a cycle.
        let n_src = self.sources.len();
        let mut dsu = DisjointSets::new(n_src + self.observers.len());
        let mut links = BTreeSet::new();
        for (k, o) in self.observers.iter().enumerate() {
            for (sid, _) in &o.ports {
                if let Some(j) = self.source_index(sid) {
                    if links.insert((j, k)) && !dsu.union(j, n_src + k) {
                        out.push(Violation::Cycle { source: sid.clone(), observer: o.id.clone() });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(NetworkError::Invalid(v))
        }
    }

    /// Attaches a new `(L+1)`-party source at `at` with `L` fresh observers,
    /// naming them automatically. See [`Network::extend_named`].
    pub fn extend(&self, at: &str, l: usize) -> Result<Network, NetworkError> {
        let ids = self.default_extension_ids(l, self.next_letter());
        self.extend_named(at, &ids)
    }

    /// Fresh source id `S<n>` and observer ids `<letter>1..<letter>L`,
    /// skipping anything already taken.
    pub fn default_extension_ids(&self, l: usize, letter: char) -> ExtensionIds {
        let mut n = self.sources.len() + 1;
        while self.id_in_use(&format!("S{n}")) {
            n += 1;
        }
        let source = format!("S{n}");
        let mut observers = Vec::with_capacity(l);
        for k in 1..=l {
            let mut id = format!("{letter}{k}");
            while self.id_in_use(&id) || observers.contains(&id) || id == source {
                id.push('\'');
            }
            observers.push(id);
        }
        ExtensionIds { source, observers }
    }

    /// Letter used for the next generation of automatically named observers:
    /// `B` after a base network, then `C`, `D`, ... per extension.
    fn next_letter(&self) -> char {
        let gen = self.sources.len().saturating_sub(1).min(24) as u8;
        (b'B' + gen) as char
    }

    /// Returns a new network with an added source of arity `L+1` whose port 0
    /// goes to observer `at` and whose ports `1..=L` go to `L` new
    /// two-setting observers.
    pub fn extend_named(&self, at: &str, ids: &ExtensionIds) -> Result<Network, NetworkError> {
        let l = ids.observers.len();
        if l == 0 {
            return Err(NetworkError::EmptyExtension);
        }
        let at_idx = self.observer_index(at).ok_or_else(|| NetworkError::UnknownObserver(at.to_string()))?;
        for id in std::iter::once(&ids.source).chain(ids.observers.iter()) {
            if self.id_in_use(id) {
                return Err(NetworkError::IdClash(id.clone()));
            }
        }
        let distinct: BTreeSet<&String> = std::iter::once(&ids.source).chain(ids.observers.iter()).collect();
        if distinct.len() != l + 1 {
            return Err(NetworkError::IdClash(ids.source.clone()));
        }

        let mut net = self.clone();
        net.sources.push(SourceSpec { id: ids.source.clone(), arity: l + 1 });
        net.observers[at_idx].ports.push((ids.source.clone(), 0));
        for (k, id) in ids.observers.iter().enumerate() {
            net.observers.push(ObserverSpec {
                id: id.clone(),
                num_settings: 2,
                ports: vec![(ids.source.clone(), k + 1)],
            });
        }
        Ok(net)
    }

    pub fn with_settings(&self, observer: &str, num_settings: usize) -> Result<Network, NetworkError> {
        let idx = self.observer_index(observer).ok_or_else(|| NetworkError::UnknownObserver(observer.to_string()))?;
        let mut net = self.clone();
        net.observers[idx].num_settings = num_settings;
        Ok(net)
    }

    pub fn layout(&self) -> Result<QubitLayout, NetworkError> {
        self.validate()?;
        Ok(QubitLayout::new(self))
    }
}

/// Global ordering of every `(source, port)` subsystem: sources in
/// declaration order, ports ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QubitLayout {
    pub source_offsets: Vec<usize>,
    /// Global indices held by each observer, in the observer's port order.
    pub observer_qubits: Vec<Vec<usize>>,
    pub total: usize,
}

impl QubitLayout {
    fn new(net: &Network) -> Self {
        let mut source_offsets = Vec::with_capacity(net.sources.len());
        let mut total = 0;
        for s in &net.sources {
            source_offsets.push(total);
            total += s.arity;
        }
        let observer_qubits = net
            .observers
            .iter()
            .map(|o| {
                o.ports
                    .iter()
                    .map(|(sid, port)| source_offsets[net.source_index(sid).expect("validated")] + port)
                    .collect()
            })
            .collect();
        QubitLayout { source_offsets, observer_qubits, total }
    }

    pub fn qubit(&self, source: usize, port: usize) -> usize {
        self.source_offsets[source] + port
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(id: &str, ports: &[(&str, usize)]) -> ObserverSpec {
        ObserverSpec { id: id.into(), num_settings: 2, ports: ports.iter().map(|(s, p)| (s.to_string(), *p)).collect() }
    }

    fn src(id: &str, arity: usize) -> SourceSpec {
        SourceSpec { id: id.into(), arity }
    }

    fn bell_pair() -> Network {
        Network { sources: vec![src("S1", 2)], observers: vec![obs("A1", &[("S1", 0)]), obs("A2", &[("S1", 1)])] }
    }

    #[test]
    fn bell_pair_is_valid() {
        assert!(bell_pair().violations().is_empty());
    }

    #[test]
    fn triangle_has_cycle() {
        let net = Network {
            sources: vec![src("AB", 2), src("BC", 2), src("CA", 2)],
            observers: vec![
                obs("A", &[("AB", 0), ("CA", 1)]),
                obs("B", &[("AB", 1), ("BC", 0)]),
                obs("C", &[("BC", 1), ("CA", 0)]),
            ],
        };
        let v = net.violations();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("cycle detected"));
    }

    #[test]
    fn dangling_port_reported() {
        let net = Network { sources: vec![src("S1", 2)], observers: vec![obs("A1", &[("S1", 0)])] };
        let v = net.violations();
        assert_eq!(v, vec![Violation::DanglingPort { source: "S1".into(), port: 1 }]);
        assert!(v[0].to_string().contains("dangling port"));
    }

    #[test]
    fn double_claim_and_bad_refs() {
        let net = Network {
            sources: vec![src("S1", 2)],
            observers: vec![obs("A1", &[("S1", 0), ("S9", 0)]), obs("A2", &[("S1", 0), ("S1", 5)])],
        };
        let v = net.violations();
        assert!(v.contains(&Violation::UnknownSource { observer: "A1".into(), source: "S9".into() }));
        assert!(v.contains(&Violation::PortOutOfRange { observer: "A2".into(), source: "S1".into(), port: 5 }));
        assert!(v.iter().any(|x| matches!(x, Violation::PortClaimedTwice { .. })));
        assert!(v.contains(&Violation::DanglingPort { source: "S1".into(), port: 1 }));
    }

    #[test]
    fn two_ports_of_one_source_is_not_a_cycle() {
        let net = Network {
            sources: vec![src("S1", 3)],
            observers: vec![obs("A", &[("S1", 0), ("S1", 1)]), obs("B", &[("S1", 2)])],
        };
        assert!(net.violations().is_empty());
    }

    #[test]
    fn disconnected_forest_is_allowed() {
        let net = Network {
            sources: vec![src("S1", 2), src("S2", 2)],
            observers: vec![
                obs("A", &[("S1", 0)]),
                obs("B", &[("S1", 1)]),
                obs("C", &[("S2", 0)]),
                obs("D", &[("S2", 1)]),
            ],
        };
        assert!(net.violations().is_empty());
    }

    #[test]
    fn extend_builds_example_one_network() {
        let net = bell_pair().extend("A2", 2).unwrap();
        assert_eq!(net.sources[1], src("S2", 3));
        assert_eq!(net.observer("A2").unwrap().ports, vec![("S1".into(), 1), ("S2".into(), 0)]);
        assert_eq!(net.observer("B1").unwrap().ports, vec![("S2".into(), 1)]);
        assert_eq!(net.observer("B2").unwrap().ports, vec![("S2".into(), 2)]);
        assert_eq!(net.observer("B1").unwrap().num_settings, 2);
        assert!(net.violations().is_empty());

        let layout = net.layout().unwrap();
        assert_eq!(layout.source_offsets, vec![0, 2]);
        assert_eq!(layout.observer_qubits[net.observer_index("A2").unwrap()], vec![1, 2]);
        assert_eq!(layout.total, 5);
    }

    #[test]
    fn extend_three_party_bell_with_two_party_source() {
        let net = Network {
            sources: vec![src("S1", 3)],
            observers: vec![obs("A1", &[("S1", 0)]), obs("A2", &[("S1", 1)]), obs("A3", &[("S1", 2)])],
        };
        let ext = net.extend("A3", 1).unwrap();
        assert_eq!(ext.sources[1].arity, 2);
        assert_eq!(ext.observers.len(), 4);
        assert!(ext.violations().is_empty());
        let layout = ext.layout().unwrap();
        assert_eq!(layout.observer_qubits[2], vec![2, 3]);
    }

    #[test]
    fn extend_errors() {
        assert!(matches!(bell_pair().extend("Z", 1), Err(NetworkError::UnknownObserver(_))));
        assert!(matches!(bell_pair().extend("A1", 0), Err(NetworkError::EmptyExtension)));
        let ids = ExtensionIds { source: "S2".into(), observers: vec!["A1".into()] };
        assert!(matches!(bell_pair().extend_named("A2", &ids), Err(NetworkError::IdClash(_))));
    }

    #[test]
    fn chain_growth_stays_a_forest() {
        let mut net = bell_pair();
        let mut at = "A2".to_string();
        for _ in 0..5 {
            net = net.extend(&at, 1).unwrap();
            assert!(net.violations().is_empty());
            at = net.observers.last().unwrap().id.clone();
        }
        assert_eq!(net.sources.len(), 6);
    }

    #[test]
    fn layout_of_single_source() {
        let net = Network {
            sources: vec![src("S1", 3)],
            observers: vec![obs("A1", &[("S1", 0)]), obs("A2", &[("S1", 1)]), obs("A3", &[("S1", 2)])],
        };
        let l = net.layout().unwrap();
        assert_eq!(l.observer_qubits, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn layout_of_three_source_chain() {
        // Mermin triple, then B1,B2 at A3, then C1,C2 at B2.
        let net = Network {
            sources: vec![src("S1", 3)],
            observers: vec![obs("A1", &[("S1", 0)]), obs("A2", &[("S1", 1)]), obs("A3", &[("S1", 2)])],
        }
        .extend("A3", 2)
        .unwrap()
        .extend("B2", 2)
        .unwrap();
        let l = net.layout().unwrap();
        assert_eq!(l.total, 9);
        let b2 = net.observer_index("B2").unwrap();
        assert_eq!(l.observer_qubits[b2], vec![5, 6]);
        let c2 = net.observer_index("C2").unwrap();
        assert_eq!(l.observer_qubits[c2], vec![8]);
    }

    #[test]
    fn json_keys_match_file_format() {
        let json = serde_json::to_string(&bell_pair()).unwrap();
        assert_eq!(
            json,
            r#"{"sources":[{"id":"S1","arity":2}],"observers":[{"id":"A1","settings":2,"ports":[["S1",0]]},{"id":"A2","settings":2,"ports":[["S1",1]]}]}"#
        );
    }

    fn random_tree() -> impl Strategy<Value = Network> {
        proptest::collection::vec((0usize..16, 1usize..4), 1..6).prop_map(|steps| {
            let mut net = bell_pair();
            for (pick, l) in steps {
                let at = net.observers[pick % net.observers.len()].id.clone();
                net = net.extend(&at, l).unwrap();
            }
            net
        })
    }

    proptest! {
        #[test]
        fn extension_preserves_validity(net in random_tree()) {
            prop_assert!(net.violations().is_empty());
        }

        #[test]
        fn layout_is_bijection_and_order_free(net in random_tree(), rot in 0usize..8) {
            let layout = net.layout().unwrap();
            let mut all: Vec<usize> = layout.observer_qubits.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..net.total_parties()).collect::<Vec<_>>());

            let mut shuffled = net.clone();
            let k = rot % shuffled.observers.len();
            shuffled.observers.rotate_left(k);
            let other = shuffled.layout().unwrap();
            for (i, o) in net.observers.iter().enumerate() {
                let j = shuffled.observer_index(&o.id).unwrap();
                prop_assert_eq!(&layout.observer_qubits[i], &other.observer_qubits[j]);
            }
        }
    }
}

//! `tr[(⊗_j ρ_j)(⊗_k O_k)]` by contracting along the network tree.
//!
//! Every qubit is shared by exactly one source and one observer. Pairing the
//! ket and bra index of a qubit into one index of size 4, the trace is the
//! full contraction of a tensor network whose graph is the source/observer
//! forest, so it can be evaluated leaf to root with messages no larger than
//! the biggest node.

use num_complex::Complex64;

use super::{max_qubits, Matrix, QuantumError, QuantumStrategy};
use crate::network::Network;

/// Nodes with more qubits than this would need more than 4^11 entries.
const MAX_NODE_QUBITS: usize = 11;

#[derive(Debug, Clone)]
struct Node {
    /// Global qubit ids, first one most significant.
    axes: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Step {
    node: usize,
    /// Child nodes, with the positions (in this node's axes) of the
    /// qubits each child shares with it.
    children: Vec<(usize, Vec<usize>)>,
    /// Positions of the qubits shared with the parent; empty at a root.
    up: Vec<usize>,
}

/// Prepared contraction for one network and strategy.
#[derive(Debug, Clone)]
pub struct Evaluator {
    n_sources: usize,
    nodes: Vec<Node>,
    source_tensors: Vec<Vec<Complex64>>,
    /// Per observer, per setting.
    observer_tensors: Vec<Vec<Vec<Complex64>>>,
    /// Post-order over all components; roots have empty `up`.
    plan: Vec<Step>,
}

impl Evaluator {
    pub fn new(net: &Network, strat: &QuantumStrategy) -> Result<Self, QuantumError> {
        strat.check(net)?;
        let layout = net.layout()?;
        let cap = max_qubits();
        if layout.total > cap {
            return Err(QuantumError::ResourceLimit(format!(
                "network has {} qubits; the limit is {cap} (TREEBELL_MAX_QUBITS)",
                layout.total
            )));
        }

        let mut nodes = Vec::new();
        let mut source_tensors = Vec::new();
        for (j, s) in net.sources.iter().enumerate() {
            let axes: Vec<usize> = (0..s.arity).map(|p| layout.qubit(j, p)).collect();
            check_node_size(&s.id, axes.len())?;
            source_tensors.push(state_tensor(&strat.states[&s.id].density(), axes.len()));
            nodes.push(Node { axes });
        }
        let mut observer_tensors = Vec::new();
        for (k, o) in net.observers.iter().enumerate() {
            let axes = layout.observer_qubits[k].clone();
            check_node_size(&o.id, axes.len())?;
            observer_tensors
                .push(strat.observables[&o.id].iter().map(|ob| observable_tensor(&ob.matrix, axes.len())).collect());
            nodes.push(Node { axes });
        }

        let plan = plan(&nodes, net.sources.len(), layout.total);
        Ok(Evaluator { n_sources: net.sources.len(), nodes, source_tensors, observer_tensors, plan })
    }

    /// Full correlator for one setting per observer, real and clamped to
    /// `[-1, 1]`.
    pub fn correlator(&self, settings: &[usize]) -> Result<f64, QuantumError> {
        if settings.len() != self.observer_tensors.len() {
            return Err(QuantumError::Dimension(format!(
                "{} settings for {} observers",
                settings.len(),
                self.observer_tensors.len()
            )));
        }
        for (k, (&s, list)) in settings.iter().zip(&self.observer_tensors).enumerate() {
            if s >= list.len() {
                return Err(QuantumError::Dimension(format!("setting {s} out of range for observer {k}")));
            }
        }
        let mut messages: Vec<Option<Vec<Complex64>>> = vec![None; self.nodes.len()];
        let mut value = Complex64::new(1.0, 0.0);
        for step in &self.plan {
            let tensor = if step.node < self.n_sources {
                &self.source_tensors[step.node]
            } else {
                let k = step.node - self.n_sources;
                &self.observer_tensors[k][settings[k]]
            };
            let children: Vec<(&[usize], Vec<Complex64>)> = step
                .children
                .iter()
                .map(|(c, pos)| (pos.as_slice(), messages[*c].take().expect("child contracted first")))
                .collect();
            let msg = contract_node(tensor, self.nodes[step.node].axes.len(), &children, &step.up);
            if step.up.is_empty() {
                value *= msg[0];
            } else {
                messages[step.node] = Some(msg);
            }
        }
        if value.im.abs() > 1e-9 {
            return Err(QuantumError::Imaginary(value.im));
        }
        Ok(value.re.clamp(-1.0, 1.0))
    }
}

fn check_node_size(id: &str, qubits: usize) -> Result<(), QuantumError> {
    if qubits > MAX_NODE_QUBITS {
        return Err(QuantumError::ResourceLimit(format!(
            "'{id}' acts on {qubits} qubits; at most {MAX_NODE_QUBITS} per source or observer"
        )));
    }
    Ok(())
}

/// Entry at base-4 digits `(ket_p, bra_p)` is `ρ[ket, bra]`.
fn state_tensor(rho: &Matrix, n: usize) -> Vec<Complex64> {
    (0..1usize << (2 * n))
        .map(|a| {
            let (ket, bra) = split_digits(a, n);
            rho[(ket, bra)]
        })
        .collect()
}

/// Entry at base-4 digits `(ket_p, bra_p)` is `O[bra, ket]`, so that the
/// contraction with the state tensor is `Σ ρ_ij O_ji`.
fn observable_tensor(o: &Matrix, n: usize) -> Vec<Complex64> {
    (0..1usize << (2 * n))
        .map(|a| {
            let (ket, bra) = split_digits(a, n);
            o[(bra, ket)]
        })
        .collect()
}

/// Splits a base-4 index over `n` axes into ket and bra bit strings.
fn split_digits(a: usize, n: usize) -> (usize, usize) {
    let (mut ket, mut bra) = (0, 0);
    for p in 0..n {
        let digit = (a >> (2 * (n - 1 - p))) & 3;
        ket = (ket << 1) | (digit >> 1);
        bra = (bra << 1) | (digit & 1);
    }
    (ket, bra)
}

/// Index into a message over the axes at `positions` (first most
/// significant) given the node's full digit vector.
fn sub_index(digits: &[usize], positions: &[usize]) -> usize {
    positions.iter().fold(0, |acc, &p| acc * 4 + digits[p])
}

fn contract_node(
    tensor: &[Complex64],
    n_axes: usize,
    children: &[(&[usize], Vec<Complex64>)],
    up: &[usize],
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); 1 << (2 * up.len())];
    let mut digits = vec![0usize; n_axes];
    for (a, &t) in tensor.iter().enumerate() {
        if t == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (p, d) in digits.iter_mut().enumerate() {
            *d = (a >> (2 * (n_axes - 1 - p))) & 3;
        }
        let mut v = t;
        for (pos, msg) in children {
            v *= msg[sub_index(&digits, pos)];
        }
        out[sub_index(&digits, up)] += v;
    }
    out
}

/// Roots every component at its lowest-index node and lists nodes in
/// post-order. Sources are nodes `0..n_sources`, observers follow.
fn plan(nodes: &[Node], n_sources: usize, n_qubits: usize) -> Vec<Step> {
    // Each qubit links its source to its observer.
    let mut owner_of = vec![(usize::MAX, usize::MAX); n_qubits];
    for (i, n) in nodes.iter().enumerate() {
        for &q in &n.axes {
            if i < n_sources {
                owner_of[q].0 = i;
            } else {
                owner_of[q].1 = i;
            }
        }
    }
    let neighbours = |i: usize| -> Vec<usize> {
        let mut v: Vec<usize> =
            nodes[i].axes.iter().map(|&q| if i < n_sources { owner_of[q].1 } else { owner_of[q].0 }).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let shared = |i: usize, j: usize| -> Vec<usize> {
        let mut qs: Vec<usize> = nodes[i].axes.iter().copied().filter(|q| nodes[j].axes.contains(q)).collect();
        qs.sort_unstable();
        qs.iter().map(|q| nodes[i].axes.iter().position(|x| x == q).unwrap()).collect()
    };

    let mut visited = vec![false; nodes.len()];
    let mut order = Vec::new();
    for root in 0..nodes.len() {
        if visited[root] {
            continue;
        }
        // Iterative DFS producing post-order.
        let mut stack = vec![(root, None::<usize>, false)];
        visited[root] = true;
        while let Some((node, parent, expanded)) = stack.pop() {
            if expanded {
                let children: Vec<(usize, Vec<usize>)> =
                    neighbours(node).into_iter().filter(|&c| Some(c) != parent).map(|c| (c, shared(node, c))).collect();
                let up = parent.map(|p| shared(node, p)).unwrap_or_default();
                order.push(Step { node, children, up });
                continue;
            }
            stack.push((node, parent, true));
            for c in neighbours(node) {
                if Some(c) != parent && !visited[c] {
                    visited[c] = true;
                    stack.push((c, Some(node), false));
                }
            }
        }
    }
    order
}

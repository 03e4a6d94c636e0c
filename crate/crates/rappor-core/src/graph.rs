//! K-partite gram graph and clique-based candidate assembly.
//!
//! Positions of a padded string form the partitions; detected grams are the
//! nodes. An edge connects two grams at different positions when their joint
//! frequency cleared the threshold. Every clique touching all partitions
//! spells one full-length candidate string.

use crate::error::{Error, Result};
use std::collections::HashMap;

/// Node address: (partition index, node index within that partition).
pub type NodeId = (usize, usize);

/// Cliques found beyond this count abort the search.
pub const DEFAULT_CANDIDATE_CAP: usize = 1_000_000;

/// Weighted k-partite graph over per-position gram nodes.
#[derive(Clone, Debug)]
pub struct NGramGraph {
    partitions: Vec<Vec<String>>,
    edges: HashMap<(NodeId, NodeId), f64>,
}

impl NGramGraph {
    /// Creates a graph with the given node sets, one per position, no edges.
    pub fn new(partitions: Vec<Vec<String>>) -> Self {
        NGramGraph {
            partitions,
            edges: HashMap::new(),
        }
    }

    pub fn num_partitions(&self) -> usize {
        self.partitions.len()
    }

    pub fn partition(&self, p: usize) -> &[String] {
        &self.partitions[p]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        let (p, i) = node;
        if p >= self.partitions.len() || i >= self.partitions[p].len() {
            return Err(Error::Input(format!("node {node:?} out of range")));
        }
        Ok(())
    }

    /// Adds an undirected edge. Intra-partition edges are rejected, keeping
    /// the graph k-partite.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId, weight: f64) -> Result<()> {
        self.check_node(a)?;
        self.check_node(b)?;
        if a.0 == b.0 {
            return Err(Error::Input(format!(
                "edge {a:?}-{b:?} stays inside partition {}",
                a.0
            )));
        }
        let key = if a <= b { (a, b) } else { (b, a) };
        self.edges.insert(key, weight);
        Ok(())
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.edges.contains_key(&key)
    }

    pub fn edge_weight(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.edges.get(&key).copied()
    }

    /// Number of edges incident to the node.
    pub fn degree(&self, node: NodeId) -> usize {
        self.edges
            .keys()
            .filter(|(a, b)| *a == node || *b == node)
            .count()
    }
}

/// Candidate strings assembled from cliques, with the contributing clique
/// kept per string. Strings retain their padding.
#[derive(Clone, Debug)]
pub struct CandidateStrings {
    pub strings: Vec<String>,
    /// Per string: the clique's nodes sorted by partition.
    pub cliques: Vec<Vec<NodeId>>,
}

impl CandidateStrings {
    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }
}

/// Enumerates every clique with one node per partition and assembles each
/// into a candidate string (grams concatenated in position order).
///
/// The backtracking visits partitions in ascending node-count order and
/// extends a partial clique only with nodes adjacent to everything chosen so
/// far, so a partition with no compatible node prunes the whole branch.
pub fn find_candidates(graph: &NGramGraph, cap: usize) -> Result<CandidateStrings> {
    let k = graph.num_partitions();
    let mut result = CandidateStrings {
        strings: Vec::new(),
        cliques: Vec::new(),
    };
    if k == 0 || graph.partitions.iter().any(|p| p.is_empty()) {
        return Ok(result);
    }
    if k == 1 {
        for i in 0..graph.partitions[0].len() {
            result.strings.push(graph.partitions[0][i].clone());
            result.cliques.push(vec![(0, i)]);
            if result.strings.len() > cap {
                return Err(Error::CandidateOverflow { cap });
            }
        }
        return sorted(result);
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&p| (graph.partitions[p].len(), p));

    let mut chosen: Vec<NodeId> = Vec::with_capacity(k);
    let mut stack: Vec<Vec<NodeId>> = Vec::with_capacity(k);
    stack.push((0..graph.partitions[order[0]].len()).map(|i| (order[0], i)).collect());

    // Iterative backtracking: each stack level holds the untried compatible
    // nodes for that depth.
    while let Some(level) = stack.last_mut() {
        let Some(node) = level.pop() else {
            stack.pop();
            chosen.pop();
            continue;
        };
        chosen.push(node);
        if chosen.len() == k {
            let mut clique = chosen.clone();
            clique.sort();
            let string: String = clique
                .iter()
                .map(|&(p, i)| graph.partitions[p][i].as_str())
                .collect();
            result.strings.push(string);
            result.cliques.push(clique);
            if result.strings.len() > cap {
                return Err(Error::CandidateOverflow { cap });
            }
            chosen.pop();
            continue;
        }
        let next_p = order[chosen.len()];
        let compatible: Vec<NodeId> = (0..graph.partitions[next_p].len())
            .map(|i| (next_p, i))
            .filter(|&cand| chosen.iter().all(|&c| graph.has_edge(c, cand)))
            .collect();
        if compatible.is_empty() {
            chosen.pop();
        } else {
            stack.push(compatible);
        }
    }
    sorted(result)
}

fn sorted(mut result: CandidateStrings) -> Result<CandidateStrings> {
    let mut idx: Vec<usize> = (0..result.strings.len()).collect();
    idx.sort_by(|&a, &b| result.strings[a].cmp(&result.strings[b]));
    result.strings = idx.iter().map(|&i| result.strings[i].clone()).collect();
    result.cliques = idx.iter().map(|&i| result.cliques[i].clone()).collect();
    Ok(result)
}

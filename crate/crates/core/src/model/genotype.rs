use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::softmax;

use super::ops::{OpKind, SearchSpace};

/// Architecture logits: `logits[i][j]` is the vector over the search space
/// for the edge from input `j` into node `i` (inputs 0 and 1 are the cell
/// inputs, `2 + k` is node `k`).
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaParams {
    space: SearchSpace,
    logits: Vec<Vec<Vec<f64>>>,
}

impl AlphaParams {
    /// All logits zero (uniform mixtures).
    pub fn zeros(space: SearchSpace, nodes: usize) -> Self {
        let logits = (0..nodes)
            .map(|i| vec![vec![0.0; space.len()]; i + 2])
            .collect();
        AlphaParams { space, logits }
    }

    pub fn new(space: SearchSpace, logits: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        for (i, node) in logits.iter().enumerate() {
            if node.len() != i + 2 {
                return Err(Error::invalid(format!(
                    "node {i} has {} edges, expected {}",
                    node.len(),
                    i + 2
                )));
            }
            if let Some(e) = node.iter().position(|v| v.len() != space.len()) {
                return Err(Error::invalid(format!(
                    "edge {e} of node {i} has {} logits, expected {}",
                    node[e].len(),
                    space.len()
                )));
            }
        }
        Ok(AlphaParams { space, logits })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn nodes(&self) -> usize {
        self.logits.len()
    }

    pub fn edge(&self, node: usize, input: usize) -> &[f64] {
        &self.logits[node][input]
    }

    pub fn edge_mut(&mut self, node: usize, input: usize) -> &mut [f64] {
        &mut self.logits[node][input]
    }

    pub fn logits(&self) -> &[Vec<Vec<f64>>] {
        &self.logits
    }

    pub fn probabilities(&self, node: usize, input: usize) -> Vec<f64> {
        softmax(&self.logits[node][input])
    }
}

/// One discretized node: `op1(input1) + op2(input2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, OpKind, usize, OpKind)", into = "(usize, OpKind, usize, OpKind)")]
pub struct GenotypeNode {
    pub input1: usize,
    pub op1: OpKind,
    pub input2: usize,
    pub op2: OpKind,
}

impl GenotypeNode {
    pub fn new(input1: usize, op1: OpKind, input2: usize, op2: OpKind) -> Self {
        GenotypeNode {
            input1,
            op1,
            input2,
            op2,
        }
    }

    pub fn edges(&self) -> [(usize, OpKind); 2] {
        [(self.input1, self.op1), (self.input2, self.op2)]
    }
}

impl From<(usize, OpKind, usize, OpKind)> for GenotypeNode {
    fn from((a, b, c, d): (usize, OpKind, usize, OpKind)) -> Self {
        GenotypeNode::new(a, b, c, d)
    }
}

impl From<GenotypeNode> for (usize, OpKind, usize, OpKind) {
    fn from(n: GenotypeNode) -> Self {
        (n.input1, n.op1, n.input2, n.op2)
    }
}

/// Discrete cell description shared by every cell of a searched network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GenotypeDoc", into = "GenotypeDoc")]
pub struct Genotype {
    search_space: SearchSpace,
    nodes: Vec<GenotypeNode>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenotypeDoc {
    search_space: SearchSpace,
    nodes: Vec<GenotypeNode>,
    /// Provenance echo written by tools; ignored on load.
    #[serde(default, skip_serializing, rename = "config")]
    _config: Option<serde::de::IgnoredAny>,
}

impl TryFrom<GenotypeDoc> for Genotype {
    type Error = String;

    fn try_from(d: GenotypeDoc) -> std::result::Result<Self, String> {
        Genotype::new(d.search_space, d.nodes).map_err(|e| e.to_string())
    }
}

impl From<Genotype> for GenotypeDoc {
    fn from(g: Genotype) -> Self {
        GenotypeDoc {
            search_space: g.search_space,
            nodes: g.nodes,
            _config: None,
        }
    }
}

impl Genotype {
    pub fn new(search_space: SearchSpace, nodes: Vec<GenotypeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("genotype needs at least one node"));
        }
        for (i, n) in nodes.iter().enumerate() {
            for (input, op) in n.edges() {
                if input >= i + 2 {
                    return Err(Error::invalid(format!(
                        "node {i} reads input {input}, only 0..{} exist",
                        i + 2
                    )));
                }
                if op == OpKind::NoneOp {
                    return Err(Error::invalid(format!("node {i} uses the none operation")));
                }
                if !search_space.contains(op) {
                    return Err(Error::invalid(format!(
                        "node {i} uses {op}, not in search space {search_space}"
                    )));
                }
            }
            if n.input1 == n.input2 {
                return Err(Error::invalid(format!(
                    "node {i} reads input {} twice",
                    n.input1
                )));
            }
        }
        Ok(Genotype {
            search_space,
            nodes,
        })
    }

    pub fn search_space(&self) -> &SearchSpace {
        &self.search_space
    }

    pub fn nodes(&self) -> &[GenotypeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains_op(&self, op: OpKind) -> bool {
        self.nodes.iter().any(|n| n.op1 == op || n.op2 == op)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genotype serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Top-2 discretization.
///
/// Each edge is scored by its most probable non-none op (ties to the lower
/// op index); each node keeps its two best-scored edges (ties to the lower
/// input index), listed best first.
pub fn discretize(alpha: &AlphaParams) -> Result<Genotype> {
    let ops = alpha.space().ops();
    let mut nodes = Vec::with_capacity(alpha.nodes());
    for i in 0..alpha.nodes() {
        let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(i + 2);
        for j in 0..i + 2 {
            let logits = alpha.edge(i, j);
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite logit on edge {j} of node {i}"
                )));
            }
            let probs = softmax(logits);
            let mut best: Option<(usize, f64)> = None;
            for (k, &p) in probs.iter().enumerate() {
                if ops[k] == OpKind::NoneOp {
                    continue;
                }
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((k, p));
                }
            }
            if let Some((k, p)) = best {
                edges.push((j, k, p));
            }
        }
        if edges.len() < 2 {
            return Err(Error::invalid(format!(
                "node {i} has fewer than two admissible edges"
            )));
        }
        // Stable sort keeps lower input indices first among equal scores.
        edges.sort_by(|a, b| b.2.total_cmp(&a.2));
        let (j1, k1, _) = edges[0];
        let (j2, k2, _) = edges[1];
        nodes.push(GenotypeNode::new(j1, ops[k1], j2, ops[k2]));
    }
    Genotype::new(alpha.space().clone(), nodes)
}

//! Feature graphs for the multiplier network.
//!
//! One node per (free variable, constraint[, value]) pair. Nodes of the first
//! constraint carry no multiplier but take part in message passing; every
//! other node maps to exactly one multiplier coordinate.
//!
//! Edge features are a 2-wide one-hot type.
//!
//! MKP node features: item index / n, dimension index / d, profit / max
//! profit, weight / max weight, profit / (weight + 1) / max profit, and
//! weight / (residual capacity + 1). Edge types: shares the item, shares the
//! dimension.
//!
//! SSP node features: period index / n, constraint index / m, activity index
//! / |W|, profit / max profit. Edge types: same (period, activity) in two
//! constraints; same constraint, consecutive periods, and the two activities
//! can follow each other on an accepted path of that automaton.

use serde::Serialize;
use thiserror::Error;

use crate::instances::{Family, LayeredSupport, MkpInstance, PartialAssignment, SspInstance};
use crate::lagrangian::Coord;
use crate::Instance;

pub const MKP_NODE_FEATURES: usize = 6;
pub const SSP_NODE_FEATURES: usize = 4;
pub const EDGE_FEATURES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("partial assignment is infeasible: {0}")]
    Infeasible(String),
    #[error("malformed graph: {0}")]
    Malformed(String),
}

/// Directed graph with node and edge features and a node-to-multiplier map.
///
/// Edges are stored sorted by `(target, source)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureGraph {
    pub family: Family,
    node_width: usize,
    edge_width: usize,
    node_features: Vec<f64>,
    edges: Vec<(usize, usize)>,
    edge_features: Vec<f64>,
    multiplier_map: Vec<Option<Coord>>,
    /// `(blocks, coordinates per block)` of the multipliers the graph fills.
    multiplier_shape: (usize, usize),
    /// Network outputs are multiplied by this to obtain multipliers.
    output_scale: f64,
}

impl FeatureGraph {
    /// Assembles a graph, validating feature widths and the multiplier map.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        family: Family,
        node_width: usize,
        edge_width: usize,
        node_features: Vec<f64>,
        edges: Vec<((usize, usize), Vec<f64>)>,
        multiplier_map: Vec<Option<Coord>>,
        multiplier_shape: (usize, usize),
        output_scale: f64,
    ) -> Result<Self, EncodingError> {
        let nodes = multiplier_map.len();
        if node_features.len() != nodes * node_width {
            return Err(EncodingError::Malformed(format!(
                "{} node feature values for {nodes} nodes of width {node_width}",
                node_features.len()
            )));
        }
        let mut edges = edges;
        edges.sort_by_key(|&((u, v), _)| (v, u));
        let mut flat_edges = Vec::with_capacity(edges.len());
        let mut edge_features = Vec::with_capacity(edges.len() * edge_width);
        for ((u, v), k) in edges {
            if u >= nodes || v >= nodes || u == v {
                return Err(EncodingError::Malformed(format!("bad edge ({u}, {v})")));
            }
            if k.len() != edge_width {
                return Err(EncodingError::Malformed(format!(
                    "edge ({u}, {v}) has {} features, expected {edge_width}",
                    k.len()
                )));
            }
            if flat_edges.last() == Some(&(u, v)) {
                return Err(EncodingError::Malformed(format!("duplicate edge ({u}, {v})")));
            }
            flat_edges.push((u, v));
            edge_features.extend(k);
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in multiplier_map.iter().flatten() {
            if c.block >= multiplier_shape.0 || c.index >= multiplier_shape.1 || !seen.insert(*c) {
                return Err(EncodingError::Malformed(format!("bad multiplier coordinate {c:?}")));
            }
        }
        Ok(Self {
            family,
            node_width,
            edge_width,
            node_features,
            edges: flat_edges,
            edge_features,
            multiplier_map,
            multiplier_shape,
            output_scale,
        })
    }

    pub fn node_count(&self) -> usize {
        self.multiplier_map.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_width(&self) -> usize {
        self.node_width
    }

    pub fn edge_width(&self) -> usize {
        self.edge_width
    }

    pub fn node_feature(&self, v: usize) -> &[f64] {
        &self.node_features[v * self.node_width..(v + 1) * self.node_width]
    }

    pub fn node_features(&self) -> &[f64] {
        &self.node_features
    }

    /// `(source, target)` pairs sorted by target.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_feature(&self, e: usize) -> &[f64] {
        &self.edge_features[e * self.edge_width..(e + 1) * self.edge_width]
    }

    pub fn multiplier_map(&self) -> &[Option<Coord>] {
        &self.multiplier_map
    }

    pub fn multiplier_shape(&self) -> (usize, usize) {
        self.multiplier_shape
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    /// Number of nodes that carry a multiplier.
    pub fn multiplier_count(&self) -> usize {
        self.multiplier_map.iter().flatten().count()
    }

    /// Edge feature of `(u, v)`, if present.
    pub fn find_edge(&self, u: usize, v: usize) -> Option<&[f64]> {
        self.edges
            .binary_search_by_key(&(v, u), |&(a, b)| (b, a))
            .ok()
            .map(|e| self.edge_feature(e))
    }

    /// Pretty JSON for inspection.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graphs always serialize")
    }
}

/// Encodes any instance.
pub fn encode(instance: &Instance, partial: &PartialAssignment) -> Result<FeatureGraph, EncodingError> {
    match instance {
        Instance::Mkp(m) => encode_mkp(m, partial),
        Instance::Ssp(s) => encode_ssp(s, partial),
    }
}

const SHARES_A: [f64; 2] = [1.0, 0.0];
const SHARES_B: [f64; 2] = [0.0, 1.0];

/// Encodes the free items of an MKP: `(n - depth) * d` nodes, node
/// `(j, k)` with `k >= 1` carrying multiplier `(k - 1, j)`.
pub fn encode_mkp(inst: &MkpInstance, partial: &PartialAssignment) -> Result<FeatureGraph, EncodingError> {
    let n = inst.n();
    let d = inst.d();
    let residual = inst
        .residual_capacities(partial)
        .ok_or_else(|| EncodingError::Infeasible("fixed items exceed a capacity".into()))?;
    let free: Vec<usize> = partial.free_indices().collect();
    let max_profit = inst.max_profit().max(1) as f64;
    let max_weight = inst.max_weight().max(1) as f64;

    let node = |slot: usize, k: usize| slot * d + k;
    let mut features = Vec::with_capacity(free.len() * d * MKP_NODE_FEATURES);
    let mut map = Vec::with_capacity(free.len() * d);
    for &j in &free {
        let v = inst.profits()[j] as f64;
        for k in 0..d {
            let w = inst.weights()[k][j] as f64;
            features.extend([
                j as f64 / n as f64,
                k as f64 / d as f64,
                v / max_profit,
                w / max_weight,
                v / (w + 1.0) / max_profit,
                w / (residual[k] as f64 + 1.0),
            ]);
            map.push((k >= 1).then(|| Coord { block: k - 1, index: j }));
        }
    }

    let mut edges = Vec::new();
    for slot in 0..free.len() {
        for k in 0..d {
            for k2 in (0..d).filter(|&k2| k2 != k) {
                edges.push(((node(slot, k), node(slot, k2)), SHARES_A.to_vec()));
            }
        }
    }
    for k in 0..d {
        for a in 0..free.len() {
            for b in (0..free.len()).filter(|&b| b != a) {
                edges.push(((node(a, k), node(b, k)), SHARES_B.to_vec()));
            }
        }
    }
    FeatureGraph::new(
        Family::Mkp,
        MKP_NODE_FEATURES,
        EDGE_FEATURES,
        features,
        edges,
        map,
        (d - 1, n),
        max_profit,
    )
}

/// Encodes the residual horizon of an SSP: one node per (free period,
/// constraint, activity); node `(j, i, a)` with `i >= 1` carries multiplier
/// `(i - 1, j * |W| + a)`.
pub fn encode_ssp(inst: &SspInstance, partial: &PartialAssignment) -> Result<FeatureGraph, EncodingError> {
    if !partial.is_prefix() {
        return Err(EncodingError::Malformed("SSP partial must be a prefix".into()));
    }
    let n = inst.periods();
    let w = inst.activities();
    let automata = inst.automata();
    let m = automata.len();
    let prefix = partial.prefix_len();
    let horizon = n - prefix;
    let max_profit = inst.max_profit().max(1) as f64;

    let domains: Vec<Vec<bool>> = (0..n)
        .map(|j| match partial.get(j) {
            Some(v) => (0..w).map(|a| a == v).collect(),
            None => vec![true; w],
        })
        .collect();
    let supports: Vec<LayeredSupport> = automata
        .iter()
        .map(|aut| LayeredSupport::new(aut, &domains))
        .collect();
    if let Some(i) = (0..m).find(|&i| !supports[i].is_feasible(&automata[i])) {
        return Err(EncodingError::Infeasible(format!(
            "automaton {i} has no accepting completion"
        )));
    }

    let node = |t: usize, i: usize, a: usize| (t * m + i) * w + a;
    let mut features = Vec::with_capacity(horizon * m * w * SSP_NODE_FEATURES);
    let mut map = Vec::with_capacity(horizon * m * w);
    for t in 0..horizon {
        let j = prefix + t;
        for i in 0..m {
            for a in 0..w {
                features.extend([
                    j as f64 / n as f64,
                    i as f64 / m as f64,
                    a as f64 / w as f64,
                    inst.profit(a, j) as f64 / max_profit,
                ]);
                map.push((i >= 1).then(|| Coord {
                    block: i - 1,
                    index: j * w + a,
                }));
            }
        }
    }

    let mut edges = Vec::new();
    for t in 0..horizon {
        for a in 0..w {
            for i in 0..m {
                for i2 in (0..m).filter(|&i2| i2 != i) {
                    edges.push(((node(t, i, a), node(t, i2, a)), SHARES_A.to_vec()));
                }
            }
        }
    }
    for (i, aut) in automata.iter().enumerate() {
        let support = &supports[i];
        let q_count = aut.states();
        for t in 0..horizon.saturating_sub(1) {
            let j = prefix + t;
            // into[q][a]: a supported arc labelled a enters q at period j + 1;
            // out[q][b]: a supported arc labelled b leaves q at period j + 1.
            let mut into = vec![false; q_count * w];
            let mut out = vec![false; q_count * w];
            for q in 0..q_count {
                for a in 0..w {
                    if support.supports_arc(aut, j, q, a) {
                        let target = aut.next(q, a).expect("supported arc exists");
                        into[target * w + a] = true;
                    }
                    if support.supports_arc(aut, j + 1, q, a) {
                        out[q * w + a] = true;
                    }
                }
            }
            let mut linked = vec![false; w * w];
            for q in 0..q_count {
                for a in (0..w).filter(|&a| into[q * w + a]) {
                    for b in (0..w).filter(|&b| out[q * w + b]) {
                        linked[a * w + b] = true;
                    }
                }
            }
            for a in 0..w {
                for b in 0..w {
                    if linked[a * w + b] {
                        let (x, y) = (node(t, i, a), node(t + 1, i, b));
                        edges.push(((x, y), SHARES_B.to_vec()));
                        edges.push(((y, x), SHARES_B.to_vec()));
                    }
                }
            }
        }
    }
    FeatureGraph::new(
        Family::Ssp,
        SSP_NODE_FEATURES,
        EDGE_FEATURES,
        features,
        edges,
        map,
        (m - 1, n * w),
        max_profit,
    )
}

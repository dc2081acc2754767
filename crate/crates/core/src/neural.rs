//! Gated graph network that maps a feature graph to Lagrangian multipliers.
//!
//! Per layer `l` and edge `(u, v)` with features `k`:
//!
//! ```text
//! m     = θ₂ [h_u ‖ k]
//! η     = σ(θ₃ h_v + θ₄ [h_u ‖ k])
//! h_v'  = ReLU(θ₁ h_v + Σ_u η ⊙ m)
//! ```
//!
//! `h⁰` is a linear projection of the node features. After the last layer,
//! `Γ = mean_v σ(h_v)` and each multiplier node reads
//! `μ_v = scale · head([h_v ‖ Γ])`, where the head is a ReLU MLP with a linear
//! scalar output and `scale` is the graph's output scale.
//!
//! Everything is `f64`. Gradients are hand-written reverse mode.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::FeatureGraph;
use crate::instances::Family;
use crate::lagrangian::Multipliers;
use crate::rng::Rng;

pub const HIDDEN: usize = 64;
pub const LAYERS: usize = 2;
pub const HEAD: [usize; 2] = [256, 128];
pub const DEFAULT_LR: f64 = 0.001;

const MAGIC: &[u8; 8] = b"LDBGNN\r\n";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cache does not belong to these parameters")]
    StaleCache,
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported model version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model was trained for {model} but the graph is {graph}")]
    FamilyMismatch { model: Family, graph: Family },
}

/// Layer widths of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub node_width: usize,
    pub edge_width: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head: Vec<usize>,
}

impl ArchConfig {
    /// Standard widths for graphs with the given feature widths.
    pub fn standard(node_width: usize, edge_width: usize) -> Self {
        Self {
            node_width,
            edge_width,
            hidden: HIDDEN,
            layers: LAYERS,
            head: HEAD.to_vec(),
        }
    }

    pub fn for_graph(graph: &FeatureGraph) -> Self {
        Self::standard(graph.node_width(), graph.edge_width())
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (p, q, h) = (self.node_width, self.edge_width, self.hidden);
        let input = p * h + h;
        let layer = 2 * (h * h + h) + 2 * ((h + q) * h + h);
        let mut head = 0;
        let mut fan_in = 2 * h;
        for &width in self.head.iter().chain(std::iter::once(&1)) {
            head += fan_in * width + width;
            fan_in = width;
        }
        input + self.layers * layer + head
    }

    fn validate(&self) -> Result<(), NeuralError> {
        if self.node_width == 0 || self.hidden == 0 || self.head.contains(&0) {
            return Err(NeuralError::Shape(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// Dense affine map `y = W x + b`, `W` stored row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut l = Self::zeros(inputs, outputs);
        for w in &mut l.weight {
            *w = rng.uniform(-limit, limit);
        }
        l
    }

    /// `y = b + W[:, offset..offset + x.len()] x`.
    fn affine_part(&self, x: &[f64], offset: usize, y: &mut [f64]) {
        y.copy_from_slice(&self.bias);
        self.add_part(x, offset, y);
    }

    /// `y += W[:, offset..offset + x.len()] x`.
    fn add_part(&self, x: &[f64], offset: usize, y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs + offset..o * self.inputs + offset + x.len()];
            *yo += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// `self.weight[:, offset..] += dy xᵀ`.
    fn add_outer(&mut self, dy: &[f64], x: &[f64], offset: usize) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut self.weight[o * self.inputs + offset..o * self.inputs + offset + x.len()];
            for (w, &xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
        }
    }

    /// `dx += W[:, offset..offset + dx.len()]ᵀ dy`.
    fn add_transposed(&self, dy: &[f64], offset: usize, dx: &mut [f64]) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.inputs + offset..o * self.inputs + offset + dx.len()];
            for (d, &w) in dx.iter_mut().zip(row) {
                *d += g * w;
            }
        }
    }

    fn add_bias(&mut self, dy: &[f64]) {
        for (b, g) in self.bias.iter_mut().zip(dy) {
            *b += g;
        }
    }
}

/// One gated convolution: `θ₁, θ₃ : h → h`, `θ₂, θ₄ : h + q → h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedLayer {
    pub theta1: Linear,
    pub theta2: Linear,
    pub theta3: Linear,
    pub theta4: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    arch: ArchConfig,
    pub input: Linear,
    pub layers: Vec<GatedLayer>,
    pub head: Vec<Linear>,
}

impl GnnParams {
    pub fn zeros(arch: &ArchConfig) -> Self {
        Self::build(arch, |i, o| Linear::zeros(i, o))
    }

    /// Seeded Glorot initialization.
    pub fn init(arch: &ArchConfig, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        Self::build(arch, |i, o| Linear::glorot(i, o, &mut rng))
    }

    fn build(arch: &ArchConfig, mut make: impl FnMut(usize, usize) -> Linear) -> Self {
        let (h, q) = (arch.hidden, arch.edge_width);
        let input = make(arch.node_width, h);
        let layers = (0..arch.layers)
            .map(|_| GatedLayer {
                theta1: make(h, h),
                theta2: make(h + q, h),
                theta3: make(h, h),
                theta4: make(h + q, h),
            })
            .collect();
        let mut head = Vec::new();
        let mut fan_in = 2 * h;
        for &width in arch.head.iter().chain(std::iter::once(&1)) {
            head.push(make(fan_in, width));
            fan_in = width;
        }
        Self {
            arch: arch.clone(),
            input,
            layers,
            head,
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch)
    }

    fn linears(&self) -> Vec<(String, &Linear)> {
        let mut out = vec![("input".to_string(), &self.input)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.theta1"), &layer.theta1));
            out.push((format!("layer{l}.theta2"), &layer.theta2));
            out.push((format!("layer{l}.theta3"), &layer.theta3));
            out.push((format!("layer{l}.theta4"), &layer.theta4));
        }
        for (k, lin) in self.head.iter().enumerate() {
            out.push((format!("head{k}"), lin));
        }
        out
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut out = vec![&mut self.input];
        for layer in &mut self.layers {
            out.extend([&mut layer.theta1, &mut layer.theta2, &mut layer.theta3, &mut layer.theta4]);
        }
        out.extend(self.head.iter_mut());
        out
    }

    /// Named tensors in storage order: `(name, shape, values)`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.linears()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), vec![l.outputs, l.inputs], &l.weight[..]),
                    (format!("{name}.bias"), vec![l.outputs], &l.bias[..]),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.linears_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NeuralError> {
        if flat.len() != self.param_count() {
            return Err(NeuralError::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &GnnParams, alpha: f64) -> Result<(), NeuralError> {
        self.check_same_shape(other)?;
        let src = other.to_flat();
        let mut offset = 0;
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x += alpha * src[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= alpha;
            }
        }
    }

    fn check_same_shape(&self, other: &GnnParams) -> Result<(), NeuralError> {
        if self.arch != other.arch {
            return Err(NeuralError::Shape(format!(
                "architectures differ: {:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        Ok(())
    }

    fn check_graph(&self, graph: &FeatureGraph) -> Result<(), NeuralError> {
        if graph.node_width() != self.arch.node_width || graph.edge_width() != self.arch.edge_width {
            return Err(NeuralError::Shape(format!(
                "graph widths ({}, {}) but model expects ({}, {})",
                graph.node_width(),
                graph.edge_width(),
                self.arch.node_width,
                self.arch.edge_width
            )));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values retained for [`gnn_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<'g> {
    graph: &'g FeatureGraph,
    arch: ArchConfig,
    /// Node states `h⁰ … hᴸ`, each `N × hidden`.
    states: Vec<Vec<f64>>,
    /// Per layer, `E × hidden` messages `θ₂ [h_u ‖ k]`.
    messages: Vec<Vec<f64>>,
    /// Per layer, `E × hidden` gates.
    gates: Vec<Vec<f64>>,
    /// `σ(hᴸ)`, `N × hidden`.
    squashed: Vec<f64>,
    /// Per multiplier node: `(node, head layer inputs)`.
    heads: Vec<(usize, Vec<Vec<f64>>)>,
}

impl ForwardCache<'_> {
    /// Final node embeddings.
    pub fn embeddings(&self) -> &[f64] {
        self.states.last().expect("at least the input state")
    }

    /// A signature of every ReLU activation pattern, for detecting kinks.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.states[1..].iter().flatten().map(|&x| x > 0.0).collect();
        for (_, acts) in &self.heads {
            out.extend(acts[1..].iter().flatten().map(|&x| x > 0.0));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Forward<'g> {
    pub mu: Multipliers,
    /// Raw head output per node; `None` for nodes without a multiplier.
    pub node_outputs: Vec<Option<f64>>,
    pub cache: ForwardCache<'g>,
}

pub fn gnn_forward<'g>(params: &GnnParams, graph: &'g FeatureGraph) -> Result<Forward<'g>, NeuralError> {
    params.check_graph(graph)?;
    let arch = &params.arch;
    let (h, q) = (arch.hidden, arch.edge_width);
    let n = graph.node_count();
    let edges = graph.edges();

    let mut h0 = vec![0.0; n * h];
    for v in 0..n {
        params.input.affine_part(graph.node_feature(v), 0, &mut h0[v * h..(v + 1) * h]);
    }
    let mut states = vec![h0];
    let mut messages = Vec::with_capacity(arch.layers);
    let mut gates = Vec::with_capacity(arch.layers);

    for layer in &params.layers {
        let hs = states.last().expect("input state");
        let mut z = vec![0.0; n * h];
        let mut c3 = vec![0.0; n * h];
        let mut p2 = vec![0.0; n * h];
        let mut p4 = vec![0.0; n * h];
        for v in 0..n {
            let hv = &hs[v * h..(v + 1) * h];
            let r = v * h..(v + 1) * h;
            layer.theta1.affine_part(hv, 0, &mut z[r.clone()]);
            layer.theta3.affine_part(hv, 0, &mut c3[r.clone()]);
            layer.theta2.add_part(hv, 0, &mut p2[r.clone()]);
            layer.theta4.add_part(hv, 0, &mut p4[r]);
        }
        let mut msg = vec![0.0; edges.len() * h];
        let mut gate = vec![0.0; edges.len() * h];
        let mut tmp2 = vec![0.0; h];
        let mut tmp4 = vec![0.0; h];
        for (e, &(u, v)) in edges.iter().enumerate() {
            let k = graph.edge_feature(e);
            layer.theta2.affine_part(k, h, &mut tmp2);
            layer.theta4.affine_part(k, h, &mut tmp4);
            debug_assert_eq!(k.len(), q);
            for c in 0..h {
                let m = tmp2[c] + p2[u * h + c];
                let g = sigmoid(c3[v * h + c] + tmp4[c] + p4[u * h + c]);
                msg[e * h + c] = m;
                gate[e * h + c] = g;
                z[v * h + c] += g * m;
            }
        }
        for x in &mut z {
            *x = x.max(0.0);
        }
        states.push(z);
        messages.push(msg);
        gates.push(gate);
    }

    let last = states.last().expect("final state");
    let squashed: Vec<f64> = last.iter().map(|&x| sigmoid(x)).collect();
    let mut gamma = vec![0.0; h];
    for v in 0..n {
        for c in 0..h {
            gamma[c] += squashed[v * h + c];
        }
    }
    for g in &mut gamma {
        *g /= n.max(1) as f64;
    }

    let (blocks, len) = graph.multiplier_shape();
    let mut mu = Multipliers::zeros(blocks, len);
    let mut node_outputs = vec![None; n];
    let mut heads = Vec::with_capacity(graph.multiplier_count());
    for (v, coord) in graph.multiplier_map().iter().enumerate() {
        let Some(coord) = coord else { continue };
        let mut x = Vec::with_capacity(2 * h);
        x.extend_from_slice(&last[v * h..(v + 1) * h]);
        x.extend_from_slice(&gamma);
        let mut acts = vec![x];
        for (k, lin) in params.head.iter().enumerate() {
            let mut y = vec![0.0; lin.outputs];
            lin.affine_part(acts.last().expect("input"), 0, &mut y);
            if k + 1 < params.head.len() {
                for t in &mut y {
                    *t = t.max(0.0);
                }
                acts.push(y);
            } else {
                node_outputs[v] = Some(y[0]);
                mu.set(*coord, graph.output_scale() * y[0]);
            }
        }
        heads.push((v, acts));
    }

    Ok(Forward {
        mu,
        node_outputs,
        cache: ForwardCache {
            graph,
            arch: arch.clone(),
            states,
            messages,
            gates,
            squashed,
            heads,
        },
    })
}

/// Gradient of `Σ_c upstream[c] · μ[c]` with respect to every parameter.
pub fn gnn_backward(
    params: &GnnParams,
    cache: &ForwardCache<'_>,
    upstream: &Multipliers,
) -> Result<GnnParams, NeuralError> {
    let arch = &params.arch;
    if *arch != cache.arch || cache.states.len() != arch.layers + 1 {
        return Err(NeuralError::StaleCache);
    }
    let graph = cache.graph;
    if !upstream.has_shape(graph.multiplier_shape()) {
        return Err(NeuralError::Shape(format!(
            "upstream gradient shape {:?}, graph multipliers {:?}",
            upstream.shape(),
            graph.multiplier_shape()
        )));
    }
    let h = arch.hidden;
    let n = graph.node_count();
    let edges = graph.edges();
    let mut grads = params.zeros_like();

    let mut dh = vec![0.0; n * h];
    let mut dgamma = vec![0.0; h];
    for (v, acts) in &cache.heads {
        let coord = graph.multiplier_map()[*v].expect("head nodes carry a multiplier");
        let up = graph.output_scale() * upstream.get(coord);
        if up == 0.0 {
            continue;
        }
        let mut dy = vec![up];
        for k in (0..params.head.len()).rev() {
            let input = &acts[k];
            grads.head[k].add_outer(&dy, input, 0);
            grads.head[k].add_bias(&dy);
            let mut dx = vec![0.0; input.len()];
            params.head[k].add_transposed(&dy, 0, &mut dx);
            if k > 0 {
                for (d, &a) in dx.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dy = dx;
        }
        for c in 0..h {
            dh[v * h + c] += dy[c];
            dgamma[c] += dy[h + c];
        }
    }
    let inv_n = 1.0 / n.max(1) as f64;
    for v in 0..n {
        for c in 0..h {
            let s = cache.squashed[v * h + c];
            dh[v * h + c] += dgamma[c] * s * (1.0 - s) * inv_n;
        }
    }

    for l in (0..arch.layers).rev() {
        let layer = &params.layers[l];
        let g = &mut grads.layers[l];
        let hs = &cache.states[l];
        let out = &cache.states[l + 1];
        let msg = &cache.messages[l];
        let gate = &cache.gates[l];

        let mut dz = dh;
        for (d, &o) in dz.iter_mut().zip(out) {
            if o <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dp2 = vec![0.0; n * h];
        let mut dp4 = vec![0.0; n * h];
        let mut dc3 = vec![0.0; n * h];
        let mut dm = vec![0.0; h];
        let mut dg = vec![0.0; h];
        for (e, &(u, v)) in edges.iter().enumerate() {
            let k = graph.edge_feature(e);
            for c in 0..h {
                let up = dz[v * h + c];
                let eta = gate[e * h + c];
                dm[c] = up * eta;
                dg[c] = up * msg[e * h + c] * eta * (1.0 - eta);
                dp2[u * h + c] += dm[c];
                dp4[u * h + c] += dg[c];
                dc3[v * h + c] += dg[c];
            }
            g.theta2.add_outer(&dm, k, h);
            g.theta2.add_bias(&dm);
            g.theta4.add_outer(&dg, k, h);
            g.theta4.add_bias(&dg);
        }
        let mut dprev = vec![0.0; n * h];
        for v in 0..n {
            let r = v * h..(v + 1) * h;
            let hv = &hs[r.clone()];
            let dx = &mut dprev[r.clone()];
            g.theta1.add_outer(&dz[r.clone()], hv, 0);
            g.theta1.add_bias(&dz[r.clone()]);
            layer.theta1.add_transposed(&dz[r.clone()], 0, dx);
            g.theta3.add_outer(&dc3[r.clone()], hv, 0);
            g.theta3.add_bias(&dc3[r.clone()]);
            layer.theta3.add_transposed(&dc3[r.clone()], 0, dx);
            g.theta2.add_outer(&dp2[r.clone()], hv, 0);
            layer.theta2.add_transposed(&dp2[r.clone()], 0, dx);
            g.theta4.add_outer(&dp4[r.clone()], hv, 0);
            layer.theta4.add_transposed(&dp4[r], 0, dx);
        }
        dh = dprev;
    }

    for v in 0..n {
        let r = v * h..(v + 1) * h;
        grads.input.add_outer(&dh[r.clone()], graph.node_feature(v), 0);
        grads.input.add_bias(&dh[r]);
    }
    Ok(grads)
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GnnParams,
    pub v: GnnParams,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &GnnParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` (descending `grads`).
pub fn adam_step(
    params: &mut GnnParams,
    grads: &GnnParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NeuralError> {
    params.check_same_shape(grads)?;
    params.check_same_shape(&state.m)?;
    params.check_same_shape(&state.v)?;
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powf(state.t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(state.t as f64);
    let g = grads.to_flat();
    let mut i = 0;
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((p, m), v) in params.tensors_mut().into_iter().zip(ms).zip(vs) {
        for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = g[i];
            i += 1;
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// What a model file records besides its tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub family: Family,
    pub arch: ArchConfig,
    pub seed: u64,
    pub epochs: u64,
}

impl ModelMeta {
    pub fn check_family(&self, graph: &FeatureGraph) -> Result<(), NeuralError> {
        if self.family != graph.family {
            return Err(NeuralError::FamilyMismatch {
                model: self.family,
                graph: graph.family,
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: ModelMeta,
    tensors: Vec<TensorEntry>,
}

/// Serializes a model: 8-byte magic, little-endian `u64` header length, JSON
/// header, then every tensor as little-endian `f64` in header order.
pub fn encode_model(params: &GnnParams, meta: &ModelMeta) -> Result<Vec<u8>, NeuralError> {
    if meta.arch != params.arch {
        return Err(NeuralError::Shape("metadata architecture differs from parameters".into()));
    }
    let tensors = params.tensors();
    let header = Header {
        version: MODEL_VERSION,
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in &tensors {
        for x in values.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(GnnParams, ModelMeta), NeuralError> {
    let corrupt = |m: &str| NeuralError::Corrupt(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic number"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| NeuralError::Corrupt(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("header has no version"))?;
    if version != MODEL_VERSION as u64 {
        return Err(NeuralError::VersionMismatch {
            found: version as u32,
            expected: MODEL_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| NeuralError::Corrupt(e.to_string()))?;
    header.meta.arch.validate()?;
    let mut params = GnnParams::zeros(&header.meta.arch);
    let expected = params.tensors();
    if expected.len() != header.tensors.len()
        || expected
            .iter()
            .zip(&header.tensors)
            .any(|((name, shape, _), t)| *name != t.name || *shape != t.shape)
    {
        return Err(corrupt("tensor list does not match the architecture"));
    }
    let payload = &bytes[header_end..];
    let count = params.param_count();
    if payload.len() != count * 8 {
        return Err(NeuralError::Corrupt(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            count * 8
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(corrupt("non-finite parameter"));
    }
    params.set_flat(&flat)?;
    Ok((params, header.meta))
}

pub fn save_model(params: &GnnParams, meta: &ModelMeta, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    let path = path.as_ref();
    let io = |source| NeuralError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = encode_model(params, meta)?;
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(GnnParams, ModelMeta), NeuralError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NeuralError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_model(&bytes)
}

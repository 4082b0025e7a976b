//! Message-passing layers: the backbone registry, the CLFE composition that
//! wraps every backbone's hidden state, and the full layer stack.
//!
//! Each layer runs three steps: the backbone produces a pre-activation
//! hidden state `h`; [`clfe_compose`] turns it into the layer output
//! `sigma(V + h) + H` (with `V = Concat(H, h)·W + b` when CLFE is on, and
//! `V = 0` otherwise); optional batch normalization follows. The activation
//! is applied exactly once per layer, inside the composition, so the CLFE
//! and baseline arms differ only in `V`.

mod backbone;
mod gat;
mod gatedgcn;
mod gcn;
mod monet;
mod sage;

pub use backbone::{lookup, names, Backbone, Hidden, LayerState, BACKBONES};

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{sym_normalize, Graph, GraphError};
use crate::tensor::{
    grad_check, BatchNormState, GradCheckReport, Phase, SparseMatrix, Tape, Tensor, TensorError,
    TensorId, DEFAULT_H, DEFAULT_TOL,
};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("unknown backbone '{name}'; available: {known}")]
    UnknownBackbone { name: String, known: String },
    #[error("attention heads ({heads}) must divide the hidden width ({hidden})")]
    HeadsDontDivide { heads: usize, hidden: usize },
    #[error("{what} must be at least {min}")]
    SpecTooSmall { what: &'static str, min: usize },
    #[error("{backbone} needs an edge state; none was provided")]
    MissingEdgeState { backbone: &'static str },
    #[error("stack built for node feature width {expected}, got {found}")]
    InputWidth { expected: usize, found: usize },
    #[error("stack built for edge feature width {expected}, got {found}")]
    EdgeWidth { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: TensorId) -> TensorId {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::LeakyRelu(alpha) => tape.leaky_relu(x, alpha),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    None,
    Batch,
}

/// Architecture of one model: backbone kind, depth, width, and the CLFE,
/// skip, activation, and normalization choices. Width is constant across
/// layers; the skip and CLFE add-back terms require it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub backbone: String,
    pub layers: usize,
    pub hidden: usize,
    pub clfe: bool,
    pub skip: bool,
    pub activation: Activation,
    pub norm: Norm,
    /// Attention heads (GAT); must divide `hidden`.
    pub heads: usize,
    /// Gaussian kernels (MoNet).
    pub kernels: usize,
}

impl ModelSpec {
    pub fn new(backbone: &str, layers: usize, hidden: usize) -> Self {
        ModelSpec {
            backbone: backbone.to_string(),
            layers,
            hidden,
            clfe: false,
            skip: true,
            activation: Activation::Relu,
            norm: Norm::Batch,
            heads: 4,
            kernels: 3,
        }
    }

    pub fn with_clfe(mut self, on: bool) -> Self {
        self.clfe = on;
        self
    }

    pub fn validate(&self) -> Result<&'static dyn Backbone, LayerError> {
        if self.hidden == 0 {
            return Err(LayerError::SpecTooSmall { what: "hidden width", min: 1 });
        }
        if self.kernels == 0 {
            return Err(LayerError::SpecTooSmall { what: "kernel count", min: 1 });
        }
        if self.heads == 0 {
            return Err(LayerError::SpecTooSmall { what: "head count", min: 1 });
        }
        let backbone = lookup(&self.backbone)?;
        if self.backbone == "gat" && !self.hidden.is_multiple_of(self.heads) {
            return Err(LayerError::HeadsDontDivide { heads: self.heads, hidden: self.hidden });
        }
        Ok(backbone)
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Deterministic per-parameter initialization: each parameter draws from its
/// own stream keyed by (seed, name), so two models sharing a seed initialize
/// shared parameter names identically regardless of which extra parameters
/// either model has.
pub struct ParamInit {
    seed: u64,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        ParamInit { seed }
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()))
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(&self, name: &str, rows: usize, cols: usize) -> Param {
        let mut rng = self.rng(name);
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        Param { name: name.to_string(), value: Tensor::new(rows, cols, data) }
    }

    pub fn uniform01(&self, name: &str, rows: usize, cols: usize) -> Param {
        let mut rng = self.rng(name);
        let data = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
        Param { name: name.to_string(), value: Tensor::new(rows, cols, data) }
    }

    pub fn zeros(&self, name: &str, rows: usize, cols: usize) -> Param {
        Param { name: name.to_string(), value: Tensor::zeros(rows, cols) }
    }

    pub fn ones(&self, name: &str, rows: usize, cols: usize) -> Param {
        Param { name: name.to_string(), value: Tensor::filled(rows, cols, 1.0) }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Constants a stack needs for one batch graph: the normalized adjacency,
/// arc index arrays (with and without self-loops), degree scalings, MoNet
/// pseudo-coordinates, and the raw features.
pub struct BatchContext {
    pub n: usize,
    pub norm_adj: Rc<SparseMatrix>,
    /// Arc endpoints in CSR order.
    pub edge_src: Rc<Vec<usize>>,
    pub edge_dst: Rc<Vec<usize>>,
    /// Arcs plus one self-loop per node (attention/kernel support).
    pub loop_src: Rc<Vec<usize>>,
    pub loop_dst: Rc<Vec<usize>>,
    /// 1/degree per node, 0 for isolated nodes.
    pub inv_degree: Tensor,
    /// Per loop-arc (1/sqrt(d~_dst), 1/sqrt(d~_src)).
    pub pseudo: Tensor,
    pub node_feats: Tensor,
    /// Raw edge features per arc; all-ones Ex1 when the graph has none.
    pub edge_feats: Tensor,
}

impl BatchContext {
    pub fn new(g: &Graph) -> Result<Self, LayerError> {
        let norm_adj = sym_normalize(g)?.matrix();
        let edge_src = Rc::new(g.arc_sources());
        let edge_dst = Rc::new(g.cols().to_vec());
        let mut loop_src = edge_src.as_ref().clone();
        let mut loop_dst = edge_dst.as_ref().clone();
        loop_src.extend(0..g.n());
        loop_dst.extend(0..g.n());
        let deg = g.degrees();
        let inv_degree = Tensor::col(
            &deg.raw
                .iter()
                .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
                .collect::<Vec<f64>>(),
        );
        let inv_sqrt: Vec<f64> = deg.self_looped.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
        let mut pseudo = Vec::with_capacity(loop_src.len() * 2);
        for (&s, &t) in loop_src.iter().zip(&loop_dst) {
            pseudo.push(inv_sqrt[t]);
            pseudo.push(inv_sqrt[s]);
        }
        let edge_feats = match g.edge_feats() {
            Some(f) => f.clone(),
            None => Tensor::filled(g.num_edges(), 1, 1.0),
        };
        Ok(BatchContext {
            n: g.n(),
            norm_adj,
            edge_src,
            edge_dst,
            loop_src: Rc::new(loop_src),
            loop_dst: Rc::new(loop_dst),
            inv_degree,
            pseudo: Tensor::new(g.num_edges() + g.n(), 2, pseudo),
            node_feats: g.node_feats().clone(),
            edge_feats,
        })
    }
}

/// Layer output from the previous features `h_prev` and the backbone hidden
/// state `hidden`. With CLFE parameters `(w, b)` present the encoding
/// `V = Concat(h_prev, hidden)·w + b` is added back before the activation;
/// the skip flag adds `h_prev` after it.
pub fn clfe_compose(
    tape: &mut Tape,
    h_prev: TensorId,
    hidden: TensorId,
    clfe_params: Option<(TensorId, TensorId)>,
    skip: bool,
    activation: Activation,
) -> Result<TensorId, TensorError> {
    let pre = match clfe_params {
        Some((w, b)) => {
            let cat = tape.concat_cols(h_prev, hidden)?;
            let enc = tape.matmul(cat, w)?;
            let v = tape.add_row(enc, b)?;
            tape.add(v, hidden)?
        }
        None => hidden,
    };
    let activated = activation.apply(tape, pre);
    if skip {
        tape.add(activated, h_prev)
    } else {
        Ok(activated)
    }
}

struct LayerLayout {
    backbone: std::ops::Range<usize>,
    clfe: Option<(usize, usize)>,
    norm: Option<(usize, usize)>,
}

/// An embedding layer plus `layers` backbone+CLFE layers with shared width.
pub struct GnnStack {
    spec: ModelSpec,
    backbone: &'static dyn Backbone,
    params: Vec<Param>,
    embed: (usize, usize),
    edge_embed: Option<(usize, usize)>,
    layout: Vec<LayerLayout>,
    node_norm: Vec<Option<BatchNormState>>,
    layer_state: Vec<LayerState>,
    in_width: usize,
    edge_width: usize,
}

impl GnnStack {
    /// Builds the stack and initializes all parameters from `seed`.
    /// `edge_width` is the raw edge feature width for backbones that consume
    /// one (absent edge features fall back to a constant 1 per arc).
    pub fn new(
        spec: ModelSpec,
        in_width: usize,
        edge_width: Option<usize>,
        seed: u64,
    ) -> Result<Self, LayerError> {
        let backbone = spec.validate()?;
        let init = ParamInit::new(seed);
        let d = spec.hidden;
        let mut params = Vec::new();
        fn push(p: Param, params: &mut Vec<Param>) -> usize {
            params.push(p);
            params.len() - 1
        }
        let embed_w = push(init.glorot("embed.w", in_width, d), &mut params);
        let embed_b = push(init.zeros("embed.b", 1, d), &mut params);
        let edge_width = edge_width.unwrap_or(1);
        let edge_embed = if backbone.uses_edge_state() {
            let w = push(init.glorot("edge_embed.w", edge_width, d), &mut params);
            let b = push(init.zeros("edge_embed.b", 1, d), &mut params);
            Some((w, b))
        } else {
            None
        };
        let mut layout = Vec::with_capacity(spec.layers);
        let mut node_norm = Vec::with_capacity(spec.layers);
        let mut layer_state = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let prefix = format!("layer{l}");
            let start = params.len();
            params.extend(backbone.layer_params(&spec, &prefix, &init));
            let backbone_range = start..params.len();
            let clfe = spec.clfe.then(|| {
                let w = push(init.glorot(&format!("{prefix}.clfe.w"), 2 * d, d), &mut params);
                let b = push(init.zeros(&format!("{prefix}.clfe.b"), 1, d), &mut params);
                (w, b)
            });
            let norm = (spec.norm == Norm::Batch).then(|| {
                let g = push(init.ones(&format!("{prefix}.norm.gamma"), 1, d), &mut params);
                let b = push(init.zeros(&format!("{prefix}.norm.beta"), 1, d), &mut params);
                (g, b)
            });
            layout.push(LayerLayout { backbone: backbone_range, clfe, norm });
            node_norm.push(match spec.norm {
                Norm::Batch => Some(BatchNormState::new(d)),
                Norm::None => None,
            });
            layer_state.push(backbone.init_state(&spec));
        }
        Ok(GnnStack {
            spec,
            backbone,
            params,
            embed: (embed_w, embed_b),
            edge_embed,
            layout,
            node_norm,
            layer_state,
            in_width,
            edge_width,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Sets every CLFE weight and bias to zero; the stack then computes the
    /// same outputs as the baseline arm.
    pub fn zero_clfe(&mut self) {
        for p in &mut self.params {
            if p.name.contains(".clfe.") {
                let (r, c) = (p.value.rows(), p.value.cols());
                p.value = Tensor::zeros(r, c);
            }
        }
    }

    /// Registers every parameter on the tape, in declaration order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<TensorId> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Runs embedding and all layers; returns the final node features.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        ctx: &BatchContext,
        ids: &[TensorId],
        phase: Phase,
    ) -> Result<TensorId, LayerError> {
        if ctx.node_feats.cols() != self.in_width {
            return Err(LayerError::InputWidth {
                expected: self.in_width,
                found: ctx.node_feats.cols(),
            });
        }
        let x = tape.constant(ctx.node_feats.clone());
        let xe = tape.matmul(x, ids[self.embed.0])?;
        let mut h = tape.add_row(xe, ids[self.embed.1])?;
        let mut edge = match self.edge_embed {
            Some((w, b)) => {
                if ctx.edge_feats.cols() != self.edge_width {
                    return Err(LayerError::EdgeWidth {
                        expected: self.edge_width,
                        found: ctx.edge_feats.cols(),
                    });
                }
                let raw = tape.constant(ctx.edge_feats.clone());
                let we = tape.matmul(raw, ids[w])?;
                Some(tape.add_row(we, ids[b])?)
            }
            None => None,
        };
        for l in 0..self.spec.layers {
            let layer = &self.layout[l];
            let layer_ids: Vec<TensorId> = layer.backbone.clone().map(|i| ids[i]).collect();
            let out = self.backbone.hidden(
                tape,
                ctx,
                &self.spec,
                h,
                edge,
                &layer_ids,
                &mut self.layer_state[l],
                phase,
            )?;
            edge = out.edge;
            let clfe = layer.clfe.map(|(w, b)| (ids[w], ids[b]));
            let composed =
                clfe_compose(tape, h, out.node, clfe, self.spec.skip, self.spec.activation)?;
            h = match (layer.norm, self.node_norm[l].as_mut()) {
                (Some((g, b)), Some(bn)) => tape.batch_norm(composed, ids[g], ids[b], bn, phase)?,
                _ => composed,
            };
        }
        Ok(h)
    }
}

/// Builds a small random graph and verifies every stack parameter's gradient
/// against central finite differences. Covers the full layer path: embedding,
/// backbone, CLFE composition, and batch normalization.
pub fn check_stack_gradients(spec: &ModelSpec, seed: u64) -> Result<GradCheckReport, LayerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let in_width = 3;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < 0.5 {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        pairs.push((0, 1));
    }
    let feats =
        Tensor::new(n, in_width, (0..n * in_width).map(|_| rng.random_range(-1.0..1.0)).collect());
    let graph = Graph::undirected(n, &pairs, feats)?;
    let ctx = BatchContext::new(&graph)?;
    let mut stack = GnnStack::new(spec.clone(), in_width, None, seed)?;
    let values: Vec<Tensor> = stack.params().iter().map(|p| p.value.clone()).collect();
    let report = grad_check(
        |tape, ids| {
            let h = stack.forward(tape, &ctx, ids, Phase::Train).map_err(|e| match e {
                LayerError::Tensor(t) => t,
                other => panic!("non-tensor failure in gradient check: {other}"),
            })?;
            Ok(tape.sum_all(h))
        },
        &values,
        DEFAULT_H,
        DEFAULT_TOL,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clfe_compose_hand_example() {
        // d=1, identity activation, skip on:
        // V = [2, 3]·[0.5; 0.5] = 2.5; out = (2.5 + 3) + 2 = 7.5
        let mut tape = Tape::new();
        let h_prev = tape.constant(Tensor::row(&[2.0]));
        let hidden = tape.constant(Tensor::row(&[3.0]));
        let w = tape.constant(Tensor::col(&[0.5, 0.5]));
        let b = tape.constant(Tensor::row(&[0.0]));
        let out = clfe_compose(&mut tape, h_prev, hidden, Some((w, b)), true, Activation::Identity)
            .unwrap();
        assert_eq!(tape.value(out).data(), &[7.5]);
    }

    #[test]
    fn clfe_compose_relu_clamps_hidden() {
        // W = 0: out = relu(-5) + 3 = 3
        let mut tape = Tape::new();
        let h_prev = tape.constant(Tensor::row(&[3.0]));
        let hidden = tape.constant(Tensor::row(&[-5.0]));
        let w = tape.constant(Tensor::zeros(2, 1));
        let b = tape.constant(Tensor::row(&[0.0]));
        let out =
            clfe_compose(&mut tape, h_prev, hidden, Some((w, b)), true, Activation::Relu).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0]);
    }

    #[test]
    fn zero_clfe_weights_match_baseline_bit_for_bit() {
        let mut tape = Tape::new();
        let h_prev = tape.constant(Tensor::row(&[0.25, -1.5]));
        let hidden = tape.constant(Tensor::row(&[1.75, 0.5]));
        let w = tape.constant(Tensor::zeros(4, 2));
        let b = tape.constant(Tensor::zeros(1, 2));
        let with =
            clfe_compose(&mut tape, h_prev, hidden, Some((w, b)), true, Activation::Relu).unwrap();
        let without =
            clfe_compose(&mut tape, h_prev, hidden, None, true, Activation::Relu).unwrap();
        assert_eq!(tape.value(with).data(), tape.value(without).data());
    }

    fn small_graph(seed: u64, n: usize, in_width: usize) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.5 {
                    pairs.push((i, j));
                }
            }
        }
        if pairs.is_empty() {
            pairs.push((0, 1));
        }
        let feats = Tensor::new(
            n,
            in_width,
            (0..n * in_width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        Graph::undirected(n, &pairs, feats).unwrap()
    }

    #[test]
    fn empty_stack_returns_embedded_input() {
        let g = small_graph(3, 5, 3);
        let ctx = BatchContext::new(&g).unwrap();
        let mut stack = GnnStack::new(ModelSpec::new("gcn", 0, 4), 3, None, 7).unwrap();
        let mut tape = Tape::new();
        let ids = stack.bind(&mut tape);
        let out = stack.forward(&mut tape, &ctx, &ids, Phase::Train).unwrap();
        // reproduce the embedding by hand
        let mut tape2 = Tape::new();
        let x = tape2.constant(ctx.node_feats.clone());
        let w = tape2.constant(stack.params()[0].value.clone());
        let b = tape2.constant(stack.params()[1].value.clone());
        let xe = tape2.matmul(x, w).unwrap();
        let expected = tape2.add_row(xe, b).unwrap();
        assert_eq!(tape.value(out).data(), tape2.value(expected).data());
    }

    #[test]
    fn one_gcn_layer_composes_hidden_and_skip() {
        // L=1, no norm: the stack output equals composing gcn_hidden with
        // clfe_compose by hand
        let g = small_graph(11, 4, 3);
        let ctx = BatchContext::new(&g).unwrap();
        let mut spec = ModelSpec::new("gcn", 1, 4);
        spec.norm = Norm::None;
        let mut stack = GnnStack::new(spec, 3, None, 21).unwrap();
        let mut tape = Tape::new();
        let ids = stack.bind(&mut tape);
        let out = stack.forward(&mut tape, &ctx, &ids, Phase::Train).unwrap();

        let by_name = |n: &str| stack.params().iter().find(|p| p.name == n).unwrap().value.clone();
        let mut t2 = Tape::new();
        let x = t2.constant(ctx.node_feats.clone());
        let ew = t2.constant(by_name("embed.w"));
        let eb = t2.constant(by_name("embed.b"));
        let xe = t2.matmul(x, ew).unwrap();
        let h0 = t2.add_row(xe, eb).unwrap();
        let mixed = t2.spmm_sym(ctx.norm_adj.clone(), h0).unwrap();
        let w = t2.constant(by_name("layer0.gcn.w"));
        let hid = t2.matmul(mixed, w).unwrap();
        let expected = clfe_compose(&mut t2, h0, hid, None, true, Activation::Relu).unwrap();
        assert_eq!(tape.value(out).data(), t2.value(expected).data());
    }

    #[test]
    fn deep_stack_runs_and_backpropagates() {
        let g = small_graph(5, 20, 3);
        let ctx = BatchContext::new(&g).unwrap();
        let spec = ModelSpec::new("gcn", 16, 8).with_clfe(true);
        let mut stack = GnnStack::new(spec, 3, None, 13).unwrap();
        let mut tape = Tape::new();
        let ids = stack.bind(&mut tape);
        let out = stack.forward(&mut tape, &ctx, &ids, Phase::Train).unwrap();
        assert!(tape.value(out).is_finite());
        let loss = tape.sum_all(out);
        tape.backward(loss).unwrap();
        assert!(ids.iter().all(|&id| tape.grad(id).is_some()));
    }

    #[test]
    fn width_is_preserved_across_layers_and_backbones() {
        for backbone in names() {
            let g = small_graph(9, 6, 3);
            let ctx = BatchContext::new(&g).unwrap();
            let mut spec = ModelSpec::new(backbone, 3, 8).with_clfe(true);
            spec.heads = 2;
            let mut stack = GnnStack::new(spec, 3, None, 3).unwrap();
            let mut tape = Tape::new();
            let ids = stack.bind(&mut tape);
            let out = stack.forward(&mut tape, &ctx, &ids, Phase::Train).unwrap();
            assert_eq!(tape.value(out).rows(), 6);
            assert_eq!(tape.value(out).cols(), 8, "{backbone}");
        }
    }

    #[test]
    fn permutation_equivariance_for_every_backbone() {
        // relabeling nodes by pi permutes the outputs by pi
        let n = 6;
        let in_width = 3;
        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pairs = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)];
        let feats = Tensor::new(
            n,
            in_width,
            (0..n * in_width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let g = Graph::undirected(n, &pairs, feats.clone()).unwrap();
        let permuted_pairs: Vec<(usize, usize)> =
            pairs.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut permuted_feats = Tensor::zeros(n, in_width);
        for i in 0..n {
            for j in 0..in_width {
                permuted_feats.set(perm[i], j, feats.get(i, j));
            }
        }
        let gp = Graph::undirected(n, &permuted_pairs, permuted_feats).unwrap();

        for backbone in names() {
            for clfe in [false, true] {
                let mut spec = ModelSpec::new(backbone, 2, 4).with_clfe(clfe);
                spec.heads = 2;
                spec.norm = Norm::None;
                let run = |graph: &Graph| {
                    let ctx = BatchContext::new(graph).unwrap();
                    let mut stack = GnnStack::new(spec.clone(), in_width, None, 77).unwrap();
                    let mut tape = Tape::new();
                    let ids = stack.bind(&mut tape);
                    let out = stack.forward(&mut tape, &ctx, &ids, Phase::Train).unwrap();
                    tape.value(out).clone()
                };
                let base = run(&g);
                let permuted = run(&gp);
                for i in 0..n {
                    for j in 0..4 {
                        let (a, b) = (base.get(i, j), permuted.get(perm[i], j));
                        assert!(
                            (a - b).abs() <= 1e-10,
                            "{backbone} clfe={clfe} node {i} col {j}: {a} vs {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_suite_passes_for_gcn_both_arms() {
        for clfe in [false, true] {
            let spec = ModelSpec::new("gcn", 2, 4).with_clfe(clfe);
            let report = check_stack_gradients(&spec, 42).unwrap();
            assert!(report.passed(), "clfe={clfe}: {:?}", report.worst);
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut spec = ModelSpec::new("gat", 1, 6);
        spec.heads = 4;
        assert!(matches!(spec.validate(), Err(LayerError::HeadsDontDivide { .. })));
    }
}

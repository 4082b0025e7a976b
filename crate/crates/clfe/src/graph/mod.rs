//! Graph data model: CSR adjacency, degree bookkeeping, symmetric
//! normalization, block-diagonal batching, synthetic generators, and
//! line-delimited graph file I/O.
//!
//! Undirected graphs store every edge in both directions; pair-aligned data
//! (edge features, edge labels) is supplied once per undirected pair and
//! duplicated onto both arcs.

mod generate;
mod io;
mod tsp;

pub use generate::{
    gen_graph_classes, gen_regression, gen_sbm, gen_sbm_set, regression_target, SbmSpec,
};
pub use io::{load_graphs, save_graphs};
pub use tsp::{gen_tsp, held_karp_tour, tour_length, TspLabelMode, MAX_EXACT_NODES};

use std::rc::Rc;

use thiserror::Error;

use crate::tensor::{SparseMatrix, Tensor};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({src},{dst}) is out of range for {n} nodes")]
    EdgeOutOfRange { src: usize, dst: usize, n: usize },
    #[error("duplicate edge ({src},{dst})")]
    DuplicateEdge { src: usize, dst: usize },
    #[error("self-loop on node {node}; self-loops are added explicitly")]
    UnexpectedSelfLoop { node: usize },
    #[error("graph already has self-loops")]
    AlreadySelfLooped,
    #[error("{op} requires an undirected graph")]
    Directed { op: &'static str },
    #[error("node features have {found} rows, expected {expected}")]
    NodeFeatureRows { expected: usize, found: usize },
    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },
    #[error("graphs disagree on {what}")]
    InconsistentBatch { what: &'static str },
    #[error("cannot batch an empty graph (index {index})")]
    EmptyGraphInBatch { index: usize },
    #[error("cannot batch zero graphs")]
    EmptyBatch,
    #[error("probability {value} outside [0, 1]")]
    InvalidProbability { value: f64 },
    #[error("{what} must be at least {min}, got {value}")]
    TooSmall { what: &'static str, min: usize, value: usize },
    #[error("exact tour labeling needs n <= {max}, got {n}; use the 2-opt heuristic mode for larger instances")]
    ExactTourTooLarge { n: usize, max: usize },
    #[error("neighbor count {k} must be below node count {n}")]
    NeighborCount { k: usize, n: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },
    #[error("graph contains a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable graph with CSR adjacency. Node features are `n x f`; optional
/// edge features and labels are aligned to the directed arc order.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    undirected: bool,
    has_self_loops: bool,
    node_feats: Tensor,
    edge_feats: Option<Tensor>,
    node_labels: Option<Vec<usize>>,
    edge_labels: Option<Vec<usize>>,
    graph_label: Option<usize>,
    graph_target: Option<f64>,
}

/// Pair-aligned edge data for [`Graph::undirected_with`]: one row/entry per
/// undirected pair, in the order the pairs are passed.
#[derive(Debug, Default)]
pub struct EdgeData {
    pub feats: Option<Tensor>,
    pub labels: Option<Vec<usize>>,
}

impl Graph {
    pub fn undirected(
        n: usize,
        pairs: &[(usize, usize)],
        node_feats: Tensor,
    ) -> Result<Self, GraphError> {
        Self::undirected_with(n, pairs, node_feats, EdgeData::default())
    }

    /// Builds an undirected graph from pairs listed once. Pairs may be given
    /// in either orientation but must not repeat or contain self-loops.
    pub fn undirected_with(
        n: usize,
        pairs: &[(usize, usize)],
        node_feats: Tensor,
        edge_data: EdgeData,
    ) -> Result<Self, GraphError> {
        if node_feats.rows() != n {
            return Err(GraphError::NodeFeatureRows { expected: n, found: node_feats.rows() });
        }
        if let Some(f) = &edge_data.feats {
            if f.rows() != pairs.len() {
                return Err(GraphError::LengthMismatch {
                    what: "edge features",
                    expected: pairs.len(),
                    found: f.rows(),
                });
            }
        }
        if let Some(l) = &edge_data.labels {
            if l.len() != pairs.len() {
                return Err(GraphError::LengthMismatch {
                    what: "edge labels",
                    expected: pairs.len(),
                    found: l.len(),
                });
            }
        }
        // expand to both directions, remembering the source pair of each arc
        let mut arcs: Vec<(usize, usize, usize)> = Vec::with_capacity(pairs.len() * 2);
        for (p, &(a, b)) in pairs.iter().enumerate() {
            if a >= n || b >= n {
                return Err(GraphError::EdgeOutOfRange { src: a, dst: b, n });
            }
            if a == b {
                return Err(GraphError::UnexpectedSelfLoop { node: a });
            }
            arcs.push((a, b, p));
            arcs.push((b, a, p));
        }
        arcs.sort_unstable();
        for w in arcs.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(GraphError::DuplicateEdge { src: w[0].0, dst: w[0].1 });
            }
        }
        let (offsets, cols, pair_of_arc) = build_csr(n, &arcs);
        // empty edge data carries no information (not even a width), so an
        // edgeless graph canonicalizes to None
        let edge_feats = if pairs.is_empty() {
            None
        } else {
            edge_data.feats.map(|f| {
                let g = f.cols();
                let mut data = Vec::with_capacity(pair_of_arc.len() * g);
                for &p in &pair_of_arc {
                    data.extend_from_slice(f.row_slice(p));
                }
                Tensor::new(pair_of_arc.len(), g, data)
            })
        };
        let edge_labels = if pairs.is_empty() {
            None
        } else {
            edge_data.labels.map(|l| pair_of_arc.iter().map(|&p| l[p]).collect::<Vec<usize>>())
        };
        Ok(Graph {
            n,
            offsets,
            cols,
            undirected: true,
            has_self_loops: false,
            node_feats,
            edge_feats,
            node_labels: None,
            edge_labels,
            graph_label: None,
            graph_target: None,
        })
    }

    /// Directed graph from an arc list. Mainly useful for exercising the
    /// contracts that require undirected input.
    pub fn directed(
        n: usize,
        arcs: &[(usize, usize)],
        node_feats: Tensor,
    ) -> Result<Self, GraphError> {
        if node_feats.rows() != n {
            return Err(GraphError::NodeFeatureRows { expected: n, found: node_feats.rows() });
        }
        let mut list: Vec<(usize, usize, usize)> = Vec::with_capacity(arcs.len());
        for &(a, b) in arcs {
            if a >= n || b >= n {
                return Err(GraphError::EdgeOutOfRange { src: a, dst: b, n });
            }
            list.push((a, b, 0));
        }
        list.sort_unstable();
        for w in list.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(GraphError::DuplicateEdge { src: w[0].0, dst: w[0].1 });
            }
        }
        let has_self_loops = list.iter().any(|&(a, b, _)| a == b);
        let (offsets, cols, _) = build_csr(n, &list);
        Ok(Graph {
            n,
            offsets,
            cols,
            undirected: false,
            has_self_loops,
            node_feats,
            edge_feats: None,
            node_labels: None,
            edge_labels: None,
            graph_label: None,
            graph_target: None,
        })
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self, GraphError> {
        if labels.len() != self.n {
            return Err(GraphError::LengthMismatch {
                what: "node labels",
                expected: self.n,
                found: labels.len(),
            });
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_graph_target(mut self, target: f64) -> Self {
        self.graph_target = Some(target);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of directed arcs (twice the pair count for undirected graphs).
    pub fn num_edges(&self) -> usize {
        self.cols.len()
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn node_feats(&self) -> &Tensor {
        &self.node_feats
    }

    pub fn edge_feats(&self) -> Option<&Tensor> {
        self.edge_feats.as_ref()
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn edge_labels(&self) -> Option<&[usize]> {
        self.edge_labels.as_deref()
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    pub fn graph_target(&self) -> Option<f64> {
        self.graph_target
    }

    /// Directed arcs in CSR order.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |src| self.neighbors(src).iter().map(move |&dst| (src, dst)))
    }

    /// Source node of every arc, expanded from the CSR offsets.
    pub fn arc_sources(&self) -> Vec<usize> {
        let mut src = Vec::with_capacity(self.cols.len());
        for i in 0..self.n {
            src.extend(std::iter::repeat_n(i, self.offsets[i + 1] - self.offsets[i]));
        }
        src
    }

    /// Canonical undirected pairs (src <= dst) with the CSR arc index of the
    /// (src, dst) orientation.
    pub fn pairs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.cols.len() / 2);
        for i in 0..self.n {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let j = self.cols[k];
                if i <= j {
                    out.push((i, j, k));
                }
            }
        }
        out
    }

    pub fn degrees(&self) -> Degrees {
        let raw: Vec<usize> = (0..self.n).map(|i| self.offsets[i + 1] - self.offsets[i]).collect();
        let self_looped = raw.iter().map(|&d| d + 1).collect();
        Degrees { raw, self_looped }
    }
}

/// Per-node degree counts, with the self-loop-augmented variant alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct Degrees {
    pub raw: Vec<usize>,
    pub self_looped: Vec<usize>,
}

fn build_csr(
    n: usize,
    sorted_arcs: &[(usize, usize, usize)],
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut offsets = vec![0usize; n + 1];
    let mut cols = Vec::with_capacity(sorted_arcs.len());
    let mut aux = Vec::with_capacity(sorted_arcs.len());
    for &(src, dst, p) in sorted_arcs {
        offsets[src + 1] += 1;
        cols.push(dst);
        aux.push(p);
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    (offsets, cols, aux)
}

/// Adds the edge (i, i) to every node. Fails if any self-loop is present.
/// New loops get zero edge features and label 0 when such data exists.
pub fn add_self_loops(g: &Graph) -> Result<Graph, GraphError> {
    if g.has_self_loops {
        return Err(GraphError::AlreadySelfLooped);
    }
    // original arc index, or None for an inserted loop
    let mut arcs: Vec<(usize, usize, Option<usize>)> = Vec::with_capacity(g.num_edges() + g.n);
    for i in 0..g.n {
        for k in g.offsets[i]..g.offsets[i + 1] {
            arcs.push((i, g.cols[k], Some(k)));
        }
        arcs.push((i, i, None));
    }
    arcs.sort_unstable_by_key(|&(a, b, _)| (a, b));
    let plain: Vec<(usize, usize, usize)> = arcs.iter().map(|&(a, b, _)| (a, b, 0)).collect();
    let (offsets, cols, _) = build_csr(g.n, &plain);
    let edge_feats = g.edge_feats.as_ref().map(|f| {
        let w = f.cols();
        let mut data = Vec::with_capacity(arcs.len() * w);
        for &(_, _, src) in &arcs {
            match src {
                Some(e) => data.extend_from_slice(f.row_slice(e)),
                None => data.extend(std::iter::repeat_n(0.0, w)),
            }
        }
        Tensor::new(arcs.len(), w, data)
    });
    let edge_labels = g
        .edge_labels
        .as_ref()
        .map(|l| arcs.iter().map(|&(_, _, src)| src.map_or(0, |e| l[e])).collect::<Vec<usize>>());
    Ok(Graph {
        n: g.n,
        offsets,
        cols,
        undirected: g.undirected,
        has_self_loops: true,
        node_feats: g.node_feats.clone(),
        edge_feats,
        node_labels: g.node_labels.clone(),
        edge_labels,
        graph_label: g.graph_label,
        graph_target: g.graph_target,
    })
}

/// Symmetrically normalized adjacency with self-loops: entry (i, j) is
/// `1/sqrt(d~_i * d~_j)` where `d~` counts the added self-loop.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: Rc<SparseMatrix>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> Rc<SparseMatrix> {
        Rc::clone(&self.matrix)
    }

    pub fn n(&self) -> usize {
        self.matrix.n
    }

    pub fn value_at(&self, i: usize, j: usize) -> Option<f64> {
        self.matrix.value_at(i, j)
    }
}

/// Computes `D~^{-1/2} (A + I) D~^{-1/2}` for an undirected, loop-free graph.
pub fn sym_normalize(g: &Graph) -> Result<NormalizedAdjacency, GraphError> {
    if !g.undirected {
        return Err(GraphError::Directed { op: "sym_normalize" });
    }
    if g.has_self_loops {
        return Err(GraphError::AlreadySelfLooped);
    }
    let deg = g.degrees();
    let mut offsets = Vec::with_capacity(g.n + 1);
    let mut cols = Vec::with_capacity(g.num_edges() + g.n);
    let mut vals = Vec::with_capacity(g.num_edges() + g.n);
    offsets.push(0);
    for i in 0..g.n {
        let di = deg.self_looped[i];
        // merge the self entry into the sorted neighbor list
        let mut inserted_self = false;
        for &j in g.neighbors(i) {
            if !inserted_self && j > i {
                cols.push(i);
                vals.push(1.0 / ((di * di) as f64).sqrt());
                inserted_self = true;
            }
            cols.push(j);
            vals.push(1.0 / ((di * deg.self_looped[j]) as f64).sqrt());
        }
        if !inserted_self {
            cols.push(i);
            vals.push(1.0 / ((di * di) as f64).sqrt());
        }
        offsets.push(cols.len());
    }
    Ok(NormalizedAdjacency { matrix: Rc::new(SparseMatrix { n: g.n, offsets, cols, vals }) })
}

/// Block-diagonal merge of several graphs, with bookkeeping to map nodes
/// back to their member graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    graph: Graph,
    graph_offsets: Vec<usize>,
    sizes: Vec<usize>,
    segments: Vec<usize>,
    graph_labels: Option<Vec<usize>>,
    graph_targets: Option<Vec<f64>>,
}

impl GraphBatch {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn num_graphs(&self) -> usize {
        self.sizes.len()
    }

    pub fn graph_offsets(&self) -> &[usize] {
        &self.graph_offsets
    }

    /// Node index -> member graph index; non-decreasing.
    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn graph_labels(&self) -> Option<&[usize]> {
        self.graph_labels.as_deref()
    }

    pub fn graph_targets(&self) -> Option<&[f64]> {
        self.graph_targets.as_deref()
    }

    /// Reconstructs the member graphs from the merged representation.
    pub fn unbatch(&self) -> Vec<Graph> {
        let g = &self.graph;
        let mut out = Vec::with_capacity(self.sizes.len());
        for (m, (&start, &size)) in self.graph_offsets.iter().zip(&self.sizes).enumerate() {
            let nodes = start..start + size;
            let mut pairs = Vec::new();
            let mut pair_arcs = Vec::new();
            for (i, j, k) in g.pairs() {
                if nodes.contains(&i) {
                    pairs.push((i - start, j - start));
                    pair_arcs.push(k);
                }
            }
            let node_feats = Tensor::new(
                size,
                g.node_feats.cols(),
                nodes.clone().flat_map(|i| g.node_feats.row_slice(i).to_vec()).collect(),
            );
            let edge_data = EdgeData {
                feats: g.edge_feats.as_ref().map(|f| {
                    Tensor::new(
                        pairs.len(),
                        f.cols(),
                        pair_arcs.iter().flat_map(|&k| f.row_slice(k).to_vec()).collect(),
                    )
                }),
                labels: g
                    .edge_labels
                    .as_ref()
                    .map(|l| pair_arcs.iter().map(|&k| l[k]).collect()),
            };
            let mut member = Graph::undirected_with(size, &pairs, node_feats, edge_data)
                .expect("member graphs of a batch are valid by construction");
            if let Some(nl) = &g.node_labels {
                member = member
                    .with_node_labels(nl[start..start + size].to_vec())
                    .expect("label slice matches node count");
            }
            if let Some(gl) = &self.graph_labels {
                member = member.with_graph_label(gl[m]);
            }
            if let Some(gt) = &self.graph_targets {
                member = member.with_graph_target(gt[m]);
            }
            out.push(member);
        }
        out
    }
}

/// Merges graphs into one block-diagonal graph with per-member offsets.
pub fn batch(graphs: &[Graph]) -> Result<GraphBatch, GraphError> {
    if graphs.is_empty() {
        return Err(GraphError::EmptyBatch);
    }
    let feat_width = graphs[0].node_feats.cols();
    let has_node_labels = graphs[0].node_labels.is_some();
    let has_graph_labels = graphs[0].graph_label.is_some();
    let has_graph_targets = graphs[0].graph_target.is_some();
    // edge data presence/width is judged over members that have edges;
    // edgeless members carry canonical None edge data
    let first_edged = graphs.iter().find(|g| g.num_edges() > 0);
    let edge_width = first_edged.and_then(|g| g.edge_feats.as_ref().map(Tensor::cols));
    let has_edge_labels = first_edged.is_some_and(|g| g.edge_labels.is_some());
    for (i, g) in graphs.iter().enumerate() {
        if g.n == 0 {
            return Err(GraphError::EmptyGraphInBatch { index: i });
        }
        if !g.undirected {
            return Err(GraphError::Directed { op: "batch" });
        }
        if g.node_feats.cols() != feat_width {
            return Err(GraphError::InconsistentBatch { what: "node feature width" });
        }
        if g.num_edges() > 0 {
            if g.edge_feats.as_ref().map(Tensor::cols) != edge_width {
                return Err(GraphError::InconsistentBatch { what: "edge feature width" });
            }
            if g.edge_labels.is_some() != has_edge_labels {
                return Err(GraphError::InconsistentBatch { what: "label presence" });
            }
        }
        if g.node_labels.is_some() != has_node_labels
            || g.graph_label.is_some() != has_graph_labels
            || g.graph_target.is_some() != has_graph_targets
        {
            return Err(GraphError::InconsistentBatch { what: "label presence" });
        }
    }

    let total_n: usize = graphs.iter().map(|g| g.n).sum();
    let mut pairs = Vec::new();
    let mut pair_sources: Vec<(usize, usize)> = Vec::new(); // (graph, arc index)
    let mut node_data = Vec::with_capacity(total_n * feat_width);
    let mut graph_offsets = Vec::with_capacity(graphs.len());
    let mut segments = Vec::with_capacity(total_n);
    let mut node_labels = Vec::new();
    let mut offset = 0usize;
    for (m, g) in graphs.iter().enumerate() {
        graph_offsets.push(offset);
        for (i, j, k) in g.pairs() {
            pairs.push((i + offset, j + offset));
            pair_sources.push((m, k));
        }
        node_data.extend_from_slice(g.node_feats.data());
        segments.extend(std::iter::repeat_n(m, g.n));
        if let Some(nl) = &g.node_labels {
            node_labels.extend_from_slice(nl);
        }
        offset += g.n;
    }
    let edge_data = EdgeData {
        feats: edge_width.map(|w| {
            let mut data = Vec::with_capacity(pairs.len() * w);
            for &(m, k) in &pair_sources {
                data.extend_from_slice(graphs[m].edge_feats.as_ref().unwrap().row_slice(k));
            }
            Tensor::new(pairs.len(), w, data)
        }),
        labels: if has_edge_labels {
            Some(
                pair_sources
                    .iter()
                    .map(|&(m, k)| graphs[m].edge_labels.as_ref().unwrap()[k])
                    .collect(),
            )
        } else {
            None
        },
    };
    let mut merged = Graph::undirected_with(
        total_n,
        &pairs,
        Tensor::new(total_n, feat_width, node_data),
        edge_data,
    )?;
    if has_node_labels {
        merged = merged.with_node_labels(node_labels)?;
    }
    Ok(GraphBatch {
        graph: merged,
        graph_offsets,
        sizes: graphs.iter().map(|g| g.n).collect(),
        segments,
        graph_labels: if has_graph_labels {
            Some(graphs.iter().map(|g| g.graph_label.unwrap()).collect())
        } else {
            None
        },
        graph_targets: if has_graph_targets {
            Some(graphs.iter().map(|g| g.graph_target.unwrap()).collect())
        } else {
            None
        },
    })
}

//! Task-dependent prediction layers and evaluation metrics.
//!
//! All heads run a 2-layer MLP (affine, relu, affine) over task-specific
//! inputs: graph-level heads consume a mean readout per graph, node heads
//! apply the MLP row-wise, and edge heads score the concatenation of the
//! two endpoint features.

pub mod metrics;

use std::rc::Rc;

use thiserror::Error;

use crate::layers::{Param, ParamInit};
use crate::tensor::{Tape, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("graph {index} in the batch has no nodes")]
    EmptyGraph { index: usize },
}

/// Two affine layers with one relu between, widths `in -> in/2 -> out`.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    params: Vec<Param>,
}

/// Tape handles for one bound [`Mlp2`], in declaration order.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2Ids {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

impl Mlp2 {
    pub fn new(in_width: usize, out_width: usize, prefix: &str, seed: u64) -> Self {
        let hidden = (in_width / 2).max(1);
        let init = ParamInit::new(seed);
        Mlp2 {
            params: vec![
                init.glorot(&format!("{prefix}.w1"), in_width, hidden),
                init.zeros(&format!("{prefix}.b1"), 1, hidden),
                init.glorot(&format!("{prefix}.w2"), hidden, out_width),
                init.zeros(&format!("{prefix}.b2"), 1, out_width),
            ],
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> Mlp2Ids {
        let ids: Vec<TensorId> =
            self.params.iter().map(|p| tape.param(p.value.clone())).collect();
        Mlp2Ids { w1: ids[0], b1: ids[1], w2: ids[2], b2: ids[3] }
    }

    pub fn forward(tape: &mut Tape, x: TensorId, ids: Mlp2Ids) -> Result<TensorId, TensorError> {
        let a = tape.matmul(x, ids.w1)?;
        let a = tape.add_row(a, ids.b1)?;
        let a = tape.relu(a);
        let out = tape.matmul(a, ids.w2)?;
        tape.add_row(out, ids.b2)
    }
}

/// Mean readout per graph followed by the MLP; one output row per graph.
pub fn graph_head(
    tape: &mut Tape,
    node_feats: TensorId,
    segments: Rc<Vec<usize>>,
    n_graphs: usize,
    mlp: Mlp2Ids,
) -> Result<TensorId, HeadError> {
    let readout = tape.mean_segments(node_feats, segments, n_graphs)?;
    if let Some(&index) = readout.empty_segments.first() {
        return Err(HeadError::EmptyGraph { index });
    }
    Ok(Mlp2::forward(tape, readout.id, mlp)?)
}

/// Row-wise MLP over node features; one logit row per node.
pub fn node_head(
    tape: &mut Tape,
    node_feats: TensorId,
    mlp: Mlp2Ids,
) -> Result<TensorId, HeadError> {
    Ok(Mlp2::forward(tape, node_feats, mlp)?)
}

/// Scores each (src, dst) arc from the concatenation of its endpoint
/// features; the order of endpoints matters.
pub fn edge_head(
    tape: &mut Tape,
    node_feats: TensorId,
    src: Rc<Vec<usize>>,
    dst: Rc<Vec<usize>>,
    mlp: Mlp2Ids,
) -> Result<TensorId, HeadError> {
    let hs = tape.gather_rows(node_feats, src)?;
    let hd = tape.gather_rows(node_feats, dst)?;
    let cat = tape.concat_cols(hs, hd)?;
    Ok(Mlp2::forward(tape, cat, mlp)?)
}

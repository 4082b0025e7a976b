//! GraphSAGE with a full-neighborhood mean aggregator:
//! `h_i = Concat(H_i, mean_{j in N(i)} H_j) · W`.
//!
//! Nodes without neighbors aggregate a zero vector.

use crate::tensor::{Phase, Tape, TensorId};

use super::backbone::{Backbone, Hidden, LayerState};
use super::{BatchContext, LayerError, ModelSpec, Param, ParamInit};

pub struct Sage;

impl Backbone for Sage {
    fn name(&self) -> &'static str {
        "sage"
    }

    fn layer_params(&self, spec: &ModelSpec, prefix: &str, init: &ParamInit) -> Vec<Param> {
        let d = spec.hidden;
        vec![init.glorot(&format!("{prefix}.sage.w"), 2 * d, d)]
    }

    fn hidden(
        &self,
        tape: &mut Tape,
        ctx: &BatchContext,
        _spec: &ModelSpec,
        h: TensorId,
        edge: Option<TensorId>,
        params: &[TensorId],
        _state: &mut LayerState,
        _phase: Phase,
    ) -> Result<Hidden, LayerError> {
        let gathered = tape.gather_rows(h, ctx.edge_src.clone())?;
        let sums = tape.scatter_add(gathered, ctx.edge_dst.clone(), ctx.n)?;
        let inv_deg = tape.constant(ctx.inv_degree.clone());
        let mean = tape.mul_col(sums, inv_deg)?;
        let cat = tape.concat_cols(h, mean)?;
        let node = tape.matmul(cat, params[0])?;
        Ok(Hidden { node, edge })
    }
}

//! Graph convolution: `h = A_sym · H · W` with the symmetrically normalized,
//! self-looped adjacency.

use crate::tensor::{Phase, Tape, TensorId};

use super::backbone::{Backbone, Hidden, LayerState};
use super::{BatchContext, LayerError, ModelSpec, Param, ParamInit};

pub struct Gcn;

impl Backbone for Gcn {
    fn name(&self) -> &'static str {
        "gcn"
    }

    fn layer_params(&self, spec: &ModelSpec, prefix: &str, init: &ParamInit) -> Vec<Param> {
        let d = spec.hidden;
        vec![init.glorot(&format!("{prefix}.gcn.w"), d, d)]
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
        let mixed = tape.spmm_sym(ctx.norm_adj.clone(), h)?;
        let node = tape.matmul(mixed, params[0])?;
        Ok(Hidden { node, edge })
    }
}

//! Multi-head graph attention. Per head: scores
//! `e_uv = leaky_relu(a_src·Wh_u + a_dst·Wh_v)` over in-neighbors plus the
//! self-edge, normalized by a per-destination softmax; head outputs are
//! concatenated back to the hidden width.

use crate::tensor::{Phase, Tape, TensorId};

use super::backbone::{Backbone, Hidden, LayerState};
use super::{BatchContext, LayerError, ModelSpec, Param, ParamInit};

const LEAKY_SLOPE: f64 = 0.2;

pub struct Gat;

impl Backbone for Gat {
    fn name(&self) -> &'static str {
        "gat"
    }

    fn layer_params(&self, spec: &ModelSpec, prefix: &str, init: &ParamInit) -> Vec<Param> {
        let d = spec.hidden;
        let dh = d / spec.heads;
        let mut params = Vec::with_capacity(spec.heads * 3);
        for k in 0..spec.heads {
            params.push(init.glorot(&format!("{prefix}.gat.head{k}.w"), d, dh));
            params.push(init.glorot(&format!("{prefix}.gat.head{k}.a_src"), dh, 1));
            params.push(init.glorot(&format!("{prefix}.gat.head{k}.a_dst"), dh, 1));
        }
        params
    }

    fn hidden(
        &self,
        tape: &mut Tape,
        ctx: &BatchContext,
        spec: &ModelSpec,
        h: TensorId,
        edge: Option<TensorId>,
        params: &[TensorId],
        _state: &mut LayerState,
        _phase: Phase,
    ) -> Result<Hidden, LayerError> {
        let mut node = None;
        for k in 0..spec.heads {
            let (w, a_src, a_dst) = (params[3 * k], params[3 * k + 1], params[3 * k + 2]);
            let wh = tape.matmul(h, w)?;
            let s_src = tape.matmul(wh, a_src)?;
            let s_dst = tape.matmul(wh, a_dst)?;
            let src_scores = tape.gather_rows(s_src, ctx.loop_src.clone())?;
            let dst_scores = tape.gather_rows(s_dst, ctx.loop_dst.clone())?;
            let raw = tape.add(src_scores, dst_scores)?;
            let scores = tape.leaky_relu(raw, LEAKY_SLOPE);
            let attn = tape.segment_softmax(scores, ctx.loop_dst.clone(), ctx.n)?;
            let values = tape.gather_rows(wh, ctx.loop_src.clone())?;
            let weighted = tape.mul_col(values, attn)?;
            let head_out = tape.scatter_add(weighted, ctx.loop_dst.clone(), ctx.n)?;
            node = Some(match node {
                None => head_out,
                Some(acc) => tape.concat_cols(acc, head_out)?,
            });
        }
        Ok(Hidden { node: node.expect("heads >= 1"), edge })
    }
}

//! Gated graph convolution with an explicit edge stream:
//!
//! ```text
//! e^_uv  = A·e_uv + B·h_v + C·h_u            (v = destination, u = source)
//! eta_uv = sigmoid(e^_uv) / (sum_{u'} sigmoid(e^_u'v) + eps)
//! h_v    = U·h_v + sum_u eta_uv ⊙ V·h_u
//! e_uv  <- e_uv + relu(norm(e^_uv))
//! ```
//!
//! The edge stream keeps its own residual; CLFE composition applies to the
//! node stream only.

use crate::tensor::{BatchNormState, Phase, Tape, TensorId};

use super::backbone::{Backbone, Hidden, LayerState};
use super::{BatchContext, LayerError, ModelSpec, Norm, Param, ParamInit};

const GATE_EPS: f64 = 1e-6;

pub struct GatedGcn;

impl Backbone for GatedGcn {
    fn name(&self) -> &'static str {
        "gatedgcn"
    }

    fn uses_edge_state(&self) -> bool {
        true
    }

    fn layer_params(&self, spec: &ModelSpec, prefix: &str, init: &ParamInit) -> Vec<Param> {
        let d = spec.hidden;
        let mut params = vec![
            init.glorot(&format!("{prefix}.gatedgcn.a"), d, d),
            init.glorot(&format!("{prefix}.gatedgcn.b"), d, d),
            init.glorot(&format!("{prefix}.gatedgcn.c"), d, d),
            init.glorot(&format!("{prefix}.gatedgcn.u"), d, d),
            init.glorot(&format!("{prefix}.gatedgcn.v"), d, d),
        ];
        if spec.norm == Norm::Batch {
            params.push(init.ones(&format!("{prefix}.gatedgcn.edge_norm.gamma"), 1, d));
            params.push(init.zeros(&format!("{prefix}.gatedgcn.edge_norm.beta"), 1, d));
        }
        params
    }

    fn init_state(&self, spec: &ModelSpec) -> LayerState {
        LayerState {
            edge_norm: match spec.norm {
                Norm::Batch => Some(BatchNormState::new(spec.hidden)),
                Norm::None => None,
            },
        }
    }

    fn hidden(
        &self,
        tape: &mut Tape,
        ctx: &BatchContext,
        spec: &ModelSpec,
        h: TensorId,
        edge: Option<TensorId>,
        params: &[TensorId],
        state: &mut LayerState,
        phase: Phase,
    ) -> Result<Hidden, LayerError> {
        let e = edge.ok_or(LayerError::MissingEdgeState { backbone: "gatedgcn" })?;
        let (a, b, c, u, v) = (params[0], params[1], params[2], params[3], params[4]);
        let ea = tape.matmul(e, a)?;
        let hb = tape.matmul(h, b)?;
        let hc = tape.matmul(h, c)?;
        let hb_dst = tape.gather_rows(hb, ctx.edge_dst.clone())?;
        let hc_src = tape.gather_rows(hc, ctx.edge_src.clone())?;
        let partial = tape.add(ea, hb_dst)?;
        let ehat = tape.add(partial, hc_src)?;

        let gates = tape.sigmoid(ehat);
        let gate_sums = tape.scatter_add(gates, ctx.edge_dst.clone(), ctx.n)?;
        let per_edge_sums = tape.gather_rows(gate_sums, ctx.edge_dst.clone())?;
        let denom = tape.add_scalar(per_edge_sums, GATE_EPS);
        let eta = tape.div(gates, denom)?;

        let hv = tape.matmul(h, v)?;
        let hv_src = tape.gather_rows(hv, ctx.edge_src.clone())?;
        let messages = tape.mul(eta, hv_src)?;
        let agg = tape.scatter_add(messages, ctx.edge_dst.clone(), ctx.n)?;
        let hu = tape.matmul(h, u)?;
        let node = tape.add(hu, agg)?;

        let edge_pre = match (&spec.norm, state.edge_norm.as_mut()) {
            (Norm::Batch, Some(bn)) => tape.batch_norm(ehat, params[5], params[6], bn, phase)?,
            _ => ehat,
        };
        let edge_act = tape.relu(edge_pre);
        let e_next = tape.add(e, edge_act)?;
        Ok(Hidden { node, edge: Some(e_next) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn identity(d: usize) -> Tensor {
        let mut t = Tensor::zeros(d, d);
        for i in 0..d {
            t.set(i, i, 1.0);
        }
        t
    }

    fn spec_no_norm(d: usize) -> ModelSpec {
        let mut s = ModelSpec::new("gatedgcn", 1, d);
        s.norm = Norm::None;
        s
    }

    fn run(g: &Graph, h: Tensor, e: Tensor) -> (Tensor, Tensor) {
        let d = h.cols();
        let ctx = BatchContext::new(g).unwrap();
        let spec = spec_no_norm(d);
        let mut tape = Tape::new();
        let hid = tape.constant(h);
        let eid = tape.constant(e);
        let ids: Vec<_> = (0..5).map(|_| tape.constant(identity(d))).collect();
        let out = GatedGcn
            .hidden(
                &mut tape,
                &ctx,
                &spec,
                hid,
                Some(eid),
                &ids,
                &mut GatedGcn.init_state(&spec),
                Phase::Train,
            )
            .unwrap();
        (tape.value(out.node).clone(), tape.value(out.edge.unwrap()).clone())
    }

    #[test]
    fn equal_gate_logits_share_the_gate_uniformly() {
        // star around node 0 with identical h and e everywhere: every
        // incoming edge gets eta = sigmoid(x)/(2 sigmoid(x) + eps) ~ 1/2
        let g = Graph::undirected(3, &[(0, 1), (0, 2)], Tensor::zeros(3, 1)).unwrap();
        let (node, _) = run(&g, Tensor::col(&[1.0, 1.0, 1.0]), Tensor::filled(4, 1, 0.5));
        // h_0 = U h_0 + 2 * eta * V h_1 with eta ~ 1/2
        let s = sigmoid(0.5 + 1.0 + 1.0);
        let eta = s / (2.0 * s + GATE_EPS);
        let expected = 1.0 + 2.0 * eta * 1.0;
        assert!((node.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn saturated_gates_stay_finite() {
        let g = Graph::undirected(2, &[(0, 1)], Tensor::zeros(2, 1)).unwrap();
        let (node, edge) = run(&g, Tensor::col(&[-20.0, -20.0]), Tensor::filled(2, 1, 0.0));
        assert!(node.data().iter().all(|v| v.is_finite()));
        assert!(edge.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_incoming_edge_gate_is_nearly_one() {
        let g = Graph::undirected(2, &[(0, 1)], Tensor::zeros(2, 1)).unwrap();
        let (node, _) = run(&g, Tensor::col(&[2.0, 0.0]), Tensor::filled(2, 1, 1.0));
        // at node 1: ehat = e + B h_1 + C h_0 = 1 + 0 + 2; eta = s/(s + eps)
        let s = sigmoid(3.0);
        let eta = s / (s + GATE_EPS);
        let expected = 0.0 + eta * 2.0;
        assert!((node.data()[1] - expected).abs() < 1e-12, "{}", node.data()[1]);
    }

    #[test]
    fn edge_stream_keeps_residual() {
        let g = Graph::undirected(2, &[(0, 1)], Tensor::zeros(2, 1)).unwrap();
        let (_, edge) = run(&g, Tensor::col(&[1.0, 1.0]), Tensor::filled(2, 1, 0.25));
        // e' = e + relu(ehat); ehat = 0.25 + 1 + 1 = 2.25 > 0
        assert_eq!(edge.data(), &[0.25 + 2.25, 0.25 + 2.25]);
    }

    #[test]
    fn missing_edge_state_is_a_contract_error() {
        let g = Graph::undirected(2, &[(0, 1)], Tensor::zeros(2, 1)).unwrap();
        let ctx = BatchContext::new(&g).unwrap();
        let spec = spec_no_norm(1);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::col(&[1.0, 1.0]));
        let ids: Vec<_> = (0..5).map(|_| tape.constant(identity(1))).collect();
        let err = GatedGcn
            .hidden(
                &mut tape,
                &ctx,
                &spec,
                h,
                None,
                &ids,
                &mut GatedGcn.init_state(&spec),
                Phase::Train,
            )
            .unwrap_err();
        assert!(matches!(err, LayerError::MissingEdgeState { .. }));
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }
}

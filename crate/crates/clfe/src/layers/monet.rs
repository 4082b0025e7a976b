//! MoNet with degree pseudo-coordinates. Each edge (u -> v) carries
//! `u_e = (1/sqrt(d~_v), 1/sqrt(d~_u))`; kernel k weights it by
//! `w_k(u) = exp(-1/2 · (u - mu_k)^T diag(sigma_k)^{-1} (u - mu_k))` and the
//! layer averages the kernel aggregations:
//! `h_v = (1/K) sum_k sum_{u in N(v) ∪ {v}} w_k(u_e) · W_k H_u`.
//!
//! Variances are stored as log-sigma so they stay positive.

use crate::tensor::{Phase, Tape, TensorId};

use super::backbone::{Backbone, Hidden, LayerState};
use super::{BatchContext, LayerError, ModelSpec, Param, ParamInit};

pub struct MoNet;

impl Backbone for MoNet {
    fn name(&self) -> &'static str {
        "monet"
    }

    fn layer_params(&self, spec: &ModelSpec, prefix: &str, init: &ParamInit) -> Vec<Param> {
        let d = spec.hidden;
        let mut params = Vec::with_capacity(spec.kernels * 3);
        for k in 0..spec.kernels {
            params.push(init.glorot(&format!("{prefix}.monet.k{k}.w"), d, d));
            params.push(init.uniform01(&format!("{prefix}.monet.k{k}.mu"), 1, 2));
            params.push(init.zeros(&format!("{prefix}.monet.k{k}.log_sigma"), 1, 2));
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
        let pseudo = tape.constant(ctx.pseudo.clone());
        let mut acc = None;
        for k in 0..spec.kernels {
            let (w, mu, log_sigma) = (params[3 * k], params[3 * k + 1], params[3 * k + 2]);
            let wh = tape.matmul(h, w)?;
            let diff = tape.sub_row(pseudo, mu)?;
            let sq = tape.mul(diff, diff)?;
            let neg_log_sigma = tape.neg(log_sigma);
            let inv_sigma = tape.exp(neg_log_sigma);
            let scaled = tape.mul_row(sq, inv_sigma)?;
            let dist2 = tape.sum_cols(scaled);
            let exponent = tape.scale(dist2, -0.5);
            let weight = tape.exp(exponent);
            let values = tape.gather_rows(wh, ctx.loop_src.clone())?;
            let weighted = tape.mul_col(values, weight)?;
            let agg = tape.scatter_add(weighted, ctx.loop_dst.clone(), ctx.n)?;
            acc = Some(match acc {
                None => agg,
                Some(prev) => tape.add(prev, agg)?,
            });
        }
        let node = tape.scale(acc.expect("kernels >= 1"), 1.0 / spec.kernels as f64);
        Ok(Hidden { node, edge })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn spec_k(kernels: usize, d: usize) -> ModelSpec {
        let mut s = ModelSpec::new("monet", 1, d);
        s.kernels = kernels;
        s
    }

    #[test]
    fn matched_mean_on_regular_graph_gives_unit_weights() {
        // on K3 every pseudo-coordinate is (1/sqrt(3), 1/sqrt(3)); placing mu
        // there makes every Gaussian weight exactly 1, so with W = I the
        // output sums the closed neighborhood
        let g = Graph::undirected(3, &[(0, 1), (0, 2), (1, 2)], Tensor::zeros(3, 1)).unwrap();
        let ctx = BatchContext::new(&g).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::col(&[1.0, 2.0, 4.0]));
        let w = tape.constant(Tensor::row(&[1.0]));
        let u = 1.0 / 3.0f64.sqrt();
        let mu = tape.constant(Tensor::row(&[u, u]));
        let ls = tape.constant(Tensor::row(&[0.0, 0.0]));
        let out = MoNet
            .hidden(
                &mut tape,
                &ctx,
                &spec_k(1, 1),
                h,
                None,
                &[w, mu, ls],
                &mut LayerState::default(),
                Phase::Train,
            )
            .unwrap();
        assert_eq!(tape.value(out.node).data(), &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn single_kernel_identity_sums_closed_neighborhood_on_path() {
        // path 0-1: d~ = (2, 2), pseudo is constant, mu placed on it
        let g = Graph::undirected(2, &[(0, 1)], Tensor::zeros(2, 1)).unwrap();
        let ctx = BatchContext::new(&g).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::col(&[2.0, 4.0]));
        let w = tape.constant(Tensor::row(&[1.0]));
        let u = 1.0 / 2.0f64.sqrt();
        let mu = tape.constant(Tensor::row(&[u, u]));
        let ls = tape.constant(Tensor::row(&[0.0, 0.0]));
        let out = MoNet
            .hidden(
                &mut tape,
                &ctx,
                &spec_k(1, 1),
                h,
                None,
                &[w, mu, ls],
                &mut LayerState::default(),
                Phase::Train,
            )
            .unwrap();
        assert_eq!(tape.value(out.node).data(), &[6.0, 6.0]);
    }

    #[test]
    fn huge_sigma_flattens_weights_to_one() {
        let g = Graph::undirected(3, &[(0, 1), (1, 2)], Tensor::zeros(3, 1)).unwrap();
        let ctx = BatchContext::new(&g).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::col(&[1.0, 1.0, 1.0]));
        let w = tape.constant(Tensor::row(&[1.0]));
        let mu = tape.constant(Tensor::row(&[0.0, 0.0]));
        let ls = tape.constant(Tensor::row(&[1e6f64.ln(), 1e6f64.ln()]));
        let out = MoNet
            .hidden(
                &mut tape,
                &ctx,
                &spec_k(1, 1),
                h,
                None,
                &[w, mu, ls],
                &mut LayerState::default(),
                Phase::Train,
            )
            .unwrap();
        // with weights ~1 the middle node sums its closed neighborhood of 3
        let got = tape.value(out.node).data()[1];
        assert!((got - 3.0).abs() < 1e-6 * 3.0, "{got}");
    }
}

//! Full task models: a [`GnnStack`] plus the task head, with one forward
//! entry point that produces predictions and the task loss for a batch.

use std::rc::Rc;

use thiserror::Error;

use crate::graph::GraphBatch;
use crate::heads::{edge_head, graph_head, node_head, HeadError, Mlp2};
use crate::layers::{BatchContext, GnnStack, LayerError, ModelSpec, Param};
use crate::tensor::{Phase, Tape, Tensor, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("batch is missing {what} required by the {task} task")]
    MissingLabels { task: &'static str, what: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    NodeCls,
    GraphCls,
    EdgeCls,
    GraphReg,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::NodeCls => "node_cls",
            Task::GraphCls => "graph_cls",
            Task::EdgeCls => "edge_cls",
            Task::GraphReg => "graph_reg",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "node_cls" => Ok(Task::NodeCls),
            "graph_cls" => Ok(Task::GraphCls),
            "edge_cls" => Ok(Task::EdgeCls),
            "graph_reg" => Ok(Task::GraphReg),
            other => Err(format!(
                "unknown task '{other}' (expected node_cls, graph_cls, edge_cls, or graph_reg)"
            )),
        }
    }
}

/// One forward pass over a batch: the tape, the prediction tensor, the task
/// loss, and the bound parameter handles in [`Model`] parameter order.
pub struct StepOutput {
    pub tape: Tape,
    pub output: TensorId,
    pub loss: TensorId,
    pub param_ids: Vec<TensorId>,
    /// Ground-truth labels aligned with `output` rows (classification).
    pub labels: Vec<usize>,
    /// Ground-truth targets aligned with `output` rows (regression).
    pub targets: Vec<f64>,
}

/// A stack plus task head; `seed` fixes every parameter draw.
pub struct Model {
    pub task: Task,
    stack: GnnStack,
    head: Mlp2,
    classes: usize,
    class_weights: bool,
}

impl Model {
    /// `out_width` is the class count for classification tasks and ignored
    /// for regression (which always emits one score per graph).
    pub fn new(
        task: Task,
        spec: ModelSpec,
        in_width: usize,
        edge_width: Option<usize>,
        out_width: usize,
        class_weights: bool,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let d = spec.hidden;
        let stack = GnnStack::new(spec, in_width, edge_width, seed)?;
        let (head_in, head_out) = match task {
            Task::NodeCls | Task::GraphCls => (d, out_width),
            Task::EdgeCls => (2 * d, out_width),
            Task::GraphReg => (d, 1),
        };
        let head = Mlp2::new(head_in, head_out, "head", seed);
        Ok(Model {
            task,
            stack,
            head,
            classes: out_width,
            class_weights,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.stack.spec()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// All parameters, stack first then head; the order matches `StepOutput`
    /// and the optimizer state.
    pub fn params(&self) -> Vec<&Param> {
        self.stack.params().iter().chain(self.head.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stack.params_mut().iter_mut().chain(self.head.params_mut().iter_mut()).collect()
    }

    pub fn zero_clfe(&mut self) {
        self.stack.zero_clfe();
    }

    /// Runs the stack and head over one batch and attaches the task loss.
    pub fn forward(&mut self, batch: &GraphBatch, phase: Phase) -> Result<StepOutput, ModelError> {
        let ctx = BatchContext::new(batch.graph())?;
        let mut tape = Tape::new();
        let mut param_ids = self.stack.bind(&mut tape);
        let head_ids = self.head.bind(&mut tape);
        param_ids.extend([head_ids.w1, head_ids.b1, head_ids.w2, head_ids.b2]);
        let feats = self.stack.forward(&mut tape, &ctx, &param_ids, phase)?;

        let (output, labels, targets) = match self.task {
            Task::NodeCls => {
                let labels = batch
                    .graph()
                    .node_labels()
                    .ok_or(ModelError::MissingLabels { task: "node_cls", what: "node labels" })?
                    .to_vec();
                (node_head(&mut tape, feats, head_ids)?, labels, Vec::new())
            }
            Task::GraphCls => {
                let labels = batch
                    .graph_labels()
                    .ok_or(ModelError::MissingLabels { task: "graph_cls", what: "graph labels" })?
                    .to_vec();
                let segments = Rc::new(batch.segments().to_vec());
                let out =
                    graph_head(&mut tape, feats, segments, batch.num_graphs(), head_ids)?;
                (out, labels, Vec::new())
            }
            Task::EdgeCls => {
                let labels = batch
                    .graph()
                    .edge_labels()
                    .ok_or(ModelError::MissingLabels { task: "edge_cls", what: "edge labels" })?
                    .to_vec();
                let out = edge_head(&mut tape, feats, ctx.edge_src.clone(), ctx.edge_dst.clone(), head_ids)?;
                (out, labels, Vec::new())
            }
            Task::GraphReg => {
                let targets = batch
                    .graph_targets()
                    .ok_or(ModelError::MissingLabels { task: "graph_reg", what: "graph targets" })?
                    .to_vec();
                let segments = Rc::new(batch.segments().to_vec());
                let out =
                    graph_head(&mut tape, feats, segments, batch.num_graphs(), head_ids)?;
                (out, Vec::new(), targets)
            }
        };

        let loss = match self.task {
            Task::GraphReg => {
                let t = tape.constant(Tensor::col(&targets));
                tape.l1_loss(output, t)?
            }
            _ => {
                let weights = self.class_weights.then(|| Rc::new(class_weights(&labels, self.classes)));
                tape.softmax_cross_entropy(output, Rc::new(labels.clone()), weights)?
            }
        };

        Ok(StepOutput { tape, output, loss, param_ids, labels, targets })
    }
}

/// Inverse-frequency class weights: `total / count_c` for classes present,
/// 0 for absent classes (which contribute no rows).
fn class_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let total = labels.len() as f64;
    counts.iter().map(|&c| if c == 0 { 0.0 } else { total / c as f64 }).collect()
}

/// Argmax per row, first maximum on ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row_slice(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch, gen_graph_classes, gen_sbm_set, gen_tsp, SbmSpec, TspLabelMode};
    use crate::layers::Norm;

    fn sbm_batch() -> GraphBatch {
        let spec = SbmSpec {
            block_sizes: vec![4, 4],
            p_intra: 0.8,
            p_inter: 0.2,
            noise: 0.2,
            semi_supervised: false,
        };
        batch(&gen_sbm_set(&spec, 3, 5).unwrap()).unwrap()
    }

    #[test]
    fn node_task_shapes_and_loss() {
        let b = sbm_batch();
        let spec = ModelSpec::new("gcn", 2, 8).with_clfe(true);
        let mut model = Model::new(Task::NodeCls, spec, 2, None, 2, true, 3).unwrap();
        let step = model.forward(&b, Phase::Train).unwrap();
        assert_eq!(step.tape.value(step.output).rows(), b.graph().n());
        assert_eq!(step.tape.value(step.output).cols(), 2);
        assert!(step.tape.value(step.loss).data()[0].is_finite());
    }

    #[test]
    fn graph_task_emits_one_row_per_graph() {
        let graphs = gen_graph_classes(6, 5, 8, 2, 9).unwrap();
        let b = batch(&graphs).unwrap();
        let spec = ModelSpec::new("sage", 2, 8);
        let mut model = Model::new(Task::GraphCls, spec, 4, None, 2, false, 3).unwrap();
        let step = model.forward(&b, Phase::Eval).unwrap();
        assert_eq!(step.tape.value(step.output).rows(), 6);
        assert_eq!(step.labels.len(), 6);
    }

    #[test]
    fn edge_task_scores_every_arc() {
        let g = gen_tsp(8, 3, 2, TspLabelMode::Exact).unwrap();
        let b = batch(std::slice::from_ref(&g)).unwrap();
        let mut spec = ModelSpec::new("gatedgcn", 2, 8);
        spec.norm = Norm::Batch;
        let mut model = Model::new(Task::EdgeCls, spec, 2, Some(1), 2, false, 3).unwrap();
        let step = model.forward(&b, Phase::Train).unwrap();
        assert_eq!(step.tape.value(step.output).rows(), g.num_edges());
    }

    #[test]
    fn missing_labels_are_contract_errors() {
        let graphs = gen_graph_classes(4, 5, 6, 2, 9).unwrap();
        let b = batch(&graphs).unwrap();
        let spec = ModelSpec::new("gcn", 1, 4);
        let mut model = Model::new(Task::GraphReg, spec, 4, None, 1, false, 3).unwrap();
        assert!(matches!(
            model.forward(&b, Phase::Train),
            Err(ModelError::MissingLabels { .. })
        ));
    }

    #[test]
    fn backward_reaches_every_parameter() {
        let b = sbm_batch();
        let spec = ModelSpec::new("gat", 2, 8).with_clfe(true);
        let mut model = Model::new(Task::NodeCls, spec, 2, None, 2, true, 11).unwrap();
        let mut step = model.forward(&b, Phase::Train).unwrap();
        step.tape.backward(step.loss).unwrap();
        for (&id, p) in step.param_ids.iter().zip(model.params()) {
            assert!(step.tape.grad(id).is_some(), "no gradient for {}", p.name);
        }
    }

    // finite-difference check of the whole pipeline (stack, head, loss)
    // through the public forward: perturb parameters in place and compare the
    // loss slope against the tape gradient
    #[test]
    fn full_model_loss_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let b = sbm_batch();
        for backbone in ["gcn", "gatedgcn"] {
            let spec = ModelSpec::new(backbone, 2, 8).with_clfe(true);
            let mut model = Model::new(Task::NodeCls, spec, 2, None, 2, true, 17).unwrap();
            let mut step = model.forward(&b, Phase::Train).unwrap();
            step.tape.backward(step.loss).unwrap();
            // the last layer's edge-stream output is discarded, so its norm
            // parameters legitimately have no gradient
            let grads: Vec<Tensor> = step
                .param_ids
                .iter()
                .zip(model.params())
                .map(|(&id, p)| {
                    step.tape
                        .grad(id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()))
                })
                .collect();
            let h = 1e-5;
            let mut rng = ChaCha8Rng::seed_from_u64(71);
            for _ in 0..12 {
                let p = rng.random_range(0..grads.len());
                let e = rng.random_range(0..grads[p].numel());
                let eval = |model: &mut Model| {
                    let s = model.forward(&b, Phase::Train).unwrap();
                    s.tape.value(s.loss).data()[0]
                };
                let original = model.params()[p].value.data()[e];
                model.params_mut()[p].value.data_mut()[e] = original + h;
                let plus = eval(&mut model);
                model.params_mut()[p].value.data_mut()[e] = original - h;
                let minus = eval(&mut model);
                model.params_mut()[p].value.data_mut()[e] = original;
                let fd = (plus - minus) / (2.0 * h);
                let ad = grads[p].data()[e];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4, "{backbone} param {p} elem {e}: ad {ad} vs fd {fd}");
            }
        }
    }

    #[test]
    fn class_weight_computation() {
        assert_eq!(class_weights(&[0, 0, 0, 1], 2), vec![4.0 / 3.0, 4.0]);
        assert_eq!(class_weights(&[0, 0], 3), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        let t = Tensor::from_rows(&[vec![1.0, 3.0, 3.0], vec![2.0, 1.0, 0.0]]);
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}

//! The backbone registry: every graph-convolution variant implements
//! [`Backbone`] and is selected by name at runtime.

use crate::tensor::{BatchNormState, Phase, Tape, TensorId};

use super::{
    gat::Gat, gatedgcn::GatedGcn, gcn::Gcn, monet::MoNet, sage::Sage, BatchContext, LayerError,
    ModelSpec, Param, ParamInit,
};

/// A backbone's per-layer output: the pre-activation node hidden state, and
/// an updated edge state for backbones that carry one.
#[derive(Debug)]
pub struct Hidden {
    pub node: TensorId,
    pub edge: Option<TensorId>,
}

/// Mutable per-layer state owned by the model and threaded through
/// [`Backbone::hidden`]; currently just edge-stream normalization buffers.
#[derive(Debug, Clone, Default)]
pub struct LayerState {
    pub edge_norm: Option<BatchNormState>,
}

/// One message-passing layer variant. Implementations are stateless; all
/// parameters are declared by [`Backbone::layer_params`] and passed back as
/// tape handles in the same order.
pub trait Backbone: Sync {
    fn name(&self) -> &'static str;

    /// Whether this backbone consumes and produces an edge state.
    fn uses_edge_state(&self) -> bool {
        false
    }

    /// Parameter tensors for one layer, named under `prefix`, in the order
    /// `hidden` expects them.
    fn layer_params(&self, spec: &ModelSpec, prefix: &str, init: &ParamInit) -> Vec<Param>;

    /// Fresh per-layer mutable state.
    fn init_state(&self, _spec: &ModelSpec) -> LayerState {
        LayerState::default()
    }

    /// Computes the pre-activation hidden state for one layer. Activation,
    /// CLFE composition, and the skip term are applied by the caller.
    #[allow(clippy::too_many_arguments)]
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
    ) -> Result<Hidden, LayerError>;
}

pub static BACKBONES: [&dyn Backbone; 5] = [&Gcn, &Sage, &Gat, &MoNet, &GatedGcn];

pub fn lookup(name: &str) -> Result<&'static dyn Backbone, LayerError> {
    BACKBONES
        .iter()
        .copied()
        .find(|b| b.name() == name)
        .ok_or_else(|| LayerError::UnknownBackbone {
            name: name.to_string(),
            known: names().join(", "),
        })
}

pub fn names() -> Vec<&'static str> {
    BACKBONES.iter().map(|b| b.name()).collect()
}

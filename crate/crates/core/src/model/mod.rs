//! The gated graph forecasting model: learnable edge weights, hard graph
//! gate, time gate and stacked fully connected residual blocks.

mod config;
mod forward;
mod gate;
mod params;

pub use config::{GateVariant, ModelConfig, TimeFeatureSpec};
pub use forward::{
    fc_ts_block_stack, layer_forward, model_forward, predict, BlockVars, ForwardOutput,
    LayerVars, ModelVars, TIME_GATE_DIVISION_FLOOR,
};
pub use gate::{
    edge_weights, graph_gate, hard_gate, history_max, layer_gate_matrix, row_softmax, soft_gate,
    GatePlan, HISTORY_MAX_FLOOR,
};
pub use params::{FcLayer, LayerParams, ModelParams, ParamKind, ResidualBlock, TimeGateParams};

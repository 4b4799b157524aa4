//! Edge-based graph neural networks for pilot and power allocation.

pub mod checks;
pub mod graphs;
pub mod model;

pub use graphs::{beta_feature, build_pilot_graph, build_power_graph, PilotGraph, PilotIndex, PowerGraph, PowerIndex};
pub use model::{
    ap_ue_grids, assignment_grids, attention_scores, power_grids, BnUpdate, GnnConfig, ModelCheckpoint, PilotForward, PilotGnn, PowerForward,
    PowerGnn, Variant,
};

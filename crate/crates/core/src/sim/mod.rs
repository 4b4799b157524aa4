//! Physical-layer simulator: geometry, channels, pilots, estimation,
//! beamforming and net spectral efficiency.

pub mod beamforming;
pub mod binio;
pub mod channel;
pub mod config;
pub mod estimation;
pub mod metrics;
pub mod pipeline;
pub mod topology;

pub use beamforming::{
    estimated_equivalent_channels, rzf_beamforming, true_equivalent_channels, BeamformingSet, EquivalentChannels,
};
pub use channel::{associate, complex_gaussian, lsf_gain, lsf_gain_db, random_beta, Association, ChannelSet, LinkParams};
pub use config::{EstimatorMode, Scenario, ScenarioParams, SystemConfig};
pub use estimation::{mmse_estimate, mmse_estimate_diag, nmse, noise_slot, received_pilot, ChannelEstimates, PilotObservation};
pub use metrics::{avg_net_se, check_power, sinr_and_net_se};
pub use pipeline::{evaluate_frame, pilot_length, subframe_state, FrameEvaluation, SubframeState};
pub use topology::{generate_topology, Position, Topology};

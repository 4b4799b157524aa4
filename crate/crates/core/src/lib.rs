//! Cell-free MIMO downlink: simulation of pilot contamination, estimation,
//! beamforming and net spectral efficiency; classical pilot/power solvers;
//! and permutation-equivariant edge-GNNs trained end to end on a smooth
//! relaxation of the net-SE.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision instantiation.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod linalg;
pub mod pilot;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod solvers;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Grid;
pub use scalar::Scalar;

pub type ChannelSet64 = sim::ChannelSet<f64>;
pub type PilotAssignment64 = pilot::PilotAssignment<f64>;
pub type EquivalentChannels64 = sim::EquivalentChannels<f64>;
pub type LinkParams64 = sim::LinkParams<f64>;

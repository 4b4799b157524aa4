//! End-to-end evaluation of a frame for a fixed (binary) pilot assignment.

use crate::error::Result;
use crate::linalg::Grid;
use crate::pilot::PilotAssignment;
use crate::scalar::Scalar;
use crate::sim::beamforming::{
    estimated_equivalent_channels, rzf_beamforming, true_equivalent_channels, BeamformingSet, EquivalentChannels,
};
use crate::sim::channel::{ChannelSet, LinkParams};
use crate::sim::estimation::{mmse_estimate, received_pilot, ChannelEstimates};
use crate::sim::metrics::{avg_net_se, sinr_and_net_se};

/// Everything the CU and the UEs see in one subframe.
#[derive(Debug, Clone)]
pub struct SubframeState<T> {
    pub estimates: ChannelEstimates<T>,
    pub beamformers: BeamformingSet<T>,
    /// Equivalent channels the CU can compute.
    pub g_hat: EquivalentChannels<T>,
    /// Equivalent channels actually experienced.
    pub g: EquivalentChannels<T>,
}

pub fn subframe_state<T: Scalar>(
    ch: &ChannelSet<T>,
    x: &PilotAssignment<T>,
    tau_p: T,
    t: usize,
    params: &LinkParams<T>,
) -> Result<SubframeState<T>> {
    let y = received_pilot(x, ch, t, tau_p, params)?;
    let estimates = mmse_estimate(&y, x, ch, tau_p, params);
    let beamformers = rzf_beamforming(&estimates, ch, params)?;
    let g_hat = estimated_equivalent_channels(&estimates, &beamformers, &ch.beta, &ch.assoc);
    let g = true_equivalent_channels(ch, &beamformers, t);
    Ok(SubframeState { estimates, beamformers, g_hat, g })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEvaluation<T> {
    pub per_subframe: Vec<T>,
    pub average: T,
    pub powers: Vec<Grid<T>>,
}

/// Runs estimation, beamforming and the rate computation for every
/// subframe; `power` picks the allocation from the subframe state.
pub fn evaluate_frame<T, F>(
    ch: &ChannelSet<T>,
    x: &PilotAssignment<T>,
    tau_p: T,
    params: &LinkParams<T>,
    mut power: F,
) -> Result<FrameEvaluation<T>>
where
    T: Scalar,
    F: FnMut(usize, &SubframeState<T>) -> Result<Grid<T>>,
{
    let mut per_subframe = Vec::with_capacity(ch.n_t());
    let mut powers = Vec::with_capacity(ch.n_t());
    for t in 0..ch.n_t() {
        let state = subframe_state(ch, x, tau_p, t, params)?;
        let p = power(t, &state)?;
        let (_, eta) = sinr_and_net_se(&state.g, &p, &ch.assoc, tau_p, params)?;
        per_subframe.push(eta);
        powers.push(p);
    }
    let average = avg_net_se(&per_subframe)?;
    Ok(FrameEvaluation { per_subframe, average, powers })
}

/// Pilot length used for a binary assignment: the number of occupied
/// sequences, or all rows when the length is fixed.
pub fn pilot_length<T: Scalar>(x: &PilotAssignment<T>, fixed: bool) -> T {
    if fixed {
        T::from_usize_lossy(x.num_sequences())
    } else {
        x.psi()
    }
}

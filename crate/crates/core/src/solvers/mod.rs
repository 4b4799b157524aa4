//! Classical baseline (DSATUR initialization, tabu reassignment, WMMSE
//! power) and the exhaustive oracle for tiny instances.

pub mod coloring;
pub mod power;
pub mod search;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pilot::PilotAssignment;
use crate::scalar::Scalar;
use crate::sim::{evaluate_frame, ChannelSet, LinkParams};

pub use coloring::{dsatur, dsatur_assign, InterferenceGraph};
pub use power::{equal_power, sum_rate, wmmse_power, WmmseOptions, WmmseResult};
pub use search::{
    canonical_labels, exhaustive_oracle, objective, set_partitions, tabu_refine, PowerRule, SearchResult,
    TabuOptions, ORACLE_MAX_K,
};

/// Serialized outcome of a baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub algo: String,
    #[serde(rename = "X")]
    pub x: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
    pub tau_p: f64,
    /// Power matrix per subframe, `M x K` each.
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    pub eta_per_subframe: Vec<f64>,
    pub eta_avg: f64,
}

/// Evaluates `labels` with WMMSE power on every subframe.
pub fn finalize<T: Scalar>(ch: &ChannelSet<T>, labels: &[usize], params: &LinkParams<T>, algo: &str) -> Result<BaselineResult> {
    let k = labels.len();
    let x = PilotAssignment::<T>::from_labels(labels, k)?;
    let tau_p = x.psi();
    let eval = evaluate_frame(ch, &x, tau_p, params, |_, state| {
        Ok(wmmse_power(&state.g_hat, &ch.assoc, params.p_max, params.noise_ue, WmmseOptions::default())?.power)
    })?;
    Ok(BaselineResult {
        algo: algo.to_string(),
        x: (0..k).map(|g| (0..k).map(|u| u8::from(labels[u] == g)).collect()).collect(),
        labels: labels.to_vec(),
        tau_p: tau_p.as_f64(),
        p: eval.powers.iter().map(|p| p.to_rows().into_iter().map(|r| r.into_iter().map(|v| v.as_f64()).collect()).collect()).collect(),
        eta_per_subframe: eval.per_subframe.iter().map(|v| v.as_f64()).collect(),
        eta_avg: eval.average.as_f64(),
    })
}

/// DSATUR coloring (mean-weight threshold plus shared-AP edges), tabu
/// refinement under equal power, then WMMSE on the final assignment.
pub fn dsatur_tabu_wmmse<T: Scalar>(ch: &ChannelSet<T>, params: &LinkParams<T>) -> Result<BaselineResult> {
    let graph = InterferenceGraph::from_beta(&ch.beta);
    let x0 = dsatur_assign(&graph, graph.mean_weight(), Some(&ch.assoc));
    let refined = tabu_refine(ch, &x0.labels()?, params, TabuOptions::for_ues(ch.k()))?;
    finalize(ch, &refined.labels, params, "dsatur-tabu-wmmse")
}

/// Exhaustive search with WMMSE power inside the objective.
pub fn oracle_baseline<T: Scalar>(ch: &ChannelSet<T>, params: &LinkParams<T>) -> Result<BaselineResult> {
    let best = exhaustive_oracle(ch, params, PowerRule::Wmmse)?;
    finalize(ch, &best.labels, params, "oracle")
}

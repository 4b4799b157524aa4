//! DTS-Power, DTS-Pilot and STS edge-GNNs.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, BnStats, Graph, ParamEntry, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::graphs::{PilotGraph, PilotIndex, PowerGraph, PowerIndex};
use crate::linalg::Grid;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    DtsPower,
    DtsPilot,
    Sts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub variant: Variant,
    /// Output width of each layer; the last entry is the output layer.
    pub widths: Vec<usize>,
    /// Contamination-aware attention on the same-PS aggregation.
    pub attention: bool,
    /// Random PS-UE features.
    pub feature_enhancement: bool,
    /// Number of PS vertices when the pilot length is fixed; `None` means
    /// one per UE with adaptive length.
    pub fixed_tau: Option<usize>,
    /// Association threshold in dB, the reference for LSF features.
    pub rho_db: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl GnnConfig {
    pub fn new(variant: Variant, rho_db: f64) -> Self {
        let widths = match variant {
            Variant::DtsPower => vec![16, 16, 16, 2],
            Variant::DtsPilot => vec![8, 8, 8, 8, 8, 8, 1],
            Variant::Sts => vec![8, 8, 8, 8, 8, 8, 2],
        };
        Self {
            variant,
            widths,
            attention: true,
            feature_enhancement: true,
            fixed_tau: None,
            rho_db,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Scale applied to equivalent-channel features, `1/sqrt(rho)`.
    pub fn channel_scale(&self) -> f64 {
        10f64.powf(-self.rho_db / 20.0)
    }

    /// Number of PS vertices for `k` UEs.
    pub fn sequences(&self, k: usize) -> usize {
        self.fixed_tau.unwrap_or(k)
    }
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

/// Running-statistics update produced by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    mean: usize,
    var: usize,
    stats: BnStats<T>,
}

fn glorot<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::of(rng.random_range(-limit..limit)))
}

struct Builder<'a, T, R> {
    params: &'a mut ParamSet<T>,
    rng: R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    fn weight(&mut self, layer: usize, name: &str, rows: usize, cols: usize) -> usize {
        let w = glorot(&mut self.rng, rows, cols);
        self.params.add(layer, name, w, true)
    }

    fn bn(&mut self, layer: usize, tag: &str, width: usize) -> BnIds {
        BnIds {
            gamma: self.params.add(layer, &format!("bn_{tag}_gamma"), Tensor::filled(1, width, T::one()), true),
            beta: self.params.add(layer, &format!("bn_{tag}_beta"), Tensor::zeros(1, width), true),
            mean: self.params.add(layer, &format!("bn_{tag}_mean"), Tensor::zeros(1, width), false),
            var: self.params.add(layer, &format!("bn_{tag}_var"), Tensor::filled(1, width, T::one()), false),
        }
    }
}

/// Batch norm (hidden layers) followed by relu; identity at the output layer.
fn finish<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    pre: Var,
    bn: Option<BnIds>,
    eps: f64,
    mode: BnMode,
    updates: &mut Vec<BnUpdate<T>>,
) -> Result<Var> {
    let Some(ids) = bn else { return Ok(pre) };
    if g.shape(pre).0 == 0 {
        return Ok(pre);
    }
    let gamma = params.leaf(g, ids.gamma);
    let beta = params.leaf(g, ids.beta);
    let running = (params.value(ids.mean).data(), params.value(ids.var).data());
    let (y, stats) = g.batch_norm(pre, gamma, beta, T::of(eps), mode, Some(running))?;
    if let Some(stats) = stats {
        updates.push(BnUpdate { mean: ids.mean, var: ids.var, stats });
    }
    Ok(g.relu(y))
}

/// `x W` with `W` taken from parameter `id`.
fn lin<T: Scalar>(g: &mut Graph<T>, params: &ParamSet<T>, x: Var, id: usize) -> Result<Var> {
    let w = params.leaf(g, id);
    g.matmul(x, w)
}

/// Sum over each segment, broadcast back to the members.
fn group_total<T: Scalar>(g: &mut Graph<T>, x: Var, ids: &Arc<Vec<usize>>, groups: usize, targets: &Arc<Vec<usize>>) -> Result<Var> {
    let s = g.segment_sum(x, ids.clone(), groups)?;
    g.gather_rows(s, targets.clone())
}

/// Sum over the other members of each segment (`total - self`).
fn group_others<T: Scalar>(g: &mut Graph<T>, x: Var, ids: &Arc<Vec<usize>>, groups: usize) -> Result<Var> {
    let t = group_total(g, x, ids, groups, ids)?;
    g.sub(t, x)
}

/// `p = P_max q / max(1, sum_{j in A_m} q_mj)` with `q` already masked.
fn power_activation<T: Scalar>(g: &mut Graph<T>, q: Var, ap_of: &Arc<Vec<usize>>, aps: usize, p_max: T) -> Result<Var> {
    let s = g.segment_sum(q, ap_of.clone(), aps)?;
    let d = g.clamp_min(s, T::one());
    let d = g.gather_rows(d, ap_of.clone())?;
    let r = g.div(q, d)?;
    Ok(g.scale(r, p_max))
}

fn apply_updates<T: Scalar>(params: &mut ParamSet<T>, updates: &[BnUpdate<T>], momentum: f64) {
    let mom = T::of(momentum);
    for u in updates {
        for (slot, batch) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var_unbiased)] {
            for (r, &b) in params.value_mut(slot).data_mut().iter_mut().zip(batch.iter()) {
                *r = (T::one() - mom) * *r + mom * b;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct PowerLayer {
    q_sig: usize,
    u_sig: [usize; 3],
    inf: Option<(usize, [usize; 4])>,
    bn_sig: Option<BnIds>,
    bn_inf: Option<BnIds>,
}

/// DTS-Power-GNN over the AN/UE graph.
#[derive(Debug, Clone)]
pub struct PowerGnn<T> {
    pub config: GnnConfig,
    pub params: ParamSet<T>,
    layers: Vec<PowerLayer>,
    u_out: usize,
}

#[derive(Debug, Clone)]
pub struct PowerForward<T> {
    /// Power per SIG edge, in `PowerIndex::sig` order.
    pub p: Var,
    pub bn: Vec<BnUpdate<T>>,
}

impl<T: Scalar> PowerGnn<T> {
    pub fn new(config: GnnConfig, seed: u64) -> Result<Self> {
        if config.variant != Variant::DtsPower || config.widths.is_empty() {
            return Err(Error::Config("power GNN needs the dts_power variant and at least one layer".into()));
        }
        let mut params = ParamSet::new();
        let mut b = Builder { params: &mut params, rng: stream_rng(seed, Stream::Init, 0) };
        let mut layers = Vec::new();
        let mut w_in = 2;
        let n = config.widths.len();
        for (li, &w) in config.widths.iter().enumerate() {
            let l = li + 1;
            let last = l == n;
            let q_sig = b.weight(l, "Q_SIG", w_in, w);
            let u_sig = [1, 2, 3].map(|i| b.weight(l, &format!("U_SIG_{i}"), w_in, w));
            let inf = (!last).then(|| (b.weight(l, "Q_INF", w_in, w), [1, 2, 3, 4].map(|i| b.weight(l, &format!("U_INF_{i}"), w_in, w))));
            let bn_sig = (!last).then(|| b.bn(l, "sig", w));
            let bn_inf = (!last).then(|| b.bn(l, "inf", w));
            layers.push(PowerLayer { q_sig, u_sig, inf, bn_sig, bn_inf });
            w_in = w;
        }
        let u_out = b.weight(n + 1, "u_out", w_in, 1);
        Ok(Self { config, params, layers, u_out })
    }

    /// Forward pass on feature variables (`[n_sig, 2]`, `[n_inf, 2]`).
    pub fn forward_vars(
        &self,
        g: &mut Graph<T>,
        idx: &PowerIndex<T>,
        sig_feat: Var,
        inf_feat: Var,
        p_max: T,
        mode: BnMode,
    ) -> Result<PowerForward<T>> {
        let (n_an, n_ue) = (idx.num_an(), idx.num_ue());
        let inv_k = T::one() / T::from_usize_lossy(idx.k);
        let inf_ap_w = g.constant(idx.inf_ap_weight.clone());
        let sig_serv_w = g.constant(idx.sig_serv_weight.clone());
        let inf_serv_w = g.constant(idx.inf_serv_weight.clone());
        let identity = Arc::new((0..n_an).collect::<Vec<_>>());
        let mut updates = Vec::new();
        let (mut sig, mut inf) = (sig_feat, inf_feat);
        let p = &self.params;
        for layer in &self.layers {
            // SIG edges
            let own = lin(g, p, sig, layer.q_sig)?;
            let a1 = lin(g, p, inf, layer.u_sig[0])?;
            let a1 = group_total(g, a1, &idx.inf_an, n_an, &identity)?;
            let a1 = g.scale(a1, inv_k);
            let a2 = lin(g, p, inf, layer.u_sig[1])?;
            let a2 = g.mul(a2, inf_ap_w)?;
            let a2 = group_total(g, a2, &idx.inf_ue, n_ue, &idx.sig_ue)?;
            let a3 = lin(g, p, sig, layer.u_sig[2])?;
            let a3 = group_others(g, a3, &idx.sig_ue, n_ue)?;
            let a3 = g.mul(a3, sig_serv_w)?;
            let pre = g.add(own, a1)?;
            let pre = g.add(pre, a2)?;
            let pre = g.add(pre, a3)?;
            let new_sig = finish(g, p, pre, layer.bn_sig, self.config.bn_eps, mode, &mut updates)?;
            // INF edges
            if let Some((q_inf, u_inf)) = layer.inf {
                let own = lin(g, p, inf, q_inf)?;
                let b1 = lin(g, p, inf, u_inf[0])?;
                let b1 = group_others(g, b1, &idx.inf_an, n_an)?;
                let b1 = g.scale(b1, inv_k);
                let b2 = lin(g, p, inf, u_inf[1])?;
                let b2 = g.mul(b2, inf_ap_w)?;
                let b2 = group_others(g, b2, &idx.inf_ue, n_ue)?;
                let b3 = lin(g, p, sig, u_inf[2])?;
                let b3 = g.gather_rows(b3, idx.inf_an.clone())?;
                let b4 = lin(g, p, sig, u_inf[3])?;
                let b4 = group_total(g, b4, &idx.sig_ue, n_ue, &idx.inf_ue)?;
                let b4 = g.mul(b4, inf_serv_w)?;
                let pre = g.add(own, b1)?;
                let pre = g.add(pre, b2)?;
                let pre = g.add(pre, b3)?;
                let pre = g.add(pre, b4)?;
                inf = finish(g, p, pre, layer.bn_inf, self.config.bn_eps, mode, &mut updates)?;
            }
            sig = new_sig;
        }
        let z = lin(g, p, sig, self.u_out)?;
        let q = g.sigmoid(z);
        let power = power_activation(g, q, &idx.sig_ap, idx.num_ap(), p_max)?;
        Ok(PowerForward { p: power, bn: updates })
    }

    pub fn forward(&self, g: &mut Graph<T>, graph: &PowerGraph<T>, p_max: T, mode: BnMode) -> Result<PowerForward<T>> {
        let sig = g.constant(graph.sig.clone());
        let inf = g.constant(graph.inf.clone());
        self.forward_vars(g, &graph.index, sig, inf, p_max, mode)
    }

    /// Inference: per-sample `M x K` power matrices.
    pub fn infer(&self, graph: &PowerGraph<T>, p_max: T) -> Result<Vec<Grid<T>>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, graph, p_max, BnMode::Eval)?;
        Ok(power_grids(&graph.index, g.value(out.p)))
    }

    pub fn apply_bn(&mut self, updates: &[BnUpdate<T>]) {
        apply_updates(&mut self.params, updates, self.config.bn_momentum);
    }
}

/// Scatters SIG-edge powers into per-sample `M x K` matrices.
pub fn power_grids<T: Scalar>(idx: &PowerIndex<T>, p: &Tensor<T>) -> Vec<Grid<T>> {
    let mut out = vec![Grid::filled(idx.m, idx.k, T::zero()); idx.batch];
    for (row, &(s, m, k)) in idx.sig.iter().enumerate() {
        out[s].as_mut_slice()[m * idx.k + k] = p.data()[row];
    }
    out
}

#[derive(Debug, Clone)]
struct PilotLayer {
    ap: Option<([usize; 3], Option<BnIds>)>,
    q_ps: usize,
    u_ps: [usize; 3],
    att: Option<[usize; 2]>,
    bn_ps: Option<BnIds>,
}

/// DTS-Pilot-GNN and STS-GNN over the AP/UE/PS graph.
#[derive(Debug, Clone)]
pub struct PilotGnn<T> {
    pub config: GnnConfig,
    pub params: ParamSet<T>,
    layers: Vec<PilotLayer>,
    u_out: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PilotForward<T> {
    /// Soft assignment per PS-UE edge (rows `(s, g, k)`), softmax over `g`.
    pub x: Var,
    /// Power per AP-UE edge (rows `(s, m, k)`); STS only.
    pub p: Option<Var>,
    pub bn: Vec<BnUpdate<T>>,
}

impl<T: Scalar> PilotGnn<T> {
    pub fn new(config: GnnConfig, seed: u64) -> Result<Self> {
        if config.variant == Variant::DtsPower || config.widths.is_empty() {
            return Err(Error::Config("pilot GNN needs the dts_pilot or sts variant".into()));
        }
        let sts = config.variant == Variant::Sts;
        let mut params = ParamSet::new();
        let mut b = Builder { params: &mut params, rng: stream_rng(seed, Stream::Init, 1) };
        let mut layers = Vec::new();
        let (mut ap_in, mut ps_in) = (2, 1);
        let n = config.widths.len();
        for (li, &w) in config.widths.iter().enumerate() {
            let l = li + 1;
            let last = l == n;
            let ap = (!last || sts).then(|| {
                let ws = [b.weight(l, "Q_AP_1", ap_in, w), b.weight(l, "U_AP_1", ap_in, w), b.weight(l, "U_AP_2", ap_in, w)];
                (ws, (!last).then(|| b.bn(l, "ap", w)))
            });
            let q_ps = b.weight(l, "Q_PS_1", ps_in, w);
            let u_ps = [b.weight(l, "U_PS_1", ap_in, w), b.weight(l, "U_PS_2", ps_in, w), b.weight(l, "U_PS_3", ps_in, w)];
            let att = config.attention.then(|| [b.weight(l, "U_PS_4", ap_in, w), b.weight(l, "U_PS_5", ap_in, w)]);
            let bn_ps = (!last).then(|| b.bn(l, "ps", w));
            layers.push(PilotLayer { ap, q_ps, u_ps, att, bn_ps });
            ap_in = w;
            ps_in = w;
        }
        let u_out = sts.then(|| b.weight(n + 1, "u_out", ap_in, 1));
        Ok(Self { config, params, layers, u_out })
    }

    pub fn forward(&self, g: &mut Graph<T>, graph: &PilotGraph<T>, p_max: T, mode: BnMode) -> Result<PilotForward<T>> {
        let idx = &graph.index;
        if idx.g != self.config.sequences(idx.k) {
            return Err(Error::Shape(format!("graph has {} PS vertices, model expects {}", idx.g, self.config.sequences(idx.k))));
        }
        let (n_ue, n_ap, n_ps) = (idx.batch * idx.k, idx.batch * idx.m, idx.batch * idx.g);
        let inv_m = T::one() / T::from_usize_lossy(idx.m);
        let inv_k = T::one() / T::from_usize_lossy(idx.k);
        let inv_g = T::one() / T::from_usize_lossy(idx.g);
        let p = &self.params;
        let mut updates = Vec::new();
        let mut ap = g.constant(graph.ap_ue.clone());
        let mut ps = g.constant(graph.ps_ue.clone());
        for layer in &self.layers {
            // PS-UE edges (uses the previous AP-UE representations)
            let own = lin(g, p, ps, layer.q_ps)?;
            let a1 = lin(g, p, ap, layer.u_ps[0])?;
            let a1 = group_total(g, a1, &idx.ap_by_ue, n_ue, &idx.ps_by_ue)?;
            let a1 = g.scale(a1, inv_m);
            let a2 = lin(g, p, ps, layer.u_ps[1])?;
            let a2 = group_others(g, a2, &idx.ps_by_ue, n_ue)?;
            let a2 = g.scale(a2, inv_g);
            let p3 = lin(g, p, ps, layer.u_ps[2])?;
            let a3 = match layer.att {
                Some([u4, u5]) => {
                    let l4 = lin(g, p, ap, u4)?;
                    let l5 = lin(g, p, ap, u5)?;
                    let c = attention_scores(g, idx, l4, l5)?;
                    let total = g.bilinear(c, p3, idx.att_apply.clone(), idx.num_ps_ue())?;
                    let c_self = g.gather_rows(c, idx.att_self.clone())?;
                    let own_term = g.mul(c_self, p3)?;
                    g.sub(total, own_term)?
                }
                None => group_others(g, p3, &idx.ps_by_ps, n_ps)?,
            };
            let a3 = g.scale(a3, inv_k);
            let pre = g.add(own, a1)?;
            let pre = g.add(pre, a2)?;
            let pre = g.add(pre, a3)?;
            let new_ps = finish(g, p, pre, layer.bn_ps, self.config.bn_eps, mode, &mut updates)?;
            // AP-UE edges
            if let Some((ws, bn)) = layer.ap {
                let own = lin(g, p, ap, ws[0])?;
                let b1 = lin(g, p, ap, ws[1])?;
                let b1 = group_others(g, b1, &idx.ap_by_ue, n_ue)?;
                let b1 = g.scale(b1, inv_m);
                let b2 = lin(g, p, ap, ws[2])?;
                let b2 = group_others(g, b2, &idx.ap_by_ap, n_ap)?;
                let b2 = g.scale(b2, inv_k);
                let pre = g.add(own, b1)?;
                let pre = g.add(pre, b2)?;
                ap = finish(g, p, pre, bn, self.config.bn_eps, mode, &mut updates)?;
            }
            ps = new_ps;
        }
        let logits = if g.shape(ps).1 > 1 { g.slice_cols(ps, 0, 1)? } else { ps };
        let x = g.segment_softmax(logits, idx.ps_by_ue.clone(), n_ue)?;
        let power = match self.u_out {
            Some(u) => {
                let z = lin(g, p, ap, u)?;
                let q = g.sigmoid(z);
                let mask = g.constant(graph.assoc.clone());
                let q = g.mul(q, mask)?;
                Some(power_activation(g, q, &idx.ap_by_ap, n_ap, p_max)?)
            }
            None => None,
        };
        Ok(PilotForward { x, p: power, bn: updates })
    }

    /// Inference: per-sample soft `G x K` assignments and (STS) powers.
    pub fn infer(&self, graph: &PilotGraph<T>, p_max: T) -> Result<(Vec<Grid<T>>, Option<Vec<Grid<T>>>)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, graph, p_max, BnMode::Eval)?;
        let xs = assignment_grids(&graph.index, g.value(out.x));
        let ps = out.p.map(|p| ap_ue_grids(&graph.index, g.value(p)));
        Ok((xs, ps))
    }

    pub fn apply_bn(&mut self, updates: &[BnUpdate<T>]) {
        apply_updates(&mut self.params, updates, self.config.bn_momentum);
    }
}

/// `c_jk = tanh((1/M) sum_m (d_mj U4) * (d_mk U5))` from the processed
/// AP-UE representations; rows `(s, j, k)`.
pub fn attention_scores<T: Scalar>(g: &mut Graph<T>, idx: &PilotIndex, l4: Var, l5: Var) -> Result<Var> {
    let c = g.bilinear(l4, l5, idx.att_pairs.clone(), idx.num_att())?;
    let c = g.scale(c, T::one() / T::from_usize_lossy(idx.m));
    Ok(g.tanh(c))
}

/// Splits PS-UE rows into per-sample `G x K` matrices.
pub fn assignment_grids<T: Scalar>(idx: &PilotIndex, x: &Tensor<T>) -> Vec<Grid<T>> {
    let per = idx.g * idx.k;
    (0..idx.batch)
        .map(|s| Grid::from_vec(idx.g, idx.k, x.data()[s * per..(s + 1) * per].to_vec()).expect("sizes match"))
        .collect()
}

/// Splits AP-UE rows into per-sample `M x K` matrices.
pub fn ap_ue_grids<T: Scalar>(idx: &PilotIndex, p: &Tensor<T>) -> Vec<Grid<T>> {
    let per = idx.m * idx.k;
    (0..idx.batch)
        .map(|s| Grid::from_vec(idx.m, idx.k, p.data()[s * per..(s + 1) * per].to_vec()).expect("sizes match"))
        .collect()
}

/// Serialized model: configuration plus parameter records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub variant: Variant,
    pub config: GnnConfig,
    pub params: Vec<ParamEntry>,
}

impl<T: Scalar> PowerGnn<T> {
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint { variant: self.config.variant, config: self.config.clone(), params: self.params.to_entries() }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let mut m = Self::new(ck.config.clone(), 0)?;
        m.params.load_entries(&ck.params)?;
        Ok(m)
    }
}

impl<T: Scalar> PilotGnn<T> {
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint { variant: self.config.variant, config: self.config.clone(), params: self.params.to_entries() }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let mut m = Self::new(ck.config.clone(), 0)?;
        m.params.load_entries(&ck.params)?;
        Ok(m)
    }
}

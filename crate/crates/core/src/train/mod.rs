//! Dataset generation, the unsupervised loss and the DTS/STS training loops.

pub mod soft;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, BnMode, Graph, Var};
use crate::error::{Error, Result};
use crate::gnn::{build_pilot_graph, BnUpdate, GnnConfig, ModelCheckpoint, PilotGnn, PowerGnn, PowerIndex, Variant};
use crate::linalg::Grid;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scalar::Scalar;
use crate::sim::{ChannelSet, LinkParams, SystemConfig};

pub use soft::{soft_channels, soft_net_se, soft_tau, SoftChannels, SoftFrame};

/// Lower/upper clamp of soft assignment entries inside the penalty logs.
pub const PENALTY_CLAMP: f64 = 1e-6;

fn d_batch() -> usize {
    50
}
fn d_penalty() -> f64 {
    0.2
}
fn d_epochs() -> usize {
    20
}
fn d_lr() -> f64 {
    0.01
}
fn d_one() -> f64 {
    1.0
}
fn d_train() -> usize {
    5000
}
fn d_test() -> usize {
    100
}
fn d_true() -> bool {
    true
}

/// System plus training hyperparameters. A bare system configuration is a
/// valid training configuration with every default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub system: SystemConfig,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_penalty")]
    pub penalty_weight: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    #[serde(default = "d_one")]
    pub lr_decay: f64,
    #[serde(default = "d_train")]
    pub n_train: usize,
    #[serde(default = "d_test")]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_true")]
    pub attention: bool,
    #[serde(default = "d_true")]
    pub feature_enhancement: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_tau: Option<usize>,
}

impl TrainConfig {
    pub fn new(system: SystemConfig) -> Self {
        Self {
            system,
            batch_size: d_batch(),
            penalty_weight: d_penalty(),
            epochs: d_epochs(),
            lr: d_lr(),
            lr_decay: 1.0,
            n_train: d_train(),
            n_test: d_test(),
            seed: 0,
            attention: true,
            feature_enhancement: true,
            fixed_tau: None,
        }
    }

    /// Desk-scale defaults: 300 training and 50 test samples.
    pub fn desk() -> Self {
        Self { n_train: 300, n_test: 50, ..Self::new(SystemConfig::desk()) }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for batch norm".into()));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::Config("penalty weight must be nonnegative".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("learning rate and decay must be positive".into()));
        }
        if self.fixed_tau.is_some_and(|z| z == 0 || z > self.system.tau_c) {
            return Err(Error::Config("fixed pilot length must be in 1..=tau_c".into()));
        }
        Ok(())
    }

    /// GNN configuration for `variant` under these settings.
    pub fn gnn(&self, variant: Variant) -> GnnConfig {
        let mut c = GnnConfig::new(variant, self.system.rho_db());
        c.attention = self.attention;
        c.feature_enhancement = self.feature_enhancement;
        c.fixed_tau = self.fixed_tau;
        c
    }
}

/// One frame of training data: LSF, association and `N_T` SSF draws.
#[derive(Debug, Clone)]
pub struct TrainingSample<T> {
    pub seed: u64,
    pub channels: ChannelSet<T>,
}

/// Independent topologies per sample, deterministic in `seed`.
pub fn generate_dataset<T: Scalar>(cfg: &SystemConfig, n: usize, seed: u64) -> Result<Vec<TrainingSample<T>>> {
    cfg.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, Stream::Sample, i as u64);
            let (_, channels) = ChannelSet::generate(cfg, s)?;
            Ok(TrainingSample { seed: s, channels })
        })
        .collect()
}

/// Random PS-UE features, `G x K` uniform on `[0, 1)`.
pub fn draw_lambda<T: Scalar>(seed: u64, index: u64, g: usize, k: usize) -> Grid<T> {
    let mut rng = stream_rng(seed, Stream::Features, index);
    Grid::from_fn(g, k, |_, _| T::of(rng.random::<f64>()))
}

/// The models a method trains.
#[derive(Debug, Clone)]
pub enum Policy<T> {
    Dts { pilot: PilotGnn<T>, power: PowerGnn<T> },
    Sts { model: PilotGnn<T> },
}

impl<T: Scalar> Policy<T> {
    pub fn new(cfg: &TrainConfig, dual: bool) -> Result<Self> {
        let s = derive_seed(cfg.seed, Stream::Init, 0);
        Ok(if dual {
            let pilot = PilotGnn::new(cfg.gnn(Variant::DtsPilot), s)?;
            let mut power = PowerGnn::new(cfg.gnn(Variant::DtsPower), s)?;
            power.params.set_slot_base(pilot.params.len());
            Self::Dts { pilot, power }
        } else {
            Self::Sts { model: PilotGnn::new(cfg.gnn(Variant::Sts), s)? }
        })
    }

    pub fn pilot(&self) -> &PilotGnn<T> {
        match self {
            Self::Dts { pilot, .. } => pilot,
            Self::Sts { model } => model,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Dts { .. } => "dts",
            Self::Sts { .. } => "sts",
        }
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        let models = match self {
            Self::Dts { pilot, power } => vec![pilot.to_checkpoint(), power.to_checkpoint()],
            Self::Sts { model } => vec![model.to_checkpoint()],
        };
        PolicyCheckpoint { variant: self.name().to_string(), models }
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        let find = |v: Variant| {
            ck.models
                .iter()
                .find(|m| m.variant == v)
                .ok_or_else(|| Error::Format(format!("checkpoint has no {v:?} model")))
        };
        match ck.variant.as_str() {
            "dts" => {
                let pilot = PilotGnn::from_checkpoint(find(Variant::DtsPilot)?)?;
                let mut power = PowerGnn::from_checkpoint(find(Variant::DtsPower)?)?;
                power.params.set_slot_base(pilot.params.len());
                Ok(Self::Dts { pilot, power })
            }
            "sts" => Ok(Self::Sts { model: PilotGnn::from_checkpoint(find(Variant::Sts)?)? }),
            other => Err(Error::Format(format!("unknown policy variant {other:?}"))),
        }
    }
}

/// Checkpoint file: `{"variant": "dts"|"sts", "models": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub variant: String,
    pub models: Vec<ModelCheckpoint>,
}

/// Values of one batch forward pass.
#[derive(Debug, Clone)]
pub struct BatchOutput<T> {
    pub loss: Var,
    pub loss_value: f64,
    /// Mean soft net SE over samples and subframes.
    pub net_se: f64,
    /// Mean penalty `sum_gk ln(x) ln(1 - x)` per sample.
    pub penalty: f64,
    /// Mean soft pilot length.
    pub tau_p: f64,
    pub bn_pilot: Vec<BnUpdate<T>>,
    pub bn_power: Vec<BnUpdate<T>>,
}

fn rows<T: Scalar>(g: &mut Graph<T>, v: Var, start: usize, count: usize, shape: (usize, usize)) -> Result<Var> {
    let r = g.gather_rows(v, Arc::new((start..start + count).collect()))?;
    g.reshape(r, shape.0, shape.1)
}

/// Loss of a batch on the tape:
/// `-(1/N_s) sum_n [(1/N_T) sum_t eta_nt - w sum_gk ln(x_gk) ln(1 - x_gk)]`.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    policy: &Policy<T>,
    batch: &[&ChannelSet<T>],
    lambdas: Option<&[Grid<T>]>,
    params: &LinkParams<T>,
    penalty_weight: f64,
    mode: BnMode,
) -> Result<BatchOutput<T>> {
    let ns = batch.len();
    if ns == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let pilot = policy.pilot();
    let (m, k, n_t) = (batch[0].m(), batch[0].k(), batch[0].n_t());
    if batch.iter().any(|c| c.n_t() != n_t) {
        return Err(Error::Shape("samples in a batch must share N_T".into()));
    }
    let gs = pilot.config.sequences(k);
    let fixed = pilot.config.fixed_tau.is_some();
    let betas: Vec<&Grid<T>> = batch.iter().map(|c| &c.beta).collect();
    let assocs: Vec<_> = batch.iter().map(|c| &c.assoc).collect();
    let lambdas = if pilot.config.feature_enhancement { lambdas } else { None };
    let graph = build_pilot_graph(&betas, &assocs, lambdas, gs, pilot.config.rho_db)?;
    let out = pilot.forward(g, &graph, params.p_max, mode)?;

    let mut xs = Vec::with_capacity(ns);
    let mut taus = Vec::with_capacity(ns);
    let mut chans = Vec::with_capacity(ns * n_t);
    for (s, ch) in batch.iter().enumerate() {
        let x = rows(g, out.x, s * gs * k, gs * k, (gs, k))?;
        let tau = soft_tau(g, x, fixed);
        let frame = SoftFrame::new(ch, params);
        for t in 0..n_t {
            chans.push(soft_channels(g, &frame, x, tau, t, params)?);
        }
        xs.push(x);
        taus.push(tau);
    }

    // powers per (sample, subframe)
    let mut bn_power = Vec::new();
    let powers: Vec<Var> = match policy {
        Policy::Sts { .. } => {
            let p = out.p.ok_or_else(|| Error::Input("STS model without power head".into()))?;
            let per: Result<Vec<Var>> = (0..ns).map(|s| rows(g, p, s * m * k, m * k, (m, k))).collect();
            let per = per?;
            (0..ns * n_t).map(|b| per[b / n_t]).collect()
        }
        Policy::Dts { power, .. } => {
            let sub_assocs: Vec<_> = (0..ns * n_t).map(|b| assocs[b / n_t]).collect();
            let idx = PowerIndex::new(&sub_assocs)?;
            let mut flat_re = Vec::with_capacity(ns * n_t * m);
            let mut flat_im = Vec::with_capacity(ns * n_t * m);
            for c in &chans {
                for ap in 0..m {
                    for (src, dst) in [(c.est_re[ap], &mut flat_re), (c.est_im[ap], &mut flat_im)] {
                        let tr = g.transpose(src);
                        dst.push(g.reshape(tr, k * k, 1)?);
                    }
                }
            }
            let all_re = g.concat_rows(&flat_re)?;
            let all_im = g.concat_rows(&flat_im)?;
            let at = |b: usize, ap: usize, i: usize, u: usize| ((b * m + ap) * k + i) * k + u;
            let sig_rows = Arc::new(idx.sig.iter().map(|&(b, ap, u)| at(b, ap, u, u)).collect::<Vec<_>>());
            let inf_rows = Arc::new(idx.inf.iter().map(|&(b, ap, i, u)| at(b, ap, i, u)).collect::<Vec<_>>());
            let scale = T::of(power.config.channel_scale());
            let mut feat = |rows_idx: &Arc<Vec<usize>>| -> Result<Var> {
                let re = g.gather_rows(all_re, rows_idx.clone())?;
                let im = g.gather_rows(all_im, rows_idx.clone())?;
                let f = g.concat_cols(&[re, im])?;
                Ok(g.scale(f, scale))
            };
            let sig = feat(&sig_rows)?;
            let inf = feat(&inf_rows)?;
            let pf = power.forward_vars(g, &idx, sig, inf, params.p_max, mode)?;
            bn_power = pf.bn;
            let target = Arc::new(idx.sig.iter().map(|&(b, ap, u)| (b * m + ap) * k + u).collect::<Vec<_>>());
            let dense = g.segment_sum(pf.p, target, ns * n_t * m * k)?;
            let per: Result<Vec<Var>> = (0..ns * n_t).map(|b| rows(g, dense, b * m * k, m * k, (m, k))).collect();
            per?
        }
    };

    let mut eta_total: Option<Var> = None;
    for (b, c) in chans.iter().enumerate() {
        let eta = soft_net_se(g, &c.true_re, &c.true_im, powers[b], taus[b / n_t], params)?;
        eta_total = Some(match eta_total {
            Some(acc) => g.add(acc, eta)?,
            None => eta,
        });
    }
    let eta_total = eta_total.expect("nonempty batch");
    let lo = T::of(PENALTY_CLAMP);
    let xc = g.clamp(out.x, lo, T::one() - lo);
    let l1 = g.ln(xc);
    let neg = g.neg(xc);
    let comp = g.add_scalar(neg, T::one());
    let l2 = g.ln(comp);
    let prod = g.mul(l1, l2)?;
    let pen = g.sum(prod);

    let inv_ns = T::one() / T::from_usize_lossy(ns);
    let reward = g.scale(eta_total, -inv_ns / T::from_usize_lossy(n_t));
    let cost = g.scale(pen, T::of(penalty_weight) * inv_ns);
    let loss = g.add(reward, cost)?;

    let net_se = g.value(eta_total).item().as_f64() / (ns * n_t) as f64;
    let penalty = g.value(pen).item().as_f64() / ns as f64;
    let tau_p = taus.iter().map(|&t| g.value(t).item().as_f64()).sum::<f64>() / ns as f64;
    let loss_value = g.value(loss).item().as_f64();
    Ok(BatchOutput { loss, loss_value, net_se, penalty, tau_p, bn_pilot: out.bn, bn_power })
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub net_se: f64,
    pub penalty: f64,
    pub tau_p: f64,
}

pub const CURVE_HEADER: &str = "epoch,step,loss,net_se,penalty,tau_p";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    crate::eval::write_csv(CURVE_HEADER, rows, false)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub policy: Policy<T>,
    pub curve: Vec<CurveRow>,
}

/// One Adam optimizer per model, pilot model first.
pub fn optimizers<T: Scalar>(policy: &Policy<T>, cfg: AdamConfig) -> Vec<Adam<T>> {
    match policy {
        Policy::Dts { pilot, power } => vec![Adam::new(&pilot.params, cfg), Adam::new(&power.params, cfg)],
        Policy::Sts { model } => vec![Adam::new(&model.params, cfg)],
    }
}

/// One synchronous Adam step of every model on one batch.
pub fn train_step<T: Scalar>(
    policy: &mut Policy<T>,
    batch: &[&ChannelSet<T>],
    lambdas: Option<&[Grid<T>]>,
    params: &LinkParams<T>,
    penalty_weight: f64,
    adam: &mut [Adam<T>],
) -> Result<BatchOutput<T>> {
    let mut g = Graph::new();
    let out = batch_loss(&mut g, policy, batch, lambdas, params, penalty_weight, BnMode::Train)?;
    if !out.loss_value.is_finite() {
        let detail = format!("loss {} (net SE {}, penalty {})", out.loss_value, out.net_se, out.penalty);
        return Err(Error::Diverged { step: 0, detail });
    }
    let grads = g.backward(out.loss)?;
    match policy {
        Policy::Dts { pilot, power } => {
            let gp = pilot.params.grads(&g, &grads);
            let gw = power.params.grads(&g, &grads);
            adam[0].step(&mut pilot.params, &gp)?;
            adam[1].step(&mut power.params, &gw)?;
            pilot.apply_bn(&out.bn_pilot);
            power.apply_bn(&out.bn_power);
        }
        Policy::Sts { model } => {
            let gm = model.params.grads(&g, &grads);
            adam[0].step(&mut model.params, &gm)?;
            model.apply_bn(&out.bn_pilot);
        }
    }
    Ok(out)
}

/// Trains a DTS (`dual`) or STS policy on `data`.
pub fn train<T: Scalar>(cfg: &TrainConfig, dual: bool, data: &mut [TrainingSample<T>]) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Input("at least two training samples are needed".into()));
    }
    let params = LinkParams::from_config(&cfg.system);
    let mut policy = Policy::new(cfg, dual)?;
    let mut adam = optimizers(&policy, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let gs = policy.pilot().config.sequences(cfg.system.k);
    let n = data.len();
    let bs = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::new();
    let mut step = 0;
    let mut lr = cfg.lr;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        for sample in data.iter_mut() {
            sample.channels.redraw_pilot_noise(sample.seed, epoch as u64 + 1);
        }
        // a trailing batch too small for batch norm is skipped
        for chunk in order.chunks(bs).filter(|c| c.len() >= 2) {
            let batch: Vec<&ChannelSet<T>> = chunk.iter().map(|&i| &data[i].channels).collect();
            let lambdas: Vec<Grid<T>> = chunk
                .iter()
                .map(|&i| draw_lambda(cfg.seed, (epoch * n + i) as u64, gs, cfg.system.k))
                .collect();
            let out = train_step(&mut policy, &batch, Some(&lambdas), &params, cfg.penalty_weight, &mut adam).map_err(
                |e| match e {
                    Error::Diverged { detail, .. } => Error::Diverged { step, detail },
                    other => other,
                },
            )?;
            curve.push(CurveRow { epoch, step, loss: out.loss_value, net_se: out.net_se, penalty: out.penalty, tau_p: out.tau_p });
            step += 1;
        }
        lr *= cfg.lr_decay;
        for a in &mut adam {
            a.config.lr = lr;
        }
    }
    Ok(TrainOutcome { policy, curve })
}

//! Test-phase evaluation of trained policies and baselines, sweeps,
//! generalization tables and the property suite.

pub mod properties;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{build_pilot_graph, build_power_graph};
use crate::linalg::Grid;
use crate::pilot::{discretize, Permutation, PilotAssignment};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sim::{evaluate_frame, pilot_length, ChannelSet, LinkParams, Scenario, SystemConfig};
use crate::solvers::{dsatur_tabu_wmmse, equal_power, oracle_baseline, ORACLE_MAX_K};
use crate::train::{draw_lambda, generate_dataset, train, Policy, PolicyCheckpoint, TrainConfig};

pub use properties::{run_property_suite, PropertyCheck, PropertyReport, SuiteSize};

/// Version of the results CSV layout, written as the first line.
pub const SCHEMA_VERSION: u32 = 1;

/// Fixed pilot length of an ablation: a number, or `K` of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedTau {
    Ues,
    Length(usize),
}

impl FixedTau {
    pub fn resolve(self, k: usize) -> usize {
        match self {
            Self::Ues => k,
            Self::Length(z) => z,
        }
    }
}

/// Everything a sweep can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    DtsAgnn,
    StsAgnn,
    DtsGnn,
    StsGnn,
    StsNoFe,
    StsFixedTau(FixedTau),
    DsaturTabuWmmse,
    Oracle,
    EqualPowerRandomPilots,
}

impl Method {
    pub fn is_learned(self) -> bool {
        !matches!(self, Self::DsaturTabuWmmse | Self::Oracle | Self::EqualPowerRandomPilots)
    }

    pub fn is_dual(self) -> bool {
        matches!(self, Self::DtsAgnn | Self::DtsGnn)
    }

    /// `cfg` with the architecture switches of this method applied.
    pub fn train_config(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        c.attention = !matches!(self, Self::DtsGnn | Self::StsGnn);
        c.feature_enhancement = !matches!(self, Self::StsNoFe);
        c.fixed_tau = match self {
            Self::StsFixedTau(z) => Some(z.resolve(cfg.system.k)),
            _ => None,
        };
        c
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DtsAgnn => f.write_str("dts_agnn"),
            Self::StsAgnn => f.write_str("sts_agnn"),
            Self::DtsGnn => f.write_str("dts_gnn"),
            Self::StsGnn => f.write_str("sts_gnn"),
            Self::StsNoFe => f.write_str("sts_no_fe"),
            Self::StsFixedTau(FixedTau::Ues) => f.write_str("sts_fixed_tau(K)"),
            Self::StsFixedTau(FixedTau::Length(z)) => write!(f, "sts_fixed_tau({z})"),
            Self::DsaturTabuWmmse => f.write_str("dsatur_tabu_wmmse"),
            Self::Oracle => f.write_str("oracle"),
            Self::EqualPowerRandomPilots => f.write_str("equal_power_random_pilots"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(arg) = s.strip_prefix("sts_fixed_tau(").and_then(|r| r.strip_suffix(')')) {
            let z = match arg.trim() {
                "K" | "k" => FixedTau::Ues,
                n => FixedTau::Length(
                    n.parse().ok().filter(|&z| z > 0).ok_or_else(|| Error::Config(format!("bad fixed pilot length {n:?}")))?,
                ),
            };
            return Ok(Self::StsFixedTau(z));
        }
        Ok(match s {
            "dts_agnn" => Self::DtsAgnn,
            "sts_agnn" => Self::StsAgnn,
            "dts_gnn" => Self::DtsGnn,
            "sts_gnn" => Self::StsGnn,
            "sts_no_fe" => Self::StsNoFe,
            "dsatur_tabu_wmmse" => Self::DsaturTabuWmmse,
            "oracle" => Self::Oracle,
            "equal_power_random_pilots" => Self::EqualPowerRandomPilots,
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Test-phase outcome of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleEval {
    pub eta: f64,
    pub tau_p: f64,
}

/// Binary test-phase evaluation of a trained policy on one frame:
/// discretized pilots, then DTS power per subframe from `G_hat` or the
/// STS power reused on every subframe.
pub fn evaluate_policy(
    policy: &Policy<f64>,
    ch: &ChannelSet<f64>,
    lambda: Option<&Grid<f64>>,
    params: &LinkParams<f64>,
) -> Result<SampleEval> {
    let pilot = policy.pilot();
    let gs = pilot.config.sequences(ch.k());
    let lambda = if pilot.config.feature_enhancement { lambda.map(std::slice::from_ref) } else { None };
    let graph = build_pilot_graph(&[&ch.beta], &[&ch.assoc], lambda, gs, pilot.config.rho_db)?;
    let (soft, sts_power) = pilot.infer(&graph, params.p_max)?;
    let x = discretize(&soft[0]);
    let tau_p = pilot_length(&x, pilot.config.fixed_tau.is_some());
    let eval = match policy {
        Policy::Sts { .. } => {
            let p = sts_power.and_then(|mut v| v.pop()).ok_or_else(|| Error::Input("STS model without power head".into()))?;
            evaluate_frame(ch, &x, tau_p, params, |_, _| Ok(p.clone()))?
        }
        Policy::Dts { power, .. } => {
            let scale = power.config.channel_scale();
            evaluate_frame(ch, &x, tau_p, params, |_, state| {
                let graph = build_power_graph(&[&state.g_hat], &[&ch.assoc], scale)?;
                Ok(power.infer(&graph, params.p_max)?.remove(0))
            })?
        }
    };
    Ok(SampleEval { eta: eval.average, tau_p })
}

/// Orthogonal pilots in a random order with equal power split.
pub fn equal_power_random_pilots(ch: &ChannelSet<f64>, params: &LinkParams<f64>, seed: u64) -> Result<SampleEval> {
    let k = ch.k();
    let perm = Permutation::random(k, &mut stream_rng(seed, Stream::Sample, 11));
    let x = PilotAssignment::from_labels(perm.as_slice(), k)?;
    let p = equal_power(&ch.assoc, params.p_max);
    let tau_p = x.psi();
    let eval = evaluate_frame(ch, &x, tau_p, params, |_, _| Ok(p.clone()))?;
    Ok(SampleEval { eta: eval.average, tau_p })
}

/// Held-out test frames of a scenario.
pub fn test_set(system: &SystemConfig, n: usize, seed: u64) -> Result<Vec<ChannelSet<f64>>> {
    Ok(generate_dataset::<f64>(system, n, seed)?.into_iter().map(|s| s.channels).collect())
}

/// Evaluates `method` on every frame, in parallel and in frame order.
/// Learned methods need `policy`; feature draws come from `seed`.
pub fn evaluate_method(
    method: Method,
    policy: Option<&Policy<f64>>,
    frames: &[ChannelSet<f64>],
    params: &LinkParams<f64>,
    seed: u64,
) -> Result<Vec<SampleEval>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, ch)| {
            let sample_seed = derive_seed(seed, Stream::Sample, i as u64);
            match method {
                Method::DsaturTabuWmmse => {
                    let r = dsatur_tabu_wmmse(ch, params)?;
                    Ok(SampleEval { eta: r.eta_avg, tau_p: r.tau_p })
                }
                Method::Oracle => {
                    let r = oracle_baseline(ch, params)?;
                    Ok(SampleEval { eta: r.eta_avg, tau_p: r.tau_p })
                }
                Method::EqualPowerRandomPilots => equal_power_random_pilots(ch, params, sample_seed),
                _ => {
                    let policy = policy.ok_or_else(|| Error::MissingCheckpoint(method.to_string()))?;
                    let gs = policy.pilot().config.sequences(ch.k());
                    let lambda = draw_lambda(seed, i as u64, gs, ch.k());
                    evaluate_policy(policy, ch, Some(&lambda), params)
                }
            }
        })
        .collect()
}

/// A sweep point: a number (`tau_c`, `K`, `M`, `N`) or a scenario name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(usize),
    Name(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            Self::Name(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    #[serde(rename = "tau_c")]
    TauC,
    K,
    M,
    N,
    #[serde(rename = "scenario")]
    Scenario,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TauC => "tau_c",
            Self::K => "K",
            Self::M => "M",
            Self::N => "N",
            Self::Scenario => "scenario",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<SweepValue>,
}

impl Sweep {
    /// `cfg` with the swept variable set to `value`.
    pub fn apply(&self, cfg: &TrainConfig, value: &SweepValue) -> Result<TrainConfig> {
        let mut c = cfg.clone();
        let s = &mut c.system;
        match (self.variable, value) {
            (SweepVariable::TauC, SweepValue::Int(v)) => s.tau_c = *v,
            (SweepVariable::K, SweepValue::Int(v)) => s.k = *v,
            (SweepVariable::M, SweepValue::Int(v)) => s.m = *v,
            (SweepVariable::N, SweepValue::Int(v)) => s.n = *v,
            (SweepVariable::Scenario, SweepValue::Name(v)) => {
                s.scenario = match v.to_ascii_lowercase().as_str() {
                    "umi" => Scenario::UMi,
                    "uma" => Scenario::UMa,
                    _ => return Err(Error::Config(format!("unknown scenario {v:?}"))),
                }
            }
            (var, v) => return Err(Error::Config(format!("value {v} does not fit sweep variable {var}"))),
        }
        c.validate()?;
        Ok(c)
    }
}

fn d_true() -> bool {
    true
}

/// Input of `eval sweep` and `eval generalize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Base scenario and training settings; the swept variable overrides it.
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub sweep: Sweep,
    pub test_seed: u64,
    /// Checkpoint paths keyed by `"method@value"` or `"method"`.
    #[serde(default)]
    pub checkpoints: BTreeMap<String, PathBuf>,
    /// Train learned methods that have no checkpoint instead of failing.
    #[serde(default = "d_true")]
    pub train_missing: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.train.validate()?;
        if spec.methods.is_empty() || spec.sweep.values.is_empty() {
            return Err(Error::Config("spec needs at least one method and one sweep value".into()));
        }
        Ok(spec)
    }

    fn checkpoint_path(&self, method: Method, value: &SweepValue, base: &Path) -> Option<PathBuf> {
        let keyed = format!("{method}@{value}");
        self.checkpoints.get(&keyed).or_else(|| self.checkpoints.get(&method.to_string())).map(|p| base.join(p))
    }
}

/// Loads a policy checkpoint file.
pub fn load_policy(path: &Path) -> Result<Policy<f64>> {
    let text = std::fs::read_to_string(path)?;
    let ck: PolicyCheckpoint = serde_json::from_str(&text)?;
    Policy::from_checkpoint(&ck)
}

/// Trains `method` under `cfg` from scratch.
pub fn train_method(method: Method, cfg: &TrainConfig) -> Result<Policy<f64>> {
    if !method.is_learned() {
        return Err(Error::Input(format!("{method} is not a learned method")));
    }
    let c = method.train_config(cfg);
    let mut data = generate_dataset::<f64>(&c.system, c.n_train, c.seed)?;
    Ok(train(&c, method.is_dual(), &mut data)?.policy)
}

/// A trained policy for `method` at a sweep point, from a checkpoint or by
/// training; the second field is set when it was trained here.
fn resolve_policy(
    spec: &ExperimentSpec,
    method: Method,
    value: &SweepValue,
    cfg: &TrainConfig,
    base: &Path,
) -> Result<(Policy<f64>, bool)> {
    let policy = match spec.checkpoint_path(method, value, base) {
        Some(path) => (load_policy(&path)?, false),
        None if spec.train_missing => (train_method(method, cfg)?, true),
        None => return Err(Error::MissingCheckpoint(format!("{method}@{value}"))),
    };
    if policy.0.name() != if method.is_dual() { "dts" } else { "sts" } {
        return Err(Error::Config(format!("checkpoint for {method} holds a {} policy", policy.0.name())));
    }
    Ok(policy)
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: Method,
    pub variable: SweepVariable,
    pub value: SweepValue,
    pub eta_mean: f64,
    pub eta_std: f64,
    pub tau_p_mean: f64,
    pub samples: usize,
    /// Inference wall-clock over all samples; kept out of the results CSV.
    #[serde(skip)]
    pub seconds: f64,
    #[serde(skip)]
    pub per_sample: Vec<SampleEval>,
}

impl ResultRow {
    fn new(method: Method, variable: SweepVariable, value: SweepValue, evals: Vec<SampleEval>, seconds: f64) -> Self {
        let n = evals.len().max(1) as f64;
        let eta_mean = evals.iter().map(|e| e.eta).sum::<f64>() / n;
        let var = evals.iter().map(|e| (e.eta - eta_mean).powi(2)).sum::<f64>() / n;
        let tau_p_mean = evals.iter().map(|e| e.tau_p).sum::<f64>() / n;
        Self { method, variable, value, eta_mean, eta_std: var.sqrt(), tau_p_mean, samples: evals.len(), seconds, per_sample: evals }
    }
}

pub const RESULTS_HEADER: &str = "method,variable,value,eta_mean,eta_std,tau_p_mean,samples";
pub const TIMING_HEADER: &str = "method,variable,value,seconds_total,seconds_per_sample";

/// Header line, then one record per row; `schema` prepends the version
/// comment.
pub(crate) fn write_csv<S: Serialize>(header: &str, rows: impl IntoIterator<Item = S>, schema: bool) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header.split(',')).expect("in-memory CSV");
    for r in rows {
        w.serialize(r).expect("rows serialize to flat records");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8");
    if schema {
        format!("# schema={SCHEMA_VERSION}\n{body}")
    } else {
        body
    }
}

/// Deterministic results table with a leading schema line.
pub fn results_csv(rows: &[ResultRow]) -> String {
    write_csv(RESULTS_HEADER, rows, true)
}

#[derive(Serialize)]
struct TimingRow<'a> {
    method: Method,
    variable: SweepVariable,
    value: &'a SweepValue,
    seconds_total: f64,
    seconds_per_sample: f64,
}

/// Inference wall-clock per row.
pub fn timing_csv(rows: &[ResultRow]) -> String {
    let timing = rows.iter().map(|r| TimingRow {
        method: r.method,
        variable: r.variable,
        value: &r.value,
        seconds_total: r.seconds,
        seconds_per_sample: r.seconds / r.samples.max(1) as f64,
    });
    write_csv(TIMING_HEADER, timing, false)
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    /// Policies trained during the sweep, keyed `"method@value"`.
    pub trained: Vec<(String, PolicyCheckpoint)>,
}

/// One row per (value, method). The oracle is skipped where `K` exceeds
/// its enumeration limit. Relative checkpoint paths resolve against `base`.
pub fn run_sweep(spec: &ExperimentSpec, base: &Path) -> Result<SweepOutput> {
    let mut rows = Vec::new();
    let mut trained = Vec::new();
    for value in &spec.sweep.values {
        let cfg = spec.sweep.apply(&spec.train, value)?;
        let frames = test_set(&cfg.system, cfg.n_test, spec.test_seed)?;
        let params = LinkParams::from_config(&cfg.system);
        for &method in &spec.methods {
            if method == Method::Oracle && cfg.system.k > ORACLE_MAX_K {
                continue;
            }
            let policy = if method.is_learned() {
                let (p, fresh) = resolve_policy(spec, method, value, &cfg, base)?;
                if fresh {
                    trained.push((format!("{method}@{value}"), p.to_checkpoint()));
                }
                Some(p)
            } else {
                None
            };
            let start = Instant::now();
            let evals = evaluate_method(method, policy.as_ref(), &frames, &params, spec.test_seed)?;
            let seconds = start.elapsed().as_secs_f64();
            rows.push(ResultRow::new(method, spec.sweep.variable, value.clone(), evals, seconds));
        }
    }
    Ok(SweepOutput { rows, trained })
}

/// Zero-shot transfer of a model trained on the base scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub method: Method,
    pub variable: SweepVariable,
    pub value: SweepValue,
    pub eta_transfer: f64,
    pub eta_reference: f64,
    /// `eta_transfer / eta_reference` in percent.
    pub ratio_percent: f64,
}

pub const TRANSFER_HEADER: &str = "method,variable,value,eta_transfer,eta_reference,ratio_percent";

pub fn transfer_csv(rows: &[TransferRow]) -> String {
    write_csv(TRANSFER_HEADER, rows, true)
}

#[derive(Debug, Clone)]
pub struct GeneralizationOutput {
    pub rows: Vec<TransferRow>,
    pub trained: Vec<(String, PolicyCheckpoint)>,
}

/// Evaluates every learned method trained on `spec.train` on each sweep
/// point, relative to a DTS-AGNN trained on that point. Source models use
/// the `"method"` checkpoint key, references `"dts_agnn@value"`; a sweep
/// point equal to the base scenario reuses the source DTS-AGNN.
pub fn run_generalization(spec: &ExperimentSpec, base: &Path) -> Result<GeneralizationOutput> {
    let mut trained = Vec::new();
    let mut sources = Vec::new();
    for &method in spec.methods.iter().filter(|m| m.is_learned()) {
        let policy = match spec.checkpoints.get(&method.to_string()) {
            Some(path) => load_policy(&base.join(path))?,
            None if spec.train_missing => {
                let p = train_method(method, &spec.train)?;
                trained.push((method.to_string(), p.to_checkpoint()));
                p
            }
            None => return Err(Error::MissingCheckpoint(method.to_string())),
        };
        sources.push((method, policy));
    }
    if sources.is_empty() {
        return Err(Error::Config("generalization needs at least one learned method".into()));
    }
    let mut rows = Vec::new();
    for value in &spec.sweep.values {
        let cfg = spec.sweep.apply(&spec.train, value)?;
        let frames = test_set(&cfg.system, cfg.n_test, spec.test_seed)?;
        let params = LinkParams::from_config(&cfg.system);
        let own = sources.iter().find(|(m, _)| *m == Method::DtsAgnn).map(|(_, p)| p);
        let reference = match own {
            Some(p) if cfg.system == spec.train.system => p.clone(),
            _ => {
                let (p, fresh) = resolve_policy(spec, Method::DtsAgnn, value, &cfg, base)?;
                if fresh {
                    trained.push((format!("{}@{value}", Method::DtsAgnn), p.to_checkpoint()));
                }
                p
            }
        };
        let mean = |e: &[SampleEval]| e.iter().map(|s| s.eta).sum::<f64>() / e.len().max(1) as f64;
        let eta_reference = mean(&evaluate_method(Method::DtsAgnn, Some(&reference), &frames, &params, spec.test_seed)?);
        for (method, policy) in &sources {
            let eta_transfer = mean(&evaluate_method(*method, Some(policy), &frames, &params, spec.test_seed)?);
            rows.push(TransferRow {
                method: *method,
                variable: spec.sweep.variable,
                value: value.clone(),
                eta_transfer,
                eta_reference,
                ratio_percent: 100.0 * eta_transfer / eta_reference,
            });
        }
    }
    Ok(GeneralizationOutput { rows, trained })
}

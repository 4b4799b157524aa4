//! Invariant harnesses of every module and the `eval properties` suite.

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{op_suite, relative_error, BnMode, Graph, Tensor};
use crate::error::Result;
use crate::gnn::checks::{
    degeneracy, pilot_equivariance_error, power_equivariance_error, random_association, random_equivalent, random_lambda,
    randomize,
};
use crate::gnn::{build_pilot_graph, build_power_graph, GnnConfig, PilotGnn, PowerGnn, Variant};
use crate::linalg::Grid;
use crate::pilot::{discretize, PilotAssignment};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sim::{
    evaluate_frame, mmse_estimate, nmse, random_beta, received_pilot, subframe_state, Association, ChannelSet,
    EquivalentChannels, LinkParams, SubframeState, SystemConfig,
};
use crate::solvers::{
    dsatur_assign, equal_power, exhaustive_oracle, sum_rate, tabu_refine, wmmse_power, InterferenceGraph, PowerRule,
    TabuOptions, WmmseOptions,
};
use crate::train::{batch_loss, soft_channels, soft_net_se, soft_tau, Policy, SoftFrame, TrainConfig};

/// Monte-Carlo NMSE of the MMSE estimate of `sqrt(beta_mk) h_mk` against
/// the closed form, for a contaminated assignment of `K = 4` UEs on two
/// sequences. Returns `(monte carlo, closed form)` per AP-UE pair.
pub fn nmse_monte_carlo(seed: u64, draws: usize) -> Result<Vec<(f64, f64)>> {
    let cfg = SystemConfig { m: 2, n: 2, k: 4, n_t: 1, ..SystemConfig::desk() };
    let params = LinkParams::from_config(&cfg);
    let mut rng = stream_rng(seed, Stream::Sample, 7);
    let beta = random_beta::<f64>(&mut rng, cfg.m, cfg.k, -115.0, -100.0);
    let assoc = Association::full(cfg.m, cfg.k);
    let x = PilotAssignment::from_labels(&[0, 1, 0, 1], 2)?;
    let tau_p = x.psi();
    let errors: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|d| -> Result<Vec<f64>> {
            let ch = ChannelSet::with_association(&cfg, beta.clone(), assoc.clone(), derive_seed(seed, Stream::Sample, d as u64))?;
            let y = received_pilot(&x, &ch, 0, tau_p, &params)?;
            let est = mmse_estimate(&y, &x, &ch, tau_p, &params);
            let mut e = Vec::with_capacity(cfg.m * cfg.k);
            for m in 0..cfg.m {
                for k in 0..cfg.k {
                    let s = ch.beta[(m, k)].sqrt();
                    let err: f64 = ch.h(0, m, k).iter().zip(est.get(m, k)).map(|(h, e)| (h * s - e).norm_sqr()).sum();
                    e.push(err / (cfg.n as f64 * ch.beta[(m, k)]));
                }
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(cfg.m * cfg.k);
    for m in 0..cfg.m {
        for k in 0..cfg.k {
            let mc = errors.iter().map(|e| e[m * cfg.k + k]).sum::<f64>() / draws as f64;
            out.push((mc, nmse(&x, &beta, m, k, tau_p, &params)));
        }
    }
    Ok(out)
}

/// Best sum rate over the per-AP power simplex on a `step` grid for two
/// APs each serving both of two UEs.
pub fn grid_search_2x2(g: &EquivalentChannels<f64>, p_max: f64, noise: f64, step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    let simplex: Vec<(f64, f64)> =
        (0..=n).flat_map(|a| (0..=n - a).map(move |b| (a as f64 / n as f64 * p_max, b as f64 / n as f64 * p_max))).collect();
    let gs: Vec<Complex<f64>> = (0..2).flat_map(|m| (0..2).flat_map(move |i| (0..2).map(move |k| (m, i, k)))).map(|(m, i, k)| g.get(m, i, k)).collect();
    let at = |m: usize, i: usize, k: usize| gs[(m * 2 + i) * 2 + k];
    simplex
        .par_iter()
        .map(|&(p00, p01)| {
            let (s00, s01) = (p00.sqrt(), p01.sqrt());
            let mut best = 0.0f64;
            for &(p10, p11) in &simplex {
                let (s10, s11) = (p10.sqrt(), p11.sqrt());
                let amp = [[s00, s01], [s10, s11]];
                let mut rate = 0.0;
                for k in 0..2 {
                    let a = |i: usize| at(0, i, k) * amp[0][i] + at(1, i, k) * amp[1][i];
                    let sig = a(k).norm_sqr();
                    let inf = a(1 - k).norm_sqr();
                    rate += (1.0 + sig / (inf + noise)).log2();
                }
                best = best.max(rate);
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// `(wmmse, grid)` sum rates on a random 2-AP, 2-UE instance with perfect
/// equivalent channels.
pub fn wmmse_vs_grid(seed: u64) -> Result<(f64, f64)> {
    let cfg = SystemConfig { m: 2, n: 2, k: 2, n_t: 1, ..SystemConfig::desk() };
    let params = LinkParams::from_config(&cfg);
    let mut rng = stream_rng(seed, Stream::Sample, 8);
    let beta = random_beta::<f64>(&mut rng, 2, 2, -110.0, -95.0);
    let ch = ChannelSet::with_association(&cfg, beta, Association::full(2, 2), seed)?;
    let x = PilotAssignment::orthogonal(2);
    let state = subframe_state(&ch, &x, 2.0, 0, &params)?;
    let w = wmmse_power(&state.g, &ch.assoc, params.p_max, params.noise_ue, WmmseOptions::default())?;
    let wr = sum_rate(&state.g, &ch.assoc, &w.power, params.noise_ue);
    Ok((wr, grid_search_2x2(&state.g, params.p_max, params.noise_ue, 0.01)))
}

/// `(tabu, oracle)` net SE under equal power on a random `M = 2, N = 2,
/// K = 4` instance, tabu started from DSATUR.
pub fn tabu_vs_oracle(seed: u64) -> Result<(f64, f64)> {
    let cfg = SystemConfig { m: 2, n: 2, k: 4, n_t: 2, ..SystemConfig::desk() };
    let params = LinkParams::from_config(&cfg);
    let (_, ch) = ChannelSet::<f64>::generate(&cfg, seed)?;
    let graph = InterferenceGraph::from_beta(&ch.beta);
    let x0 = dsatur_assign(&graph, graph.mean_weight(), Some(&ch.assoc));
    let tabu = tabu_refine(&ch, &x0.labels()?, &params, TabuOptions::for_ues(cfg.k))?;
    let oracle = exhaustive_oracle(&ch, &params, PowerRule::Equal)?;
    Ok((tabu.objective, oracle.objective))
}

/// Largest relative gap between the relaxed net SE at a random binary
/// assignment and the simulator, over all subframes of one desk frame.
pub fn relaxation_gap(seed: u64) -> Result<f64> {
    let cfg = SystemConfig::desk();
    let params = LinkParams::from_config(&cfg);
    let (_, ch) = ChannelSet::<f64>::generate(&cfg, seed)?;
    let mut rng = stream_rng(seed, Stream::Sample, 9);
    let labels: Vec<usize> = (0..cfg.k).map(|_| rng.random_range(0..cfg.k)).collect();
    let x = PilotAssignment::from_labels(&labels, cfg.k)?;
    let mut p = equal_power(&ch.assoc, params.p_max);
    for v in p.as_mut_slice() {
        *v *= rng.random_range(0.2..1.0);
    }
    let eq = |_: usize, _: &SubframeState<f64>| Ok(p.clone());
    let sim = evaluate_frame(&ch, &x, x.psi(), &params, eq)?;
    let frame = SoftFrame::new(&ch, &params);
    let mut worst = 0.0f64;
    for t in 0..cfg.n_t {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::matrix(cfg.k, cfg.k, x.matrix().as_slice().to_vec())?);
        let tau = soft_tau(&mut g, xv, false);
        let chans = soft_channels(&mut g, &frame, xv, tau, t, &params)?;
        let pv = g.constant(Tensor::matrix(cfg.m, cfg.k, p.as_slice().to_vec())?);
        let eta = soft_net_se(&mut g, &chans.true_re, &chans.true_im, pv, tau, &params)?;
        let (a, b) = (g.value(eta).item(), sim.per_subframe[t]);
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    Ok(worst)
}

/// Normwise relative error between tape and central-difference gradients
/// of the training loss with respect to every trainable parameter of a
/// width-1 DTS policy on `M = 2, K = 2, N = 1, N_T = 1`.
pub fn end_to_end_gradient_error(seed: u64) -> Result<f64> {
    let system = SystemConfig { m: 2, n: 1, k: 2, n_t: 1, ..SystemConfig::desk() };
    let mut cfg = TrainConfig::new(system.clone());
    cfg.seed = seed;
    let params = LinkParams::from_config(&system);
    let mut policy = Policy::<f64>::new(&cfg, true)?;
    if let Policy::Dts { pilot, power } = &mut policy {
        let mut pc = cfg.gnn(Variant::DtsPilot);
        pc.widths = vec![1, 1];
        let mut wc = cfg.gnn(Variant::DtsPower);
        wc.widths = vec![1, 1];
        *pilot = PilotGnn::new(pc, seed)?;
        *power = PowerGnn::new(wc, seed)?;
        power.params.set_slot_base(pilot.params.len());
    }
    let samples: Vec<ChannelSet<f64>> =
        (0..2).map(|i| ChannelSet::generate(&system, derive_seed(seed, Stream::Sample, i)).map(|(_, c)| c)).collect::<Result<_>>()?;
    let batch: Vec<&ChannelSet<f64>> = samples.iter().collect();
    let lambdas: Vec<Grid<f64>> = (0..2).map(|i| random_lambda(&mut stream_rng(seed, Stream::Features, i), 2, 2)).collect();
    let loss_of = |p: &Policy<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = batch_loss(&mut g, p, &batch, Some(&lambdas), &params, 0.2, BnMode::Train)?;
        Ok(out.loss_value)
    };
    let mut g = Graph::new();
    let out = batch_loss(&mut g, &policy, &batch, Some(&lambdas), &params, 0.2, BnMode::Train)?;
    let grads = g.backward(out.loss)?;
    let Policy::Dts { pilot, power } = &policy else { unreachable!("built as DTS") };
    let analytic_sets = [pilot.params.grads(&g, &grads), power.params.grads(&g, &grads)];
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let h = 1e-6;
    for (set, grads) in analytic_sets.iter().enumerate() {
        let count = if set == 0 { pilot.params.len() } else { power.params.len() };
        for id in 0..count {
            let trainable = if set == 0 { pilot.params.get(id).trainable } else { power.params.get(id).trainable };
            if !trainable {
                continue;
            }
            let len = if set == 0 { pilot.params.value(id).len() } else { power.params.value(id).len() };
            for j in 0..len {
                let shifted = |delta: f64| -> Result<f64> {
                    let mut p = policy.clone();
                    if let Policy::Dts { pilot, power } = &mut p {
                        let ps = if set == 0 { &mut pilot.params } else { &mut power.params };
                        ps.value_mut(id).data_mut()[j] += delta;
                    }
                    loss_of(&p)
                };
                numeric.push((shifted(h)? - shifted(-h)?) / (2.0 * h));
                analytic.push(grads[id].as_ref().map_or(0.0, |t| t.data()[j]));
            }
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Worst constraint violations over `trials` random forward passes:
/// `(max per-AP power excess over P_max, max |column sum - 1|)`; the
/// column check covers soft outputs and their discretization.
pub fn constraint_violations(seed: u64, trials: usize) -> Result<(f64, f64)> {
    let results: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<(f64, f64)> {
            let mut rng = stream_rng(seed, Stream::Sample, 10_000 + trial as u64);
            let (m, k) = (rng.random_range(1..=4), rng.random_range(1..=6));
            let p_max = rng.random_range(0.01..2.0);
            let mut power_excess = f64::NEG_INFINITY;
            let mut col_err = 0.0f64;
            let assoc = random_association(&mut rng, m, k);
            let check_power = |p: &Grid<f64>, excess: &mut f64| {
                for a in 0..m {
                    *excess = excess.max(p.row(a).iter().sum::<f64>() - p_max);
                }
            };
            if trial % 2 == 0 {
                let mut model = PowerGnn::<f64>::new(GnnConfig::new(Variant::DtsPower, -110.0), trial as u64)?;
                randomize(&mut model.params, &mut rng);
                let g = random_equivalent(&mut rng, &assoc);
                let p = model.infer(&build_power_graph(&[&g], &[&assoc], 1e5)?, p_max)?;
                check_power(&p[0], &mut power_excess);
            } else {
                let mut model = PilotGnn::<f64>::new(GnnConfig::new(Variant::Sts, -110.0), trial as u64)?;
                randomize(&mut model.params, &mut rng);
                let beta = random_beta(&mut rng, m, k, -140.0, -80.0);
                let lam = [random_lambda(&mut rng, k, k)];
                let (x, p) = model.infer(&build_pilot_graph(&[&beta], &[&assoc], Some(&lam), k, -110.0)?, p_max)?;
                if let Some(p) = p {
                    check_power(&p[0], &mut power_excess);
                }
                let bin = discretize(&x[0]);
                for c in 0..k {
                    col_err = col_err.max((x[0].column(c).iter().sum::<f64>() - 1.0).abs());
                    col_err = col_err.max((bin.matrix().column(c).iter().sum::<f64>() - 1.0).abs());
                }
            }
            Ok((power_excess, col_err))
        })
        .collect::<Result<_>>()?;
    Ok(results.iter().fold((f64::NEG_INFINITY, 0.0), |acc, r| (acc.0.max(r.0), acc.1.max(r.1))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(PropertyCheck { name: name.to_string(), passed, detail });
    }
}

/// Sizes of the property suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSize {
    pub equivariance: u64,
    pub degeneracy: u64,
    pub op_seeds: u64,
    pub constraints: usize,
    pub relaxation: u64,
    pub oracle: u64,
    pub wmmse: u64,
    pub nmse_draws: usize,
}

impl Default for SuiteSize {
    fn default() -> Self {
        Self { equivariance: 100, degeneracy: 100, op_seeds: 5, constraints: 1000, relaxation: 100, oracle: 20, wmmse: 5, nmse_draws: 10_000 }
    }
}

/// Runs the invariants of every module; `seed` offsets all draws.
pub fn run_property_suite(seed: u64, size: SuiteSize) -> Result<PropertyReport> {
    let mut report = PropertyReport { checks: Vec::new() };
    let seeds = |n: u64| (0..n).map(move |i| seed.wrapping_mul(1_000_003).wrapping_add(i));

    let worst = |f: &(dyn Fn(u64) -> Result<f64> + Sync), n: u64| -> Result<f64> {
        let errs: Vec<f64> = seeds(n).collect::<Vec<_>>().into_par_iter().map(f).collect::<Result<_>>()?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    };
    let e = worst(&power_equivariance_error, size.equivariance)?;
    report.push("equivariance dts_power", e < 1e-6, format!("max abs diff {e:.3e}"));
    let e = worst(&|s| pilot_equivariance_error(Variant::DtsPilot, s), size.equivariance)?;
    report.push("equivariance dts_pilot", e < 1e-6, format!("max abs diff {e:.3e}"));
    let e = worst(&|s| pilot_equivariance_error(Variant::Sts, s), size.equivariance)?;
    report.push("equivariance sts", e < 1e-6, format!("max abs diff {e:.3e}"));

    let draws: Vec<u64> = seeds(size.degeneracy).collect();
    for (variant, label) in [(Variant::DtsPilot, "dts_pilot"), (Variant::Sts, "sts")] {
        let off = draws.par_iter().map(|&s| degeneracy(variant, false, s)).collect::<Result<Vec<_>>>()?;
        let tied = off.iter().filter(|d| d.uniform && d.duplicates_tied).count();
        report.push(&format!("fe off: uniform and tied columns {label}"), tied == off.len(), format!("{tied}/{} draws", off.len()));
        let on = draws.par_iter().map(|&s| degeneracy(variant, true, s)).collect::<Result<Vec<_>>>()?;
        let broken = on.iter().filter(|d| !d.uniform && !d.duplicates_tied).count();
        let need = (on.len() * 99).div_ceil(100);
        report.push(&format!("fe on: degeneracies vanish {label}"), broken >= need, format!("{broken}/{} draws, need {need}", on.len()));
    }

    let mut op_worst = 0.0f64;
    let mut op_name = "";
    for s in seeds(size.op_seeds) {
        for (name, err) in op_suite(s)? {
            if err > op_worst {
                op_worst = err;
                op_name = name;
            }
        }
    }
    report.push("gradient check: ops", op_worst < 1e-4, format!("worst {op_worst:.3e} ({op_name})"));
    let e = end_to_end_gradient_error(seed)?;
    report.push("gradient check: end-to-end loss", e < 1e-3, format!("relative error {e:.3e}"));

    let (excess, col) = constraint_violations(seed, size.constraints)?;
    report.push("power budget", excess <= 1e-9, format!("max excess {excess:.3e} W"));
    report.push("assignment column sums", col <= 1e-12, format!("max |sum - 1| {col:.3e}"));

    let e = worst(&relaxation_gap, size.relaxation)?;
    report.push("relaxation consistency", e <= 1e-12, format!("max relative gap {e:.3e}"));

    let pairs = seeds(size.oracle).collect::<Vec<_>>().into_par_iter().map(tabu_vs_oracle).collect::<Result<Vec<_>>>()?;
    let gap = pairs.iter().map(|(t, o)| (o - t) / o).fold(0.0, f64::max);
    report.push("tabu vs oracle", gap <= 0.02, format!("max gap {:.3}%", gap * 100.0));
    let pairs = seeds(size.wmmse).map(wmmse_vs_grid).collect::<Result<Vec<_>>>()?;
    let gap = pairs.iter().map(|(w, g)| (g - w) / g).fold(0.0, f64::max);
    report.push("wmmse vs grid search", gap <= 0.01, format!("max gap {:.3}%", gap * 100.0));

    let pairs = nmse_monte_carlo(seed, size.nmse_draws)?;
    let dev = pairs.iter().map(|(mc, cf)| ((mc - cf) / cf).abs()).fold(0.0, f64::max);
    report.push("nmse closed form", dev <= 0.02, format!("max relative deviation {:.3}%", dev * 100.0));
    Ok(report)
}

//! Property harnesses shared by the test suites and `eval properties`:
//! permutation equivariance and the feature-enhancement degeneracies.

use num_complex::Complex;
use rand::Rng;

use crate::autodiff::ParamSet;
use crate::error::Result;
use crate::gnn::graphs::{build_pilot_graph, build_power_graph};
use crate::gnn::model::{GnnConfig, PilotGnn, PowerGnn, Variant};
use crate::linalg::Grid;
use crate::pilot::PermutationSpec;
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::sim::{random_beta, Association, EquivalentChannels};

const RHO_DB: f64 = -110.0;

/// Random association in which every UE has at least one serving AP.
pub fn random_association(rng: &mut StreamRng, m: usize, k: usize) -> Association {
    let mut grid = Grid::from_fn(m, k, |_, _| rng.random_bool(0.6));
    for u in 0..k {
        if (0..m).all(|a| !grid[(a, u)]) {
            let a = rng.random_range(0..m);
            grid.as_mut_slice()[a * k + u] = true;
        }
    }
    Association::new(grid).expect("every UE served")
}

/// Random equivalent channels, zero where `i` is not served by `m`.
pub fn random_equivalent(rng: &mut StreamRng, assoc: &Association) -> EquivalentChannels<f64> {
    let (m, k) = (assoc.m(), assoc.k());
    let mut g = EquivalentChannels::zeros(m, k);
    for a in 0..m {
        for i in assoc.served_by(a) {
            for u in 0..k {
                let z = Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-5;
                g.set(a, i, u, z);
            }
        }
    }
    g
}

pub fn random_lambda(rng: &mut StreamRng, g: usize, k: usize) -> Grid<f64> {
    Grid::from_fn(g, k, |_, _| rng.random::<f64>())
}

/// Perturbs every parameter, BN buffers included (variances stay positive).
pub fn randomize(params: &mut ParamSet<f64>, rng: &mut StreamRng) {
    let ids: Vec<usize> = (0..params.len()).collect();
    for id in ids {
        let is_var = params.get(id).name.ends_with("_var");
        for v in params.value_mut(id).data_mut() {
            *v = if is_var { rng.random_range(0.5..2.0) } else { *v + rng.random_range(-0.5..0.5) };
        }
    }
}

fn max_abs_diff(a: &Grid<f64>, b: &Grid<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation from `p(perm(inputs)) = perm(p(inputs))` for the
/// power GNN on one random draw.
pub fn power_equivariance_error(seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, Stream::Sample, 0);
    let (m, k) = (rng.random_range(1..=4), rng.random_range(2..=6));
    let mut model = PowerGnn::<f64>::new(GnnConfig::new(Variant::DtsPower, RHO_DB), seed)?;
    randomize(&mut model.params, &mut rng);
    let assoc = random_association(&mut rng, m, k);
    let g = random_equivalent(&mut rng, &assoc);
    let perm = PermutationSpec::random(m, k, k, &mut rng);
    let scale = model.config.channel_scale();
    let base = model.infer(&build_power_graph(&[&g], &[&assoc], scale)?, 1.0)?;
    let (gp, ap) = (perm.permute_equivalent(&g)?, perm.permute_assoc(&assoc)?);
    let moved = model.infer(&build_power_graph(&[&gp], &[&ap], scale)?, 1.0)?;
    Ok(max_abs_diff(&moved[0], &perm.permute_ap_ue(&base[0])?))
}

/// Same check for DTS-Pilot (assignment only) or STS (assignment and
/// power), with independent UE, AP and PS permutations.
pub fn pilot_equivariance_error(variant: Variant, seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, Stream::Sample, 1);
    let (m, k) = (rng.random_range(1..=4), rng.random_range(2..=6));
    let mut cfg = GnnConfig::new(variant, RHO_DB);
    cfg.attention = rng.random_bool(0.8);
    let mut model = PilotGnn::<f64>::new(cfg, seed)?;
    randomize(&mut model.params, &mut rng);
    let beta = random_beta(&mut rng, m, k, -140.0, -80.0);
    let assoc = random_association(&mut rng, m, k);
    let lambda = random_lambda(&mut rng, k, k);
    let perm = PermutationSpec::random(m, k, k, &mut rng);
    let (x, p) = model.infer(&build_pilot_graph(&[&beta], &[&assoc], Some(std::slice::from_ref(&lambda)), k, RHO_DB)?, 1.0)?;
    let (bp, ap, lp) = (perm.permute_ap_ue(&beta)?, perm.permute_assoc(&assoc)?, perm.permute_ps_ue(&lambda)?);
    let (xm, pm) = model.infer(&build_pilot_graph(&[&bp], &[&ap], Some(std::slice::from_ref(&lp)), k, RHO_DB)?, 1.0)?;
    let mut err = max_abs_diff(&xm[0], &perm.permute_ps_ue(&x[0])?);
    if let (Some(p), Some(pm)) = (p, pm) {
        err = err.max(max_abs_diff(&pm[0], &perm.permute_ap_ue(&p[0])?));
    }
    Ok(err)
}

/// Outcome of the degeneracy checks on one random draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Degeneracy {
    /// Every output column is exactly `1/K`.
    pub uniform: bool,
    /// Two UEs with duplicated `(beta, A)` columns get bit-identical
    /// pilot columns.
    pub duplicates_tied: bool,
    /// Their STS power columns are bit-identical (AP-UE edges never see
    /// PS-UE features, so this holds with or without enhancement).
    pub power_tied: Option<bool>,
}

/// Runs a random-weight pilot model on an instance whose UEs 0 and 1 share
/// their `(beta, A)` columns, with or without random PS-UE features.
pub fn degeneracy(variant: Variant, feature_enhancement: bool, seed: u64) -> Result<Degeneracy> {
    let mut rng = stream_rng(seed, Stream::Sample, 2);
    let (m, k) = (rng.random_range(1..=4), rng.random_range(2..=6));
    let mut cfg = GnnConfig::new(variant, RHO_DB);
    cfg.feature_enhancement = feature_enhancement;
    let mut model = PilotGnn::<f64>::new(cfg, seed)?;
    randomize(&mut model.params, &mut rng);
    let mut beta = random_beta(&mut rng, m, k, -140.0, -80.0);
    let mut assoc = random_association(&mut rng, m, k);
    for a in 0..m {
        beta.as_mut_slice()[a * k + 1] = beta[(a, 0)];
        assoc.0.as_mut_slice()[a * k + 1] = assoc.get(a, 0);
    }
    let lambda = feature_enhancement.then(|| vec![random_lambda(&mut rng, k, k)]);
    let graph = build_pilot_graph(&[&beta], &[&assoc], lambda.as_deref(), k, RHO_DB)?;
    let (x, p) = model.infer(&graph, 1.0)?;
    let x = &x[0];
    let inv = 1.0 / k as f64;
    let uniform = x.as_slice().iter().all(|&v| v == inv);
    let duplicates_tied = (0..k).all(|g| x[(g, 0)] == x[(g, 1)]);
    let power_tied = p.map(|p| (0..m).all(|a| p[0][(a, 0)] == p[0][(a, 1)]));
    Ok(Degeneracy { uniform, duplicates_tied, power_tied })
}

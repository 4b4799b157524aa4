//! Uplink pilot observation and local MMSE channel estimation.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::pilot::{AssignmentMode, PilotAssignment};
use crate::scalar::Scalar;
use crate::sim::channel::{ChannelSet, LinkParams};
use crate::sim::config::EstimatorMode;

/// Per-AP, per-UE length-`N` vectors stored `[m][k][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApUeVectors<T> {
    m: usize,
    k: usize,
    n: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ApUeVectors<T> {
    pub fn zeros(m: usize, k: usize, n: usize) -> Self {
        Self { m, k, n, data: vec![Complex::new(T::zero(), T::zero()); m * k * n] }
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> &[Complex<T>] {
        let o = (m * self.k + k) * self.n;
        &self.data[o..o + self.n]
    }

    #[inline]
    pub fn get_mut(&mut self, m: usize, k: usize) -> &mut [Complex<T>] {
        let o = (m * self.k + k) * self.n;
        &mut self.data[o..o + self.n]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.m, self.k, self.n)
    }
}

/// Received (despread) pilot signals `y_mk`.
pub type PilotObservation<T> = ApUeVectors<T>;

/// Local channel estimates; entries for unassociated pairs are zero.
pub type ChannelEstimates<T> = ApUeVectors<T>;

fn check_tau_p<T: Scalar>(x: &PilotAssignment<T>, tau_p: T) -> Result<()> {
    if !(tau_p > T::zero()) {
        return Err(Error::Constraint(format!("pilot length must be positive, got {tau_p}")));
    }
    if x.mode() == AssignmentMode::Binary {
        let used = x.psi();
        let rows = T::from_usize_lossy(x.num_sequences());
        if tau_p != used && tau_p != rows {
            return Err(Error::Constraint(format!(
                "pilot length {tau_p} matches neither the {used} used sequences nor the {rows} available"
            )));
        }
    }
    Ok(())
}

/// Noise slot of sequence `g`: the UE with the largest weight on it, ties
/// to the lowest index. Independent of how sequences are labeled, and
/// shared by all UEs on the sequence.
pub fn noise_slot<T: Scalar>(x: &Grid<T>, g: usize) -> Option<usize> {
    let row = x.row(g);
    let mut best: Option<usize> = None;
    for (i, &v) in row.iter().enumerate() {
        if v > T::zero() && best.is_none_or(|b| v > row[b]) {
            best = Some(i);
        }
    }
    best
}

/// `y_mk = sum_i (x_k^T x_i) sqrt(p tau_p beta_mi) h_mi + n_mk` where the
/// noise is the despread noise of UE `k`'s sequence.
pub fn received_pilot<T: Scalar>(
    x: &PilotAssignment<T>,
    ch: &ChannelSet<T>,
    t: usize,
    tau_p: T,
    params: &LinkParams<T>,
) -> Result<PilotObservation<T>> {
    check_tau_p(x, tau_p)?;
    let (m_aps, k_ues, n) = (ch.m(), ch.k(), ch.n());
    if x.num_ues() != k_ues {
        return Err(Error::Shape(format!("assignment has {} UEs, channel {}", x.num_ues(), k_ues)));
    }
    let c = x.contamination();
    let xm = x.matrix();
    let amp = (params.p_ul * tau_p).sqrt();
    let mut y = ApUeVectors::zeros(m_aps, k_ues, n);
    for m in 0..m_aps {
        for k in 0..k_ues {
            let out = y.get_mut(m, k);
            for i in 0..k_ues {
                let w = c[(k, i)];
                if w == T::zero() {
                    continue;
                }
                let s = w * amp * ch.beta[(m, i)].sqrt();
                for (o, h) in out.iter_mut().zip(ch.h(t, m, i)) {
                    *o += h * s;
                }
            }
            for g in 0..x.num_sequences() {
                let w = xm[(g, k)];
                if w == T::zero() {
                    continue;
                }
                let slot = noise_slot(xm, g).expect("row has a nonzero entry");
                for (o, z) in out.iter_mut().zip(ch.pilot_noise(t, m, slot)) {
                    *o += z * w;
                }
            }
        }
    }
    Ok(y)
}

/// MMSE estimates of the local channels `sqrt(beta_mk) h_mk`, `k in A_m`,
/// for a diagonal correlation `R_mk = diag(r_mk)` given per antenna.
pub fn mmse_estimate_diag<T: Scalar>(
    y: &PilotObservation<T>,
    x: &PilotAssignment<T>,
    corr: &dyn Fn(usize, usize, usize) -> T,
    local: &dyn Fn(usize, usize) -> bool,
    tau_p: T,
    params: &LinkParams<T>,
) -> ChannelEstimates<T> {
    let (m_aps, k_ues, n) = y.dims();
    let c = x.contamination();
    let mut est = ApUeVectors::zeros(m_aps, k_ues, n);
    for m in 0..m_aps {
        for k in 0..k_ues {
            if !local(m, k) {
                continue;
            }
            let out = est.get_mut(m, k);
            for a in 0..n {
                let gram: T = (0..k_ues).map(|i| c[(k, i)] * corr(m, i, a)).sum();
                let coef = match params.estimator {
                    EstimatorMode::Consistent => {
                        (params.p_ul * tau_p).sqrt() * corr(m, k, a) / (tau_p * params.p_ul * gram + params.noise_ap)
                    }
                    EstimatorMode::Verbatim => {
                        params.p_ul.sqrt() * corr(m, k, a) / (params.p_ul * gram + params.noise_ap)
                    }
                };
                out[a] = y.get(m, k)[a] * coef;
            }
        }
    }
    est
}

/// MMSE estimates with `R_mk = beta_mk I_N` for every associated pair.
pub fn mmse_estimate<T: Scalar>(
    y: &PilotObservation<T>,
    x: &PilotAssignment<T>,
    ch: &ChannelSet<T>,
    tau_p: T,
    params: &LinkParams<T>,
) -> ChannelEstimates<T> {
    let beta = &ch.beta;
    mmse_estimate_diag(y, x, &|m, k, _| beta[(m, k)], &|m, k| ch.assoc.get(m, k), tau_p, params)
}

/// Normalized MSE of the estimate of `sqrt(beta_mk) h_mk` for a binary
/// assignment. With the pilot-length-consistent estimator the uplink power
/// enters as `p tau_p`; at `tau_p = 1` (or in verbatim mode) this is
/// `1 - beta_mk^2 / (sum_j (x_k^T x_j) beta_mk beta_mj + sigma^2 beta_mk / p)`.
pub fn nmse<T: Scalar>(x: &PilotAssignment<T>, beta: &Grid<T>, m: usize, k: usize, tau_p: T, params: &LinkParams<T>) -> T {
    let c = x.contamination();
    let p_eff = match params.estimator {
        EstimatorMode::Consistent => params.p_ul * tau_p,
        EstimatorMode::Verbatim => params.p_ul,
    };
    let b = beta[(m, k)];
    let denom: T = (0..x.num_ues()).map(|j| c[(k, j)] * b * beta[(m, j)]).sum::<T>() + params.noise_ap * b / p_eff;
    T::one() - b * b / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::sim::channel::random_beta;
    use crate::sim::config::SystemConfig;

    fn setup(k: usize, seed: u64) -> (SystemConfig, ChannelSet<f64>, LinkParams<f64>) {
        let cfg = SystemConfig { m: 2, n: 3, k, n_t: 2, ..SystemConfig::desk() };
        let mut rng = stream_rng(seed, Stream::Sample, 0);
        let beta = random_beta(&mut rng, cfg.m, cfg.k, -115.0, -95.0);
        let ch = ChannelSet::from_beta(&cfg, beta, seed).unwrap();
        let params = LinkParams::from_config(&cfg);
        (cfg, ch, params)
    }

    #[test]
    fn single_ue_noiseless_observation() {
        let (_, mut ch, params) = setup(1, 1);
        ch.silence_pilot_noise();
        let x = PilotAssignment::orthogonal(1);
        let y = received_pilot(&x, &ch, 0, 1.0, &params).unwrap();
        for m in 0..2 {
            let s = (params.p_ul * ch.beta[(m, 0)]).sqrt();
            for (a, h) in y.get(m, 0).iter().zip(ch.h(0, m, 0)) {
                assert!((a - h * s).norm() < 1e-18);
            }
        }
    }

    #[test]
    fn orthogonal_pilots_isolate_each_ue() {
        let (_, ch, params) = setup(3, 2);
        let x = PilotAssignment::orthogonal(3);
        let y = received_pilot(&x, &ch, 1, 3.0, &params).unwrap();
        for m in 0..2 {
            for k in 0..3 {
                let s = (params.p_ul * 3.0 * ch.beta[(m, k)]).sqrt();
                for a in 0..3 {
                    let expect = ch.h(1, m, k)[a] * s + ch.pilot_noise(1, m, k)[a];
                    assert!((y.get(m, k)[a] - expect).norm() < 1e-18);
                }
            }
        }
    }

    #[test]
    fn shared_sequence_superposes_channels() {
        let (_, ch, params) = setup(2, 3);
        let x = PilotAssignment::from_labels(&[0, 0], 2).unwrap();
        let y = received_pilot(&x, &ch, 0, 1.0, &params).unwrap();
        let m = 1;
        for a in 0..3 {
            let expect = ch.h(0, m, 0)[a] * (params.p_ul * ch.beta[(m, 0)]).sqrt()
                + ch.h(0, m, 1)[a] * (params.p_ul * ch.beta[(m, 1)]).sqrt()
                + ch.pilot_noise(0, m, 0)[a];
            assert!((y.get(m, 0)[a] - expect).norm() < 1e-18);
            assert_eq!(y.get(m, 0)[a], y.get(m, 1)[a]);
        }
    }

    #[test]
    fn inconsistent_pilot_length_is_rejected() {
        let (_, ch, params) = setup(2, 3);
        let x = PilotAssignment::from_labels(&[0, 0], 2).unwrap();
        assert!(received_pilot(&x, &ch, 0, 3.0, &params).is_err());
        // fixed-length use: tau_p equals the number of rows
        assert!(received_pilot(&x, &ch, 0, 2.0, &params).is_ok());
    }

    #[test]
    fn noiseless_uncontaminated_estimate_is_exact() {
        let (_, mut ch, mut params) = setup(3, 4);
        ch.silence_pilot_noise();
        params.noise_ap = 0.0;
        let x = PilotAssignment::orthogonal(3);
        let y = received_pilot(&x, &ch, 0, 3.0, &params).unwrap();
        let est = mmse_estimate(&y, &x, &ch, 3.0, &params);
        for m in 0..2 {
            for k in 0..3 {
                if !ch.assoc.get(m, k) {
                    assert!(est.get(m, k).iter().all(|z| z.norm() == 0.0));
                    continue;
                }
                let s = ch.beta[(m, k)].sqrt();
                for (e, h) in est.get(m, k).iter().zip(ch.h(0, m, k)) {
                    assert!((e - h * s).norm() < 1e-12 * s);
                }
            }
        }
    }

    #[test]
    fn vanishing_uplink_power_gives_prior_mean() {
        let (_, ch, mut params) = setup(2, 5);
        params.p_ul = 1e-30;
        let x = PilotAssignment::orthogonal(2);
        let y = received_pilot(&x, &ch, 0, 2.0, &params).unwrap();
        let est = mmse_estimate(&y, &x, &ch, 2.0, &params);
        for m in 0..2 {
            for k in 0..2 {
                let s = ch.beta[(m, k)].sqrt();
                assert!(est.get(m, k).iter().all(|z| z.norm() < 1e-9 * s));
            }
        }
    }

    #[test]
    fn nmse_limits() {
        let (_, ch, mut params) = setup(3, 6);
        let x = PilotAssignment::orthogonal(3);
        params.noise_ap = 1e-40;
        assert!(nmse(&x, &ch.beta, 0, 1, 3.0, &params) < 1e-12);
        params.noise_ap = 1e-12;
        let mut beta = ch.beta.clone();
        beta[(0, 1)] = 1e-30;
        assert!(nmse(&x, &beta, 0, 1, 3.0, &params) > 1.0 - 1e-9);
    }

    #[test]
    fn contamination_strictly_increases_nmse() {
        for seed in 0..20 {
            let (_, ch, params) = setup(3, 100 + seed);
            let alone = PilotAssignment::from_labels(&[0, 1, 2], 3).unwrap();
            let shared = PilotAssignment::from_labels(&[0, 0, 2], 3).unwrap();
            for m in 0..2 {
                let a = nmse(&alone, &ch.beta, m, 0, 1.0, &params);
                let b = nmse(&shared, &ch.beta, m, 0, 1.0, &params);
                assert!(b > a, "seed {seed}: {b} <= {a}");
                assert!((0.0..1.0).contains(&a) && (0.0..1.0).contains(&b));
            }
        }
    }
}

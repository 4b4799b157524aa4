//! SINR, per-subframe net spectral efficiency and the frame average.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::scalar::Scalar;
use crate::sim::beamforming::EquivalentChannels;
use crate::sim::channel::{Association, LinkParams};

/// Relative slack allowed on the per-AP power budget.
pub const POWER_TOL: f64 = 1e-9;

pub fn check_power<T: Scalar>(p: &Grid<T>, assoc: &Association, p_max: T) -> Result<()> {
    if p.rows() != assoc.m() || p.cols() != assoc.k() {
        return Err(Error::Shape("power matrix does not match association".into()));
    }
    if p.as_slice().iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
        return Err(Error::Input("powers must be finite and nonnegative".into()));
    }
    for m in 0..assoc.m() {
        let total: T = assoc.served_by(m).into_iter().map(|k| p[(m, k)]).sum();
        if total.as_f64() > p_max.as_f64() * (1.0 + POWER_TOL) {
            return Err(Error::Constraint(format!("AP {m} transmits {total} > {p_max}")));
        }
    }
    Ok(())
}

/// Per-UE SINR and the pilot-overhead-discounted sum rate of one subframe.
pub fn sinr_and_net_se<T: Scalar>(
    g: &EquivalentChannels<T>,
    p: &Grid<T>,
    assoc: &Association,
    tau_p: T,
    params: &LinkParams<T>,
) -> Result<(Vec<T>, T)> {
    let tau_c = T::from_usize_lossy(params.tau_c);
    if tau_p > tau_c {
        return Err(Error::Domain(format!("pilot length {tau_p} exceeds coherence length {tau_c}")));
    }
    check_power(p, assoc, params.p_max)?;
    let k_ues = assoc.k();
    let serving: Vec<Vec<usize>> = (0..k_ues).map(|k| assoc.serving(k)).collect();
    // a[i][k] = sum_{m in S_i} sqrt(p_mi) g_{m_i k}
    let zero = Complex::new(T::zero(), T::zero());
    let mut a = vec![zero; k_ues * k_ues];
    for i in 0..k_ues {
        for &m in &serving[i] {
            let amp = p[(m, i)].sqrt();
            for k in 0..k_ues {
                a[i * k_ues + k] += g.get(m, i, k) * amp;
            }
        }
    }
    let mut gammas = Vec::with_capacity(k_ues);
    let mut rate = T::zero();
    for k in 0..k_ues {
        let signal = a[k * k_ues + k].norm_sqr();
        let interference: T = (0..k_ues).filter(|&i| i != k).map(|i| a[i * k_ues + k].norm_sqr()).sum();
        let gamma = signal / (interference + params.noise_ue);
        rate += (T::one() + gamma).log2();
        gammas.push(gamma);
    }
    Ok((gammas, (T::one() - tau_p / tau_c) * rate))
}

/// Frame average of per-subframe net-SE values.
pub fn avg_net_se<T: Scalar>(per_subframe: &[T]) -> Result<T> {
    if per_subframe.is_empty() {
        return Err(Error::Input("no subframes to average".into()));
    }
    Ok(per_subframe.iter().copied().sum::<T>() / T::from_usize_lossy(per_subframe.len()))
}

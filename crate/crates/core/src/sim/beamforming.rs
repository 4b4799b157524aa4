//! Distributed RZF beamforming and the equivalent (post-beamforming)
//! channel coefficients.

use num_complex::Complex;

use crate::error::Result;
use crate::linalg::{cholesky, cholesky_solve, hdot, norm};
use crate::scalar::Scalar;
use crate::sim::channel::{Association, ChannelSet, LinkParams};
use crate::sim::estimation::{ApUeVectors, ChannelEstimates};

/// Unit-norm beamformers `v_{m_k}`, `k in A_m`; other slots are zero.
pub type BeamformingSet<T> = ApUeVectors<T>;

/// Each AP inverts `sum_{i in A_m} h_mi h_mi^H + (sum_{j notin A_m} beta_mj
/// + sigma_UE^2 / p_ul) I` against its local estimates and normalizes.
pub fn rzf_beamforming<T: Scalar>(
    est: &ChannelEstimates<T>,
    ch: &ChannelSet<T>,
    params: &LinkParams<T>,
) -> Result<BeamformingSet<T>> {
    let (m_aps, k_ues, n) = est.dims();
    let zero = Complex::new(T::zero(), T::zero());
    let mut out = ApUeVectors::zeros(m_aps, k_ues, n);
    for m in 0..m_aps {
        let local = ch.assoc.served_by(m);
        let reg: T = (0..k_ues).filter(|k| !ch.assoc.get(m, *k)).map(|k| ch.beta[(m, k)]).sum::<T>()
            + params.noise_ue / params.p_ul;
        let mut gram = vec![zero; n * n];
        for &i in &local {
            let h = est.get(m, i);
            for r in 0..n {
                for c in 0..n {
                    gram[r * n + c] += h[r] * h[c].conj();
                }
            }
        }
        for d in 0..n {
            gram[d * n + d] += Complex::new(reg, T::zero());
        }
        let l = cholesky(&gram, n)?;
        for &k in &local {
            let w = cholesky_solve(&l, n, est.get(m, k));
            let nw = norm(&w);
            let v = out.get_mut(m, k);
            if nw > T::zero() {
                for (o, z) in v.iter_mut().zip(&w) {
                    *o = z / nw;
                }
            } else {
                v[0] = Complex::new(T::one(), T::zero());
            }
        }
    }
    Ok(out)
}

/// Complex coefficients `g[m][i][k]`: from the antenna AP `m` dedicates to
/// UE `i` towards UE `k`. Zero whenever `i` is not served by `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannels<T> {
    m: usize,
    k: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> EquivalentChannels<T> {
    pub fn zeros(m: usize, k: usize) -> Self {
        Self { m, k, data: vec![Complex::new(T::zero(), T::zero()); m * k * k] }
    }

    #[inline]
    pub fn get(&self, m: usize, i: usize, k: usize) -> Complex<T> {
        self.data[(m * self.k + i) * self.k + k]
    }

    #[inline]
    pub fn set(&mut self, m: usize, i: usize, k: usize, v: Complex<T>) {
        self.data[(m * self.k + i) * self.k + k] = v;
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// True equivalent channels `(sqrt(beta_mk) h_mk)^H v_{m_i}` in subframe `t`.
pub fn true_equivalent_channels<T: Scalar>(
    ch: &ChannelSet<T>,
    bf: &BeamformingSet<T>,
    t: usize,
) -> EquivalentChannels<T> {
    let (m_aps, k_ues) = (ch.m(), ch.k());
    let mut g = EquivalentChannels::zeros(m_aps, k_ues);
    for m in 0..m_aps {
        for i in ch.assoc.served_by(m) {
            for k in 0..k_ues {
                let v = hdot(ch.h(t, m, k), bf.get(m, i)) * ch.beta[(m, k)].sqrt();
                g.set(m, i, k, v);
            }
        }
    }
    g
}

/// Estimated equivalent channels available at the CU: `h_hat_mk^H v_{m_i}`
/// for local pairs, `sqrt(beta_mk)` towards unassociated UEs, zero for
/// antennas that do not exist.
pub fn estimated_equivalent_channels<T: Scalar>(
    est: &ChannelEstimates<T>,
    bf: &BeamformingSet<T>,
    beta: &crate::linalg::Grid<T>,
    assoc: &Association,
) -> EquivalentChannels<T> {
    let (m_aps, k_ues) = (assoc.m(), assoc.k());
    let mut g = EquivalentChannels::zeros(m_aps, k_ues);
    for m in 0..m_aps {
        for i in assoc.served_by(m) {
            for k in 0..k_ues {
                let v = if assoc.get(m, k) {
                    hdot(est.get(m, k), bf.get(m, i))
                } else {
                    Complex::new(beta[(m, k)].sqrt(), T::zero())
                };
                g.set(m, i, k, v);
            }
        }
    }
    g
}

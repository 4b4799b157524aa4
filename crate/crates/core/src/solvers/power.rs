//! Power allocation: equal split and per-AP-constrained WMMSE.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::scalar::Scalar;
use crate::sim::{Association, EquivalentChannels};

/// `p_mk = P_max / |A_m|` on served pairs.
pub fn equal_power<T: Scalar>(assoc: &Association, p_max: T) -> Grid<T> {
    let counts: Vec<usize> = (0..assoc.m()).map(|m| assoc.served_by(m).len()).collect();
    Grid::from_fn(assoc.m(), assoc.k(), |m, k| {
        if assoc.get(m, k) {
            p_max / T::from_usize_lossy(counts[m])
        } else {
            T::zero()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmseOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        Self { tol: 1e-5, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseResult<T> {
    pub power: Grid<T>,
    /// Sum rate `sum_k log2(1 + gamma_k)` after each iteration.
    pub history: Vec<T>,
}

struct Links<'a, T> {
    g: &'a EquivalentChannels<T>,
    assoc: &'a Association,
    noise: T,
}

impl<T: Scalar> Links<'_, T> {
    /// `a[i][k] = sum_{m in S_i} q_mi g_{m i k}`.
    fn combine(&self, q: &Grid<T>) -> Vec<Complex<T>> {
        let k = self.assoc.k();
        let mut a = vec![Complex::new(T::zero(), T::zero()); k * k];
        for m in 0..self.assoc.m() {
            for i in self.assoc.served_by(m) {
                for r in 0..k {
                    a[i * k + r] += self.g.get(m, i, r) * q[(m, i)];
                }
            }
        }
        a
    }

    fn sum_rate(&self, q: &Grid<T>) -> T {
        let k = self.assoc.k();
        let a = self.combine(q);
        (0..k)
            .map(|r| {
                let s = a[r * k + r].norm_sqr();
                let total: T = (0..k).map(|i| a[i * k + r].norm_sqr()).sum();
                (T::one() + s / (total - s + self.noise)).log2()
            })
            .sum()
    }
}

/// Smallest `mu >= 0` with `sum_i (b_i / (a_i + mu))^2 <= budget`.
fn water_level<T: Scalar>(a: &[T], b: &[T], budget: T) -> T {
    let used = |mu: T| -> T {
        a.iter()
            .zip(b)
            .map(|(&ai, &bi)| {
                let d = ai + mu;
                if bi == T::zero() {
                    T::zero()
                } else {
                    (bi / d) * (bi / d)
                }
            })
            .sum()
    };
    if a.iter().zip(b).all(|(&ai, &bi)| ai > T::zero() || bi == T::zero()) && used(T::zero()) <= budget {
        return T::zero();
    }
    let mut lo = T::zero();
    let mut hi = (b.iter().map(|&x| x * x).sum::<T>() / budget).sqrt();
    for _ in 0..200 {
        let mid = (lo + hi) * T::of(0.5);
        if used(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn wmmse_from<T: Scalar>(links: &Links<'_, T>, mut q: Grid<T>, p_max: T, opts: WmmseOptions) -> WmmseResult<T> {
    let (m_aps, k_ues) = (links.assoc.m(), links.assoc.k());
    let mut history = vec![links.sum_rate(&q)];
    for _ in 0..opts.max_iter {
        let a = links.combine(&q);
        // receivers and MSE weights
        let mut u = Vec::with_capacity(k_ues);
        let mut w = Vec::with_capacity(k_ues);
        for r in 0..k_ues {
            let total: T = (0..k_ues).map(|i| a[i * k_ues + r].norm_sqr()).sum::<T>() + links.noise;
            let ur = a[r * k_ues + r].conj() / total;
            let mse = T::one() - a[r * k_ues + r].norm_sqr() / total;
            u.push(ur);
            w.push(T::one() / mse.max(T::epsilon()));
        }
        let wu: Vec<T> = (0..k_ues).map(|r| w[r] * u[r].norm_sqr()).collect();
        let mut a = a;
        for m in 0..m_aps {
            let served = links.assoc.served_by(m);
            if served.is_empty() {
                continue;
            }
            let mut coef_a = Vec::with_capacity(served.len());
            let mut coef_b = Vec::with_capacity(served.len());
            for &i in &served {
                let mut ca = T::zero();
                let mut cb = w[i] * (u[i] * links.g.get(m, i, i)).re;
                for r in 0..k_ues {
                    let gmir = links.g.get(m, i, r);
                    let rest = a[i * k_ues + r] - gmir * q[(m, i)];
                    ca += wu[r] * gmir.norm_sqr();
                    cb -= wu[r] * (gmir.conj() * rest).re;
                }
                coef_a.push(ca);
                coef_b.push(cb.max(T::zero()));
            }
            let mu = water_level(&coef_a, &coef_b, p_max);
            for (idx, &i) in served.iter().enumerate() {
                let denom = coef_a[idx] + mu;
                let new_q = if coef_b[idx] == T::zero() || denom == T::zero() { T::zero() } else { coef_b[idx] / denom };
                let delta = new_q - q[(m, i)];
                for r in 0..k_ues {
                    a[i * k_ues + r] += links.g.get(m, i, r) * delta;
                }
                q.as_mut_slice()[m * k_ues + i] = new_q;
            }
        }
        let rate = links.sum_rate(&q);
        let prev = *history.last().expect("history is nonempty");
        history.push(rate);
        if (rate - prev).abs().as_f64() < opts.tol {
            break;
        }
    }
    // clip rounding so the budget holds exactly
    for m in 0..m_aps {
        let total: T = (0..k_ues).map(|k| q[(m, k)] * q[(m, k)]).sum();
        if total > p_max {
            let s = (p_max / total).sqrt();
            for k in 0..k_ues {
                q.as_mut_slice()[m * k_ues + k] *= s;
            }
        }
    }
    WmmseResult { power: q.map(|&v| v * v), history }
}

/// Block-coordinate WMMSE on amplitudes `q_mk = sqrt(p_mk)` over the
/// equivalent scalar links. Starts from equal power and from each AP
/// pointing all power at its strongest served UE; keeps the best run.
pub fn wmmse_power<T: Scalar>(
    g: &EquivalentChannels<T>,
    assoc: &Association,
    p_max: T,
    noise: T,
    opts: WmmseOptions,
) -> Result<WmmseResult<T>> {
    if !g.is_finite() {
        return Err(Error::Input("equivalent channels contain non-finite entries".into()));
    }
    if g.m() != assoc.m() || g.k() != assoc.k() {
        return Err(Error::Shape("equivalent channels do not match association".into()));
    }
    let links = Links { g, assoc, noise };
    let equal = equal_power(assoc, p_max).map(|&p| p.sqrt());
    let greedy = Grid::from_fn(assoc.m(), assoc.k(), |m, k| {
        let best = assoc
            .served_by(m)
            .into_iter()
            .max_by(|&a, &b| g.get(m, a, a).norm_sqr().partial_cmp(&g.get(m, b, b).norm_sqr()).expect("finite"));
        if best == Some(k) {
            p_max.sqrt()
        } else {
            T::zero()
        }
    });
    let runs = [wmmse_from(&links, equal, p_max, opts), wmmse_from(&links, greedy, p_max, opts)];
    let best = runs
        .into_iter()
        .max_by(|a, b| links.sum_rate(&a.power.map(|&p| p.sqrt())).partial_cmp(&links.sum_rate(&b.power.map(|&p| p.sqrt()))).expect("finite"))
        .expect("two runs");
    Ok(best)
}

/// Sum rate `sum_k log2(1 + gamma_k)` for powers `p` on the given links.
pub fn sum_rate<T: Scalar>(g: &EquivalentChannels<T>, assoc: &Association, p: &Grid<T>, noise: T) -> T {
    Links { g, assoc, noise }.sum_rate(&p.map(|&v| v.sqrt()))
}

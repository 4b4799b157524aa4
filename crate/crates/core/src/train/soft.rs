//! Differentiable net-SE for a soft pilot assignment: contamination
//! `x_k^T x_i` becomes the soft column inner product, the pilot length is
//! the soft `psi(X)`, and estimation, RZF beamforming and the rate chain
//! are replayed on the tape. At binary `X` it matches the simulator.

use std::sync::Arc;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::scalar::Scalar;
use crate::sim::{noise_slot, ChannelSet, LinkParams};

/// Per-frame constants of one sample, laid out for the tape.
#[derive(Debug, Clone)]
pub struct SoftFrame<T> {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub n_t: usize,
    /// `sqrt(beta_mi) h_mi` as `[K, M*N]` (AP `m` owns columns
    /// `m*N..(m+1)*N`), real and imaginary parts, per subframe.
    h_re: Vec<Tensor<T>>,
    h_im: Vec<Tensor<T>>,
    /// Pilot noise indexed by slot, `[K, M*N]`, per subframe.
    noise_re: Vec<Tensor<T>>,
    noise_im: Vec<Tensor<T>>,
    /// `beta^T`, `[K, M]`.
    beta_t: Tensor<T>,
    /// `A^T` as 0/1, `[K, M]`.
    assoc_t: Tensor<T>,
    /// `[M, M*N]` block expansion of per-AP coefficients to antennas.
    expand: Tensor<T>,
    /// RZF regularizer per AP.
    reg: Vec<T>,
    /// `sqrt(beta_mk)` towards unassociated `k` on antennas of served `i`,
    /// as `[K(k), K(i)]` per AP.
    unassoc: Vec<Tensor<T>>,
}

impl<T: Scalar> SoftFrame<T> {
    pub fn new(ch: &ChannelSet<T>, params: &LinkParams<T>) -> Self {
        let (m_aps, k_ues, n, n_t) = (ch.m(), ch.k(), ch.n(), ch.n_t());
        let cols = m_aps * n;
        let mut h_re = Vec::with_capacity(n_t);
        let mut h_im = Vec::with_capacity(n_t);
        let mut noise_re = Vec::with_capacity(n_t);
        let mut noise_im = Vec::with_capacity(n_t);
        for t in 0..n_t {
            let h = |u: usize, c: usize| ch.h(t, c / n, u)[c % n] * ch.beta[(c / n, u)].sqrt();
            h_re.push(Tensor::from_fn(k_ues, cols, |u, c| h(u, c).re));
            h_im.push(Tensor::from_fn(k_ues, cols, |u, c| h(u, c).im));
            noise_re.push(Tensor::from_fn(k_ues, cols, |s, c| ch.pilot_noise(t, c / n, s)[c % n].re));
            noise_im.push(Tensor::from_fn(k_ues, cols, |s, c| ch.pilot_noise(t, c / n, s)[c % n].im));
        }
        let on = |m: usize, u: usize| if ch.assoc.get(m, u) { T::one() } else { T::zero() };
        let reg = (0..m_aps)
            .map(|m| {
                (0..k_ues).filter(|&u| !ch.assoc.get(m, u)).map(|u| ch.beta[(m, u)]).sum::<T>() + params.noise_ue / params.p_ul
            })
            .collect();
        let unassoc = (0..m_aps)
            .map(|m| Tensor::from_fn(k_ues, k_ues, |u, i| ch.beta[(m, u)].sqrt() * (T::one() - on(m, u)) * on(m, i)))
            .collect();
        Self {
            m: m_aps,
            k: k_ues,
            n,
            n_t,
            h_re,
            h_im,
            noise_re,
            noise_im,
            beta_t: Tensor::from_fn(k_ues, m_aps, |u, m| ch.beta[(m, u)]),
            assoc_t: Tensor::from_fn(k_ues, m_aps, |u, m| on(m, u)),
            expand: Tensor::from_fn(m_aps, cols, |m, c| if c / n == m { T::one() } else { T::zero() }),
            reg,
            unassoc,
        }
    }
}

/// Equivalent channels of one subframe as `[K(k), K(i)]` blocks per AP:
/// entry `(k, i)` of AP `m` is `g_{m i k}`.
#[derive(Debug, Clone)]
pub struct SoftChannels {
    pub est_re: Vec<Var>,
    pub est_im: Vec<Var>,
    pub true_re: Vec<Var>,
    pub true_im: Vec<Var>,
}

/// Soft pilot length: `psi(X) = sum_g (1 - prod_k (1 - x_gk))`, or the
/// number of rows when the length is fixed.
pub fn soft_tau<T: Scalar>(g: &mut Graph<T>, x: Var, fixed: bool) -> Var {
    let rows = g.shape(x).0;
    if fixed {
        return g.scalar(T::from_usize_lossy(rows));
    }
    let neg = g.neg(x);
    let comp = g.add_scalar(neg, T::one());
    let empty = g.prod_cols(comp);
    let used = g.sum(empty);
    let used = g.neg(used);
    g.add_scalar(used, T::from_usize_lossy(rows))
}

fn block<T: Scalar>(g: &mut Graph<T>, a: Var, start: usize, len: usize) -> Result<Var> {
    g.slice_cols(a, start, len)
}

fn identity<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
}

/// Estimation, RZF and equivalent channels of subframe `t` for the soft
/// assignment `x` (`[G, K]`) with pilot length `tau_p` (`[1, 1]`).
pub fn soft_channels<T: Scalar>(
    g: &mut Graph<T>,
    frame: &SoftFrame<T>,
    x: Var,
    tau_p: Var,
    t: usize,
    params: &LinkParams<T>,
) -> Result<SoftChannels> {
    let (rows, k_ues) = g.shape(x);
    if k_ues != frame.k || t >= frame.n_t {
        return Err(Error::Shape(format!("assignment has {k_ues} UEs for a {}-UE frame", frame.k)));
    }
    let n = frame.n;
    // noise of each sequence's slot, [G, M*N]
    let xv = Grid::from_vec(rows, k_ues, g.value(x).data().to_vec())?;
    let slots: Vec<usize> = (0..rows).map(|r| noise_slot(&xv, r).unwrap_or(0)).collect();
    let pick = |src: &Tensor<T>| Tensor::from_fn(rows, src.cols(), |r, c| src.at(slots[r], c));
    let nz_re = g.constant(pick(&frame.noise_re[t]));
    let nz_im = g.constant(pick(&frame.noise_im[t]));
    let h_re = g.constant(frame.h_re[t].clone());
    let h_im = g.constant(frame.h_im[t].clone());

    let xt = g.transpose(x);
    let c = g.matmul(xt, x)?;
    let p_tau = g.scale(tau_p, params.p_ul);
    let amp = g.sqrt(p_tau);
    // y = sqrt(p tau) C H + X^T N
    let mut y = Vec::with_capacity(2);
    for (h, nz) in [(h_re, nz_re), (h_im, nz_im)] {
        let ch = g.matmul(c, h)?;
        let ch = g.mul(ch, amp)?;
        let noise = g.matmul(xt, nz)?;
        y.push(g.add(ch, noise)?);
    }
    // coef_km = sqrt(p tau) beta_mk / (tau p sum_i C_ki beta_mi + sigma^2), masked
    let beta_t = g.constant(frame.beta_t.clone());
    let mask = g.constant(frame.assoc_t.clone());
    let cb = g.matmul(c, beta_t)?;
    let den = g.mul(cb, p_tau)?;
    let den = g.add_scalar(den, params.noise_ap);
    let num = g.mul(beta_t, amp)?;
    let coef = g.div(num, den)?;
    let coef = g.mul(coef, mask)?;
    let expand = g.constant(frame.expand.clone());
    let coef = g.matmul(coef, expand)?;
    let est_re = g.mul(coef, y[0])?;
    let est_im = g.mul(coef, y[1])?;

    let eye = g.constant(identity(2 * n));
    let tiny = T::min_positive_value();
    let mut out = SoftChannels { est_re: Vec::new(), est_im: Vec::new(), true_re: Vec::new(), true_im: Vec::new() };
    for m in 0..frame.m {
        let r = block(g, est_re, m * n, n)?;
        let s = block(g, est_im, m * n, n)?;
        let neg_s = g.neg(s);
        let z = g.concat_cols(&[r, s])?;
        let zp = g.concat_cols(&[neg_s, r])?;
        let zt = g.transpose(z);
        let zpt = g.transpose(zp);
        let gram = g.matmul(zt, z)?;
        let gram2 = g.matmul(zpt, zp)?;
        let gram = g.add(gram, gram2)?;
        let reg = g.scale(eye, frame.reg[m]);
        let gram = g.add(gram, reg)?;
        let w = g.solve(gram, zt)?;
        let w2 = g.square(w);
        let nrm = g.sum_rows(w2);
        let nrm = g.clamp_min(nrm, tiny);
        let nrm = g.sqrt(nrm);
        let v = g.div(w, nrm)?;

        let ere = g.matmul(z, v)?;
        let un = g.constant(frame.unassoc[m].clone());
        out.est_re.push(g.add(ere, un)?);
        out.est_im.push(g.matmul(zp, v)?);

        let hr = block(g, h_re, m * n, n)?;
        let hi = block(g, h_im, m * n, n)?;
        let neg_hi = g.neg(hi);
        let zh = g.concat_cols(&[hr, hi])?;
        let zhp = g.concat_cols(&[neg_hi, hr])?;
        out.true_re.push(g.matmul(zh, v)?);
        out.true_im.push(g.matmul(zhp, v)?);
    }
    Ok(out)
}

/// Net SE `relu(1 - tau_p/tau_c) sum_k log2(1 + gamma_k)` for the powers
/// `p` (`[M, K]`, zero off the association) over channels `re`, `im`.
pub fn soft_net_se<T: Scalar>(
    g: &mut Graph<T>,
    re: &[Var],
    im: &[Var],
    p: Var,
    tau_p: Var,
    params: &LinkParams<T>,
) -> Result<Var> {
    let (m_aps, k_ues) = g.shape(p);
    if re.len() != m_aps || im.len() != m_aps {
        return Err(Error::Shape("one channel block per AP expected".into()));
    }
    let amp = g.sqrt(p);
    let mut a_re: Option<Var> = None;
    let mut a_im: Option<Var> = None;
    for m in 0..m_aps {
        let row = g.gather_rows(amp, Arc::new(vec![m]))?;
        let r = g.mul(re[m], row)?;
        let i = g.mul(im[m], row)?;
        a_re = Some(match a_re {
            Some(acc) => g.add(acc, r)?,
            None => r,
        });
        a_im = Some(match a_im {
            Some(acc) => g.add(acc, i)?,
            None => i,
        });
    }
    let (a_re, a_im) = (a_re.expect("at least one AP"), a_im.expect("at least one AP"));
    let q_re = g.square(a_re);
    let q_im = g.square(a_im);
    let q = g.add(q_re, q_im)?;
    let eye = identity::<T>(k_ues);
    let off = eye.map(|v| T::one() - v);
    let eye = g.constant(eye);
    let off = g.constant(off);
    let sig = g.mul(q, eye)?;
    let sig = g.sum_cols(sig);
    let inf = g.mul(q, off)?;
    let inf = g.sum_cols(inf);
    let inf = g.add_scalar(inf, params.noise_ue);
    let gamma = g.div(sig, inf)?;
    let one_plus = g.add_scalar(gamma, T::one());
    let ln = g.ln(one_plus);
    let rate = g.sum(ln);
    let rate = g.scale(rate, T::of(1.0 / std::f64::consts::LN_2));
    let frac = g.scale(tau_p, T::one() / T::from_usize_lossy(params.tau_c));
    let neg = g.neg(frac);
    let factor = g.add_scalar(neg, T::one());
    let factor = g.relu(factor);
    g.mul(factor, rate)
}

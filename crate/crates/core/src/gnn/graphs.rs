//! Batched graph construction. A batch stacks disjoint graphs of several
//! samples; every index array addresses rows of the stacked edge matrices.

use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::scalar::Scalar;
use crate::sim::config::linear_to_db;
use crate::sim::{Association, EquivalentChannels};

type Idx = Arc<Vec<usize>>;

/// Index structure of the AP/UE/PS graph for `b` samples of equal size.
///
/// AP-UE edge `(s, m, k)` is row `(s*M + m)*K + k`; PS-UE edge `(s, g, k)`
/// is row `(s*G + g)*K + k`; attention score `c_jk` of sample `s` is row
/// `(s*K + j)*K + k`.
#[derive(Debug, Clone)]
pub struct PilotIndex {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub g: usize,
    /// AP-UE edge -> UE vertex `s*K + k`.
    pub ap_by_ue: Idx,
    /// AP-UE edge -> AP vertex `s*M + m`.
    pub ap_by_ap: Idx,
    /// PS-UE edge -> UE vertex `s*K + k`.
    pub ps_by_ue: Idx,
    /// PS-UE edge -> PS vertex `s*G + g`.
    pub ps_by_ps: Idx,
    /// `[c_jk, AP-UE (m, j), AP-UE (m, k)]` for every `m`.
    pub att_pairs: Arc<Vec<[usize; 3]>>,
    /// `[PS-UE (g, k), c_jk, PS-UE (g, j)]` for every `j`, ascending.
    pub att_apply: Arc<Vec<[usize; 3]>>,
    /// PS-UE edge `(g, k)` -> `c_kk`.
    pub att_self: Idx,
}

impl PilotIndex {
    pub fn new(batch: usize, m: usize, k: usize, g: usize) -> Self {
        let ap = |s: usize, a: usize, u: usize| (s * m + a) * k + u;
        let ps = |s: usize, q: usize, u: usize| (s * g + q) * k + u;
        let att = |s: usize, j: usize, u: usize| (s * k + j) * k + u;
        let mut ap_by_ue = Vec::with_capacity(batch * m * k);
        let mut ap_by_ap = Vec::with_capacity(batch * m * k);
        for s in 0..batch {
            for a in 0..m {
                for u in 0..k {
                    ap_by_ue.push(s * k + u);
                    ap_by_ap.push(s * m + a);
                }
            }
        }
        let mut ps_by_ue = Vec::with_capacity(batch * g * k);
        let mut ps_by_ps = Vec::with_capacity(batch * g * k);
        let mut att_self = Vec::with_capacity(batch * g * k);
        let mut att_apply = Vec::with_capacity(batch * g * k * k);
        for s in 0..batch {
            for q in 0..g {
                for u in 0..k {
                    ps_by_ue.push(s * k + u);
                    ps_by_ps.push(s * g + q);
                    att_self.push(att(s, u, u));
                    for j in 0..k {
                        att_apply.push([ps(s, q, u), att(s, j, u), ps(s, q, j)]);
                    }
                }
            }
        }
        let mut att_pairs = Vec::with_capacity(batch * k * k * m);
        for s in 0..batch {
            for j in 0..k {
                for u in 0..k {
                    for a in 0..m {
                        att_pairs.push([att(s, j, u), ap(s, a, j), ap(s, a, u)]);
                    }
                }
            }
        }
        Self {
            batch,
            m,
            k,
            g,
            ap_by_ue: Arc::new(ap_by_ue),
            ap_by_ap: Arc::new(ap_by_ap),
            ps_by_ue: Arc::new(ps_by_ue),
            ps_by_ps: Arc::new(ps_by_ps),
            att_pairs: Arc::new(att_pairs),
            att_apply: Arc::new(att_apply),
            att_self: Arc::new(att_self),
        }
    }

    pub fn num_ap_ue(&self) -> usize {
        self.batch * self.m * self.k
    }

    pub fn num_ps_ue(&self) -> usize {
        self.batch * self.g * self.k
    }

    pub fn num_att(&self) -> usize {
        self.batch * self.k * self.k
    }
}

/// Pilot graph of a batch with its edge features.
#[derive(Debug, Clone)]
pub struct PilotGraph<T> {
    pub index: PilotIndex,
    /// `[beta feature, a_mk]` per AP-UE edge.
    pub ap_ue: Tensor<T>,
    /// `lambda_gk` per PS-UE edge (zeros with feature enhancement off).
    pub ps_ue: Tensor<T>,
    /// `a_mk` per AP-UE edge, used by the power head.
    pub assoc: Tensor<T>,
}

/// LSF gain as an edge feature: dB relative to the association
/// threshold, divided by 10.
pub fn beta_feature<T: Scalar>(beta: T, rho_db: f64) -> T {
    T::of((linear_to_db(beta.as_f64()) - rho_db) / 10.0)
}

/// Builds the batched pilot graph. `lambda[s]` is `G x K`; `None`
/// disables feature enhancement.
pub fn build_pilot_graph<T: Scalar>(
    betas: &[&Grid<T>],
    assocs: &[&Association],
    lambda: Option<&[Grid<T>]>,
    g: usize,
    rho_db: f64,
) -> Result<PilotGraph<T>> {
    let batch = betas.len();
    if batch == 0 || assocs.len() != batch || lambda.is_some_and(|l| l.len() != batch) {
        return Err(Error::Shape("pilot graph batch parts disagree".into()));
    }
    let (m, k) = (betas[0].rows(), betas[0].cols());
    if betas.iter().any(|b| b.rows() != m || b.cols() != k) || assocs.iter().any(|a| a.m() != m || a.k() != k) {
        return Err(Error::Shape("samples in a batch must share (M, K)".into()));
    }
    let index = PilotIndex::new(batch, m, k, g);
    let mut ap_ue = Vec::with_capacity(index.num_ap_ue() * 2);
    let mut assoc = Vec::with_capacity(index.num_ap_ue());
    for s in 0..batch {
        for a in 0..m {
            for u in 0..k {
                let on = if assocs[s].get(a, u) { T::one() } else { T::zero() };
                ap_ue.push(beta_feature(betas[s][(a, u)], rho_db));
                ap_ue.push(on);
                assoc.push(on);
            }
        }
    }
    let mut ps_ue = Vec::with_capacity(index.num_ps_ue());
    for s in 0..batch {
        for q in 0..g {
            for u in 0..k {
                ps_ue.push(match lambda {
                    Some(l) => {
                        if l[s].rows() != g || l[s].cols() != k {
                            return Err(Error::Shape("lambda must be G x K".into()));
                        }
                        l[s][(q, u)]
                    }
                    None => T::zero(),
                });
            }
        }
    }
    Ok(PilotGraph {
        ap_ue: Tensor::matrix(index.num_ap_ue(), 2, ap_ue)?,
        ps_ue: Tensor::matrix(index.num_ps_ue(), 1, ps_ue)?,
        assoc: Tensor::column(assoc),
        index,
    })
}

/// Index structure of the AN/UE power graph for a batch of subframes.
///
/// SIG edges are listed per sample, `m`-major then `k`; the SIG row doubles
/// as the AN-vertex id. INF edges `(m, i, k)`, `i != k`, follow the same
/// order with `k` innermost.
#[derive(Debug, Clone)]
pub struct PowerIndex<T> {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    /// `(sample, m, k)` per SIG edge.
    pub sig: Vec<(usize, usize, usize)>,
    /// `(sample, m, i, k)` per INF edge.
    pub inf: Vec<(usize, usize, usize, usize)>,
    pub sig_ue: Idx,
    pub inf_an: Idx,
    pub inf_ue: Idx,
    /// SIG edge -> AP vertex `s*M + m`.
    pub sig_ap: Idx,
    /// `1/(M |A_m|)` per INF edge (its AN's AP).
    pub inf_ap_weight: Tensor<T>,
    /// `1/|S_k|` per SIG edge and per INF edge (of its UE).
    pub sig_serv_weight: Tensor<T>,
    pub inf_serv_weight: Tensor<T>,
}

impl<T: Scalar> PowerIndex<T> {
    pub fn new(assocs: &[&Association]) -> Result<Self> {
        let batch = assocs.len();
        if batch == 0 {
            return Err(Error::Shape("empty power-graph batch".into()));
        }
        let (m, k) = (assocs[0].m(), assocs[0].k());
        if assocs.iter().any(|a| a.m() != m || a.k() != k) {
            return Err(Error::Shape("samples in a batch must share (M, K)".into()));
        }
        let mut sig = Vec::new();
        let mut an_row = vec![usize::MAX; batch * m * k];
        for (s, a) in assocs.iter().enumerate() {
            for ap in 0..m {
                for u in a.served_by(ap) {
                    an_row[(s * m + ap) * k + u] = sig.len();
                    sig.push((s, ap, u));
                }
            }
        }
        let mut inf = Vec::new();
        for &(s, ap, i) in &sig {
            for u in 0..k {
                if u != i {
                    inf.push((s, ap, i, u));
                }
            }
        }
        let served: Vec<Vec<usize>> = assocs.iter().map(|a| (0..m).map(|ap| a.served_by(ap).len()).collect()).collect();
        let serving: Vec<Vec<usize>> = assocs.iter().map(|a| (0..k).map(|u| a.serving(u).len()).collect()).collect();
        let mf = T::from_usize_lossy(m);
        Ok(Self {
            batch,
            m,
            k,
            sig_ue: Arc::new(sig.iter().map(|&(s, _, u)| s * k + u).collect()),
            sig_ap: Arc::new(sig.iter().map(|&(s, ap, _)| s * m + ap).collect()),
            inf_an: Arc::new(inf.iter().map(|&(s, ap, i, _)| an_row[(s * m + ap) * k + i]).collect()),
            inf_ue: Arc::new(inf.iter().map(|&(s, _, _, u)| s * k + u).collect()),
            inf_ap_weight: Tensor::column(
                inf.iter().map(|&(s, ap, _, _)| T::one() / (mf * T::from_usize_lossy(served[s][ap]))).collect(),
            ),
            sig_serv_weight: Tensor::column(
                sig.iter().map(|&(s, _, u)| T::one() / T::from_usize_lossy(serving[s][u])).collect(),
            ),
            inf_serv_weight: Tensor::column(
                inf.iter().map(|&(s, _, _, u)| T::one() / T::from_usize_lossy(serving[s][u])).collect(),
            ),
            sig,
            inf,
        })
    }

    pub fn num_an(&self) -> usize {
        self.sig.len()
    }

    pub fn num_ue(&self) -> usize {
        self.batch * self.k
    }

    pub fn num_ap(&self) -> usize {
        self.batch * self.m
    }
}

/// Power graph with `[Re g, Im g] * scale` features.
#[derive(Debug, Clone)]
pub struct PowerGraph<T> {
    pub index: PowerIndex<T>,
    pub sig: Tensor<T>,
    pub inf: Tensor<T>,
}

pub fn build_power_graph<T: Scalar>(
    g_hat: &[&EquivalentChannels<T>],
    assocs: &[&Association],
    scale: T,
) -> Result<PowerGraph<T>> {
    if g_hat.len() != assocs.len() {
        return Err(Error::Shape("one association per subframe expected".into()));
    }
    let index = PowerIndex::new(assocs)?;
    let feat = |s: usize, ap: usize, i: usize, u: usize| {
        let z = g_hat[s].get(ap, i, u);
        [z.re * scale, z.im * scale]
    };
    let sig: Vec<T> = index.sig.iter().flat_map(|&(s, ap, u)| feat(s, ap, u, u)).collect();
    let inf: Vec<T> = index.inf.iter().flat_map(|&(s, ap, i, u)| feat(s, ap, i, u)).collect();
    Ok(PowerGraph {
        sig: Tensor::matrix(index.sig.len(), 2, sig)?,
        inf: Tensor::matrix(index.inf.len(), 2, inf)?,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_graph_edge_counts() {
        let one = Association::full(1, 1);
        let idx = PowerIndex::<f64>::new(&[&one]).unwrap();
        assert_eq!((idx.sig.len(), idx.inf.len()), (1, 0));
        let two = Association::full(1, 2);
        let idx = PowerIndex::<f64>::new(&[&two]).unwrap();
        assert_eq!((idx.sig.len(), idx.inf.len()), (2, 2));
    }

    #[test]
    fn power_graph_partition() {
        // AP0 serves UE0, UE1; AP1 serves UE1, UE2
        let a = Association::new(
            Grid::from_rows(vec![vec![true, true, false], vec![false, true, true]]).unwrap(),
        )
        .unwrap();
        let idx = PowerIndex::<f64>::new(&[&a]).unwrap();
        assert_eq!(idx.sig, vec![(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 2)]);
        // every AN reaches every UE: 4 ANs x 3 UEs = 12 edges
        assert_eq!(idx.sig.len() + idx.inf.len(), 12);
        assert!(idx.inf.iter().all(|&(_, _, i, k)| i != k));
        assert_eq!(idx.inf[1], (0, 0, 0, 2));
        assert_eq!(idx.inf_serv_weight.data()[1], 1.0);
        assert_eq!(idx.inf_serv_weight.data()[0], 0.5);
        assert_eq!(idx.sig_serv_weight.data()[1], 0.5);
        assert_eq!(idx.inf_ap_weight.data()[0], 0.25);
    }

    #[test]
    fn pilot_graph_counts_and_features() {
        let beta = Grid::filled(4, 3, 1e-9);
        let a = Association::full(4, 3);
        let l = Grid::from_fn(3, 3, |r, c| (r * 3 + c) as f64 / 10.0);
        let pg = build_pilot_graph(&[&beta], &[&a], Some(std::slice::from_ref(&l)), 3, -90.0).unwrap();
        assert_eq!(pg.ap_ue.rows(), 12);
        assert_eq!(pg.ps_ue.rows(), 9);
        assert!((pg.ap_ue.at(0, 0) - 0.0).abs() < 1e-12);
        assert_eq!(pg.ps_ue.at(5, 0), 0.5);
        let off = build_pilot_graph(&[&beta], &[&a], None, 3, -90.0).unwrap();
        assert!(off.ps_ue.data().iter().all(|&v| v == 0.0));
        let single = build_pilot_graph(&[&Grid::filled(1, 1, 1e-9)], &[&Association::full(1, 1)], None, 1, -90.0).unwrap();
        assert_eq!(single.ps_ue.rows(), 1);
    }
}

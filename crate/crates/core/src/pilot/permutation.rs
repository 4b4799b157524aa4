//! Reordering of APs, UEs and pilot sequences, used to check the
//! permutation properties of policies.
//!
//! A permutation `p` maps new position `i` to the old index `p[i]`; as a
//! matrix `Pi[p[j], j] = 1`, so `Pi^T B Pi'` has entries `B[p[i], p'[j]]`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::sim::{Association, EquivalentChannels};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &i in &map {
            if i >= map.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Input(format!("{map:?} is not a bijection")));
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random(n: usize, rng: &mut StreamRng) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Self(v)
    }

    /// Swaps positions `a` and `b` of the identity.
    pub fn swap(n: usize, a: usize, b: usize) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.swap(a, b);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn source(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &s) in self.0.iter().enumerate() {
            inv[s] = i;
        }
        Self(inv)
    }

    pub fn matrix<T: Scalar>(&self) -> Grid<T> {
        let n = self.len();
        Grid::from_fn(n, n, |r, c| if self.0[c] == r { T::one() } else { T::zero() })
    }
}

/// Joint reordering of UEs, APs and pilot sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSpec {
    pub pi_ue: Permutation,
    pub pi_ap: Permutation,
    pub pi_ps: Permutation,
}

impl PermutationSpec {
    pub fn identity(m: usize, k: usize, g: usize) -> Self {
        Self { pi_ue: Permutation::identity(k), pi_ap: Permutation::identity(m), pi_ps: Permutation::identity(g) }
    }

    pub fn random(m: usize, k: usize, g: usize, rng: &mut StreamRng) -> Self {
        Self {
            pi_ue: Permutation::random(k, rng),
            pi_ap: Permutation::random(m, rng),
            pi_ps: Permutation::random(g, rng),
        }
    }

    fn check(&self, rows: usize, cols: usize, row_perm: &Permutation, what: &str) -> Result<()> {
        if row_perm.len() != rows || self.pi_ue.len() != cols {
            return Err(Error::Shape(format!(
                "{what} is {rows}x{cols}, permutations are {}x{}",
                row_perm.len(),
                self.pi_ue.len()
            )));
        }
        Ok(())
    }

    /// `Pi_AP^T B Pi_UE` for any `M x K` array (LSF gains, powers).
    pub fn permute_ap_ue<E: Clone>(&self, b: &Grid<E>) -> Result<Grid<E>> {
        self.check(b.rows(), b.cols(), &self.pi_ap, "AP-UE matrix")?;
        Ok(Grid::from_fn(b.rows(), b.cols(), |m, k| b[(self.pi_ap.source(m), self.pi_ue.source(k))].clone()))
    }

    pub fn permute_assoc(&self, a: &Association) -> Result<Association> {
        Ok(Association(self.permute_ap_ue(&a.0)?))
    }

    /// `Pi_PS^T X Pi_UE` for a `G x K` pilot matrix.
    pub fn permute_ps_ue<E: Clone>(&self, x: &Grid<E>) -> Result<Grid<E>> {
        self.check(x.rows(), x.cols(), &self.pi_ps, "pilot matrix")?;
        Ok(Grid::from_fn(x.rows(), x.cols(), |g, k| x[(self.pi_ps.source(g), self.pi_ue.source(k))].clone()))
    }

    /// `Pi_UE^T G Omega_AN` on the equivalent channels.
    pub fn permute_equivalent<T: Scalar>(&self, g: &EquivalentChannels<T>) -> Result<EquivalentChannels<T>> {
        if g.m() != self.pi_ap.len() || g.k() != self.pi_ue.len() {
            return Err(Error::Shape("equivalent channels do not match permutation sizes".into()));
        }
        let mut out = EquivalentChannels::zeros(g.m(), g.k());
        for m in 0..g.m() {
            for i in 0..g.k() {
                for k in 0..g.k() {
                    out.set(m, i, k, g.get(self.pi_ap.source(m), self.pi_ue.source(i), self.pi_ue.source(k)));
                }
            }
        }
        Ok(out)
    }

    /// `Omega_AN = (I_M kron Pi_UE)(Pi_AP kron I_K)`, an `MK x MK` matrix.
    pub fn omega_an<T: Scalar>(&self) -> Grid<T> {
        let (m, k) = (self.pi_ap.len(), self.pi_ue.len());
        let left = kron(&Grid::from_fn(m, m, |r, c| if r == c { T::one() } else { T::zero() }), &self.pi_ue.matrix());
        let right = kron(&self.pi_ap.matrix(), &Grid::from_fn(k, k, |r, c| if r == c { T::one() } else { T::zero() }));
        matmul(&left, &right)
    }
}

pub fn kron<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> Grid<T> {
    Grid::from_fn(a.rows() * b.rows(), a.cols() * b.cols(), |r, c| {
        a[(r / b.rows(), c / b.cols())] * b[(r % b.rows(), c % b.cols())]
    })
}

pub fn matmul<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> Grid<T> {
    Grid::from_fn(a.rows(), b.cols(), |r, c| (0..a.cols()).map(|p| a[(r, p)] * b[(p, c)]).sum())
}

/// Row vector times matrix: `v^T Omega`.
pub fn vec_times<T: Scalar>(v: &[T], omega: &Grid<T>) -> Vec<T> {
    (0..omega.cols()).map(|c| v.iter().enumerate().map(|(r, &x)| x * omega[(r, c)]).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn identity_leaves_objects_unchanged() {
        let spec = PermutationSpec::identity(2, 3, 3);
        let b = Grid::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(spec.permute_ap_ue(&b).unwrap(), b);
        let x = Grid::from_fn(3, 3, |r, c| (r * 7 + c) as f64);
        assert_eq!(spec.permute_ps_ue(&x).unwrap(), x);
    }

    #[test]
    fn double_swap_is_identity() {
        let s = Permutation::swap(4, 1, 3);
        let spec = PermutationSpec { pi_ue: s.clone(), pi_ap: Permutation::swap(2, 0, 1), pi_ps: s };
        let x = Grid::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        let twice = spec.permute_ps_ue(&spec.permute_ps_ue(&x).unwrap()).unwrap();
        assert_eq!(twice, x);
    }

    #[test]
    fn antenna_reordering_example() {
        // swap both APs and both UEs: {1_1,1_2,2_1,2_2} -> {2_2,2_1,1_2,1_1}
        let spec = PermutationSpec {
            pi_ue: Permutation::swap(2, 0, 1),
            pi_ap: Permutation::swap(2, 0, 1),
            pi_ps: Permutation::identity(2),
        };
        let labels = [11.0, 12.0, 21.0, 22.0];
        let omega = spec.omega_an::<f64>();
        assert_eq!(vec_times(&labels, &omega), vec![22.0, 21.0, 12.0, 11.0]);
    }

    #[test]
    fn omega_matches_index_permutation() {
        let mut rng = stream_rng(3, Stream::Sample, 0);
        for _ in 0..10 {
            let spec = PermutationSpec::random(3, 4, 4, &mut rng);
            let p = Grid::from_fn(3, 4, |r, c| (r * 10 + c) as f64);
            let via_omega = vec_times(p.as_slice(), &spec.omega_an());
            assert_eq!(via_omega, spec.permute_ap_ue(&p).unwrap().into_vec());
        }
    }

    #[test]
    fn matrices_agree_with_index_form() {
        let mut rng = stream_rng(4, Stream::Sample, 0);
        let spec = PermutationSpec::random(3, 5, 5, &mut rng);
        let x = Grid::from_fn(5, 5, |r, c| (r * 5 + c) as f64);
        let via = matmul(&matmul(&spec.pi_ps.matrix::<f64>().transpose(), &x), &spec.pi_ue.matrix());
        assert_eq!(via, spec.permute_ps_ue(&x).unwrap());
    }

    #[test]
    fn non_bijection_rejected() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(PermutationSpec::identity(2, 3, 3).permute_ap_ue(&Grid::filled(3, 3, 0.0)).is_err());
    }
}

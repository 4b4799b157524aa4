//! LSF-similarity interference graph and DSATUR coloring into pilot sequences.

use crate::linalg::Grid;
use crate::pilot::PilotAssignment;
use crate::scalar::Scalar;
use crate::sim::Association;

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceGraph<T> {
    pub weights: Grid<T>,
}

impl<T: Scalar> InterferenceGraph<T> {
    /// `w_jk = (1/M) beta_j^T beta_k`, zero on the diagonal.
    pub fn from_beta(beta: &Grid<T>) -> Self {
        let (m, k) = (beta.rows(), beta.cols());
        let inv_m = T::one() / T::from_usize_lossy(m);
        let weights = Grid::from_fn(k, k, |a, b| {
            if a == b {
                T::zero()
            } else {
                (0..m).map(|r| beta[(r, a)] * beta[(r, b)]).sum::<T>() * inv_m
            }
        });
        Self { weights }
    }

    pub fn num_vertices(&self) -> usize {
        self.weights.rows()
    }

    /// Mean off-diagonal weight; the default hard-edge threshold.
    pub fn mean_weight(&self) -> T {
        let k = self.num_vertices();
        if k < 2 {
            return T::zero();
        }
        let total: T = self.weights.as_slice().iter().copied().sum();
        total / T::from_usize_lossy(k * (k - 1))
    }

    /// Hard edges: weight at or above `threshold`, or a shared serving AP.
    pub fn hard_edges(&self, threshold: T, assoc: Option<&Association>) -> Grid<bool> {
        let k = self.num_vertices();
        Grid::from_fn(k, k, |a, b| {
            a != b
                && (self.weights[(a, b)] >= threshold
                    || assoc.is_some_and(|s| (0..s.m()).any(|m| s.get(m, a) && s.get(m, b))))
        })
    }
}

/// DSATUR on an adjacency matrix; returns a color per vertex.
pub fn dsatur(adj: &Grid<bool>) -> Vec<usize> {
    let n = adj.rows();
    let degree: Vec<usize> = (0..n).map(|v| adj.row(v).iter().filter(|&&e| e).count()).collect();
    let mut color: Vec<Option<usize>> = vec![None; n];
    for _ in 0..n {
        let saturation = |v: usize| {
            let mut seen: Vec<usize> = (0..n).filter(|&u| adj[(v, u)]).filter_map(|u| color[u]).collect();
            seen.sort_unstable();
            seen.dedup();
            seen.len()
        };
        let v = (0..n)
            .filter(|&v| color[v].is_none())
            .max_by(|&a, &b| {
                (saturation(a), degree[a]).cmp(&(saturation(b), degree[b])).then(b.cmp(&a))
            })
            .expect("an uncolored vertex remains");
        let used: Vec<usize> = (0..n).filter(|&u| adj[(v, u)]).filter_map(|u| color[u]).collect();
        color[v] = Some((0..).find(|c| !used.contains(c)).expect("a free color exists"));
    }
    color.into_iter().map(|c| c.expect("all colored")).collect()
}

pub fn dsatur_assign<T: Scalar>(
    graph: &InterferenceGraph<T>,
    threshold: T,
    assoc: Option<&Association>,
) -> PilotAssignment<T> {
    let labels = dsatur(&graph.hard_edges(threshold, assoc));
    let k = graph.num_vertices();
    PilotAssignment::from_labels(&labels, k.max(1)).expect("at most K colors are used")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adjacency(n: usize, edges: &[(usize, usize)]) -> Grid<bool> {
        let mut g = Grid::filled(n, n, false);
        for &(a, b) in edges {
            g.as_mut_slice()[a * n + b] = true;
            g.as_mut_slice()[b * n + a] = true;
        }
        g
    }

    fn proper(adj: &Grid<bool>, c: &[usize]) -> bool {
        (0..adj.rows()).all(|a| (0..adj.rows()).all(|b| !adj[(a, b)] || c[a] != c[b]))
    }

    fn num_colors(c: &[usize]) -> usize {
        c.iter().max().map_or(0, |m| m + 1)
    }

    #[test]
    fn empty_graph_single_color() {
        let c = dsatur(&adjacency(5, &[]));
        assert_eq!(c, vec![0; 5]);
    }

    #[test]
    fn triangle_three_colors() {
        let adj = adjacency(3, &[(0, 1), (1, 2), (0, 2)]);
        let c = dsatur(&adj);
        assert!(proper(&adj, &c));
        assert_eq!(num_colors(&c), 3);
    }

    #[test]
    fn five_cycle_three_colors() {
        let adj = adjacency(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let c = dsatur(&adj);
        assert!(proper(&adj, &c));
        // odd cycle: chromatic number 3
        assert_eq!(num_colors(&c), 3);
    }

    #[test]
    fn bipartite_two_colors() {
        let adj = adjacency(6, &[(0, 3), (0, 4), (1, 4), (1, 5), (2, 5), (2, 3)]);
        let c = dsatur(&adj);
        assert!(proper(&adj, &c));
        assert_eq!(num_colors(&c), 2);
    }

    #[test]
    fn weights_symmetric_nonnegative() {
        let beta: Grid<f64> = Grid::from_rows(vec![vec![1.0, 2.0, 0.5], vec![0.1, 0.3, 4.0]]).unwrap();
        let g = InterferenceGraph::from_beta(&beta);
        for a in 0..3 {
            assert_eq!(g.weights[(a, a)], 0.0);
            for b in 0..3 {
                assert_eq!(g.weights[(a, b)], g.weights[(b, a)]);
                assert!(g.weights[(a, b)] >= 0.0);
            }
        }
        assert!((g.weights[(0, 1)] - (2.0 + 0.03) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn shared_ap_forces_distinct_colors() {
        let beta = Grid::filled(2, 3, 1e-9);
        let assoc = Association::new(Grid::from_rows(vec![vec![true, true, false], vec![false, false, true]]).unwrap())
            .unwrap();
        let g = InterferenceGraph::from_beta(&beta);
        let x = dsatur_assign(&g, 1.0, Some(&assoc));
        let l = x.labels().unwrap();
        assert_ne!(l[0], l[1]);
        assert_eq!(l[2], 0);
    }
}

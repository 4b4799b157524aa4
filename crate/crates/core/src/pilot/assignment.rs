//! Pilot assignment matrices, pilot-length derivation and discretization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentMode {
    Soft,
    Binary,
}

/// `G x K` pilot assignment: row `g` is a candidate pilot sequence, column
/// `k` a UE. Usually `G = K`; fixed-length ablations use `G = z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotAssignment<T> {
    x: Grid<T>,
    mode: AssignmentMode,
}

const COLUMN_TOL: f64 = 1e-9;

impl<T: Scalar> PilotAssignment<T> {
    pub fn soft(x: Grid<T>) -> Result<Self> {
        check_columns(&x)?;
        Ok(Self { x, mode: AssignmentMode::Soft })
    }

    pub fn binary(x: Grid<T>) -> Result<Self> {
        if x.as_slice().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::Constraint("binary assignment has non-0/1 entries".into()));
        }
        check_columns(&x)?;
        Ok(Self { x, mode: AssignmentMode::Binary })
    }

    /// Binary assignment from per-UE sequence labels.
    pub fn from_labels(labels: &[usize], num_sequences: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&g| g >= num_sequences) {
            return Err(Error::Constraint(format!("label {bad} out of range {num_sequences}")));
        }
        let x = Grid::from_fn(num_sequences, labels.len(), |g, k| if labels[k] == g { T::one() } else { T::zero() });
        Ok(Self { x, mode: AssignmentMode::Binary })
    }

    /// Every UE on its own sequence.
    pub fn orthogonal(k: usize) -> Self {
        Self::from_labels(&(0..k).collect::<Vec<_>>(), k).expect("identity labels are valid")
    }

    pub fn matrix(&self) -> &Grid<T> {
        &self.x
    }

    pub fn mode(&self) -> AssignmentMode {
        self.mode
    }

    pub fn num_sequences(&self) -> usize {
        self.x.rows()
    }

    pub fn num_ues(&self) -> usize {
        self.x.cols()
    }

    /// Sequence index of each UE (binary mode only).
    pub fn labels(&self) -> Result<Vec<usize>> {
        if self.mode != AssignmentMode::Binary {
            return Err(Error::Constraint("labels requested from a soft assignment".into()));
        }
        Ok((0..self.num_ues())
            .map(|k| (0..self.num_sequences()).find(|&g| self.x[(g, k)] == T::one()).expect("column has a one"))
            .collect())
    }

    /// Number of occupied sequences (soft-differentiable form).
    pub fn psi(&self) -> T {
        psi(&self.x)
    }

    /// Column inner products `x_k^T x_i`.
    pub fn contamination(&self) -> Grid<T> {
        let (g, k) = (self.num_sequences(), self.num_ues());
        Grid::from_fn(k, k, |a, b| (0..g).map(|r| self.x[(r, a)] * self.x[(r, b)]).sum())
    }

    pub fn compact(&self) -> Result<CompactAssignment> {
        compact(self)
    }

    pub fn to_json(&self) -> AssignmentJson {
        AssignmentJson { k: self.num_ues(), x: self.x.map(|v| v.as_f64()).to_rows() }
    }

    pub fn from_json(json: &AssignmentJson) -> Result<Self> {
        let x = Grid::from_rows(json.x.clone())?.map(|&v| T::of(v));
        if x.cols() != json.k {
            return Err(Error::Shape(format!("X has {} columns, K = {}", x.cols(), json.k)));
        }
        if x.as_slice().iter().all(|&v| v == T::zero() || v == T::one()) {
            Self::binary(x)
        } else {
            Self::soft(x)
        }
    }
}

fn check_columns<T: Scalar>(x: &Grid<T>) -> Result<()> {
    if x.as_slice().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::Constraint("assignment entries must lie in [0,1]".into()));
    }
    for k in 0..x.cols() {
        let s: T = (0..x.rows()).map(|g| x[(g, k)]).sum();
        if (s - T::one()).abs().as_f64() > COLUMN_TOL {
            return Err(Error::Constraint(format!("column {k} sums to {s}, expected 1")));
        }
    }
    Ok(())
}

/// `sum_g (1 - prod_k (1 - x_gk))`: the count of non-empty rows for binary
/// input and a smooth relaxation otherwise.
pub fn psi<T: Scalar>(x: &Grid<T>) -> T {
    (0..x.rows())
        .map(|g| T::one() - x.row(g).iter().fold(T::one(), |acc, &v| acc * (T::one() - v)))
        .sum()
}

/// Pilot length plus the `tau_p x K` matrix of used sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactAssignment {
    pub tau_p: usize,
    #[serde(rename = "X_o")]
    pub x_o: Vec<Vec<u8>>,
}

impl CompactAssignment {
    pub fn new(x_o: Vec<Vec<u8>>) -> Result<Self> {
        let tau_p = x_o.len();
        let k = x_o.first().map_or(0, Vec::len);
        if x_o.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("ragged X_o".into()));
        }
        if x_o.iter().any(|r| r.iter().all(|&v| v == 0)) {
            return Err(Error::Constraint("X_o has an all-zero row".into()));
        }
        for u in 0..k {
            if x_o.iter().map(|r| r[u] as usize).sum::<usize>() != 1 {
                return Err(Error::Constraint(format!("UE {u} does not have exactly one sequence")));
            }
        }
        Ok(Self { tau_p, x_o })
    }

    pub fn num_ues(&self) -> usize {
        self.x_o.first().map_or(0, Vec::len)
    }

    /// Pads back to a `rows x K` assignment with zero rows appended.
    pub fn expand<T: Scalar>(&self, rows: usize) -> Result<PilotAssignment<T>> {
        if rows < self.tau_p {
            return Err(Error::Shape(format!("cannot expand {} sequences into {rows} rows", self.tau_p)));
        }
        let k = self.num_ues();
        let x = Grid::from_fn(rows, k, |g, u| {
            if g < self.tau_p && self.x_o[g][u] == 1 {
                T::one()
            } else {
                T::zero()
            }
        });
        PilotAssignment::binary(x)
    }

    /// Per-UE index into the compact sequence list.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.num_ues()).map(|u| self.x_o.iter().position(|r| r[u] == 1).expect("valid X_o")).collect()
    }
}

/// Drops the unused rows of a binary assignment, keeping row order.
pub fn compact<T: Scalar>(x: &PilotAssignment<T>) -> Result<CompactAssignment> {
    if x.mode() != AssignmentMode::Binary {
        return Err(Error::Constraint("compact requires a binary assignment".into()));
    }
    let grid = x.matrix();
    for k in 0..grid.cols() {
        if (0..grid.rows()).all(|g| grid[(g, k)] == T::zero()) {
            return Err(Error::Constraint(format!("UE {k} has no sequence")));
        }
    }
    let x_o: Vec<Vec<u8>> = (0..grid.rows())
        .filter(|&g| grid.row(g).iter().any(|&v| v == T::one()))
        .map(|g| grid.row(g).iter().map(|&v| u8::from(v == T::one())).collect())
        .collect();
    CompactAssignment::new(x_o)
}

/// Column-wise argmax one-hot; ties go to the lowest sequence index.
pub fn discretize<T: Scalar>(soft: &Grid<T>) -> PilotAssignment<T> {
    let mut out = Grid::filled(soft.rows(), soft.cols(), T::zero());
    for k in 0..soft.cols() {
        let mut best = 0;
        for g in 1..soft.rows() {
            if soft[(g, k)] > soft[(best, k)] {
                best = g;
            }
        }
        out[(best, k)] = T::one();
    }
    PilotAssignment { x: out, mode: AssignmentMode::Binary }
}

/// JSON form `{"K": .., "X": [[..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentJson {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig2() -> PilotAssignment<f64> {
        PilotAssignment::binary(
            Grid::from_rows(vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn psi_of_example_matrix() {
        assert_eq!(fig2().psi(), 2.0);
        assert_eq!(PilotAssignment::<f64>::orthogonal(5).psi(), 5.0);
    }

    #[test]
    fn psi_soft_row_contribution() {
        let x = Grid::from_rows(vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 1.0]]).unwrap();
        // row 0: 1 - 0.5*0.5*1 = 0.75 ; row 1: 1 - 0.5*0.5*0 = 1
        assert!((psi::<f64>(&x) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn compact_example() {
        let c = fig2().compact().unwrap();
        assert_eq!(c.tau_p, 2);
        assert_eq!(c.x_o, vec![vec![1, 0, 1], vec![0, 1, 0]]);
        let i = PilotAssignment::<f64>::orthogonal(3).compact().unwrap();
        assert_eq!(i.x_o, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let shared = PilotAssignment::<f64>::from_labels(&[0, 0, 0, 0], 4).unwrap().compact().unwrap();
        assert_eq!(shared.tau_p, 1);
        assert_eq!(shared.x_o, vec![vec![1, 1, 1, 1]]);
    }

    #[test]
    fn compact_rejects_empty_column() {
        let x = Grid::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(PilotAssignment::binary(x).is_err());
    }

    #[test]
    fn discretize_cases() {
        let s = Grid::from_rows(vec![vec![0.2], vec![0.5], vec![0.3]]).unwrap();
        assert_eq!(discretize(&s).matrix().column(0), vec![0.0, 1.0, 0.0]);
        let tie = Grid::from_rows(vec![vec![0.5], vec![0.5], vec![0.0]]).unwrap();
        for _ in 0..3 {
            assert_eq!(discretize(&tie).matrix().column(0), vec![1.0, 0.0, 0.0]);
        }
        let b = fig2();
        assert_eq!(discretize(b.matrix()), b);
    }

    #[test]
    fn json_forms() {
        let x = fig2();
        let j = serde_json::to_string(&x.to_json()).unwrap();
        assert!(j.starts_with("{\"K\":3,\"X\":"));
        let back = PilotAssignment::<f64>::from_json(&serde_json::from_str(&j).unwrap()).unwrap();
        assert_eq!(back, x);
        let c = serde_json::to_string(&x.compact().unwrap()).unwrap();
        assert_eq!(c, "{\"tau_p\":2,\"X_o\":[[1,0,1],[0,1,0]]}");
    }

    fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, usize)> {
        (1usize..8).prop_flat_map(|k| (proptest::collection::vec(0..k, k), Just(k)))
    }

    proptest! {
        #[test]
        fn psi_counts_nonzero_rows((labels, k) in labels_strategy()) {
            let x = PilotAssignment::<f64>::from_labels(&labels, k).unwrap();
            let scan = (0..k).filter(|g| labels.contains(g)).count();
            prop_assert_eq!(x.psi(), scan as f64);
        }

        #[test]
        fn compact_then_expand_is_identity((labels, k) in labels_strategy()) {
            let x = PilotAssignment::<f64>::from_labels(&labels, k).unwrap();
            let c = x.compact().unwrap();
            let back = c.expand::<f64>(k).unwrap().compact().unwrap();
            prop_assert_eq!(back, c);
        }

        #[test]
        fn psi_nondecreasing_in_entries(raw in proptest::collection::vec(0.0f64..1.0, 12), idx in 0usize..12, bump in 0.0f64..1.0) {
            let x = Grid::from_vec(3, 4, raw).unwrap();
            let mut y = x.clone();
            let v = &mut y.as_mut_slice()[idx];
            *v = (*v + bump).min(1.0);
            prop_assert!(psi(&y) >= psi(&x) - 1e-15);
        }
    }
}

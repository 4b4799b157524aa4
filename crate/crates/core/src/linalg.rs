//! Dense row-major containers and the small complex solver used by the
//! beamforming stage.

use std::ops::{Index, IndexMut};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major 2-D array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<E> {
    rows: usize,
    cols: usize,
    data: Vec<E>,
}

impl<E: Clone> Grid<E> {
    pub fn filled(rows: usize, cols: usize, value: E) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }
}

impl<E> Grid<E> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<E>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} elements for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> E) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<E>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<E> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[E] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<F, O>(&self, f: F) -> Grid<O>
    where
        F: FnMut(&E) -> O,
    {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }
}

impl<E: Clone> Grid<E> {
    pub fn column(&self, c: usize) -> Vec<E> {
        (0..self.rows).map(|r| self[(r, c)].clone()).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<E>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Grid::from_fn(self.cols, self.rows, |r, c| self[(c, r)].clone())
    }
}

impl<E> Index<(usize, usize)> for Grid<E> {
    type Output = E;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &E {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<E> IndexMut<(usize, usize)> for Grid<E> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut E {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Hermitian inner product `a^H b`.
pub fn hdot<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}

pub fn norm<T: Scalar>(a: &[Complex<T>]) -> T {
    a.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

/// Lower-triangular Cholesky factor of a Hermitian positive definite matrix
/// stored row-major as `n x n`.
pub fn cholesky<T: Scalar>(a: &[Complex<T>], n: usize) -> Result<Vec<Complex<T>>> {
    let zero = Complex::new(T::zero(), T::zero());
    let mut l = vec![zero; n * n];
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for p in 0..j {
            d -= l[j * n + p].norm_sqr();
        }
        if !(d > T::zero()) {
            return Err(Error::Domain("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[j * n + j] = Complex::new(d, T::zero());
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p].conj();
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L L^H x = b` given the Cholesky factor `L`.
pub fn cholesky_solve<T: Scalar>(l: &[Complex<T>], n: usize, b: &[Complex<T>]) -> Vec<Complex<T>> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for p in 0..i {
            s -= l[i * n + p] * y[p];
        }
        y[i] = s / l[i * n + i].re;
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= l[p * n + i].conj() * y[p];
        }
        y[i] = s / l[i * n + i].re;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex<f64>;

    #[test]
    fn cholesky_solves_hermitian_system() {
        // A = B B^H + I for a fixed B
        let b = [C::new(1.0, 0.5), C::new(-0.3, 2.0), C::new(0.7, -1.1), C::new(0.2, 0.4)];
        let n = 2;
        let mut a = vec![C::new(0.0, 0.0); 4];
        for i in 0..n {
            for j in 0..n {
                let mut s = C::new(0.0, 0.0);
                for p in 0..n {
                    s += b[i * n + p] * b[j * n + p].conj();
                }
                a[i * n + j] = s + if i == j { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) };
            }
        }
        let rhs = [C::new(1.0, -1.0), C::new(0.5, 3.0)];
        let l = cholesky(&a, n).unwrap();
        let x = cholesky_solve(&l, n, &rhs);
        for i in 0..n {
            let mut s = C::new(0.0, 0.0);
            for j in 0..n {
                s += a[i * n + j] * x[j];
            }
            assert!((s - rhs[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [C::new(1.0, 0.0), C::new(2.0, 0.0), C::new(2.0, 0.0), C::new(1.0, 0.0)];
        assert!(cholesky(&a, 2).is_err());
    }
}

//! Tape of recorded operations and reverse-mode differentiation.

use std::sync::Arc;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower bound applied to logarithm inputs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    ClampMin(Var, T),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    SegmentSum(Var, Arc<Vec<usize>>),
    Bilinear(Var, Var, Arc<Vec<[usize; 3]>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>),
    ProdCols(Var),
    Solve { a: Var, b: Var, lu: Tensor<T>, piv: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, inv_std: Vec<T>, mode: BnMode },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (`n - 1` denominator), the convention used for
    /// running estimates.
    pub var_unbiased: Vec<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn bshape(a: &[usize], b: &[usize]) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    let (ar, ac) = (a[0], a[1..].iter().product());
    let (br, bc) = (b[0], b[1..].iter().product());
    match (dim(ar, br), dim(ac, bc)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

#[inline]
fn bidx<T: Scalar>(t: &Tensor<T>, r: usize, c: usize) -> T {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    t.at(rr, cc)
}

fn broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let (r, c) = bshape(a.shape(), b.shape())?;
    if a.rows() == r && a.cols() == c && b.rows() == r && b.cols() == c {
        return Ok(Tensor::matrix(r, c, a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
            .expect("same shape"));
    }
    Ok(Tensor::from_fn(r, c, |i, j| f(bidx(a, i, j), bidx(b, i, j))))
}

/// Sums a full-size gradient back down to a broadcast operand's shape.
fn reduce_to<T: Scalar>(g: Tensor<T>, rows: usize, cols: usize) -> Tensor<T> {
    if g.rows() == rows && g.cols() == cols {
        return g;
    }
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let rr = if rows == 1 { 0 } else { i };
            let cc = if cols == 1 { 0 } else { j };
            out.data_mut()[rr * cols + cc] += g.at(i, j);
        }
    }
    out
}

fn lu_factor<T: Scalar>(a: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let n = a.rows();
    let mut lu = a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| lu.at(i, k).abs().partial_cmp(&lu.at(j, k).abs()).expect("finite pivot candidates"))
            .expect("nonempty range");
        if lu.at(p, k) == T::zero() || !lu.at(p, k).is_finite() {
            return Err(Error::Domain("singular matrix in solve".into()));
        }
        if p != k {
            piv.swap(p, k);
            let d = lu.data_mut();
            for c in 0..n {
                d.swap(p * n + c, k * n + c);
            }
        }
        let pivot = lu.at(k, k);
        for i in k + 1..n {
            let f = lu.at(i, k) / pivot;
            let d = lu.data_mut();
            d[i * n + k] = f;
            for c in k + 1..n {
                let v = d[k * n + c];
                d[i * n + c] -= f * v;
            }
        }
    }
    Ok((lu, piv))
}

/// Solves `A X = B` (or `A^T X = B`) from a packed LU with row pivots.
fn lu_solve<T: Scalar>(lu: &Tensor<T>, piv: &[usize], b: &Tensor<T>, transpose: bool) -> Tensor<T> {
    let n = lu.rows();
    let m = b.cols();
    let mut x = Tensor::zeros(n, m);
    for col in 0..m {
        let mut y: Vec<T> = vec![T::zero(); n];
        if !transpose {
            // P A = L U  =>  L U x = P b
            for i in 0..n {
                let mut s = b.at(piv[i], col);
                for j in 0..i {
                    s -= lu.at(i, j) * y[j];
                }
                y[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for j in i + 1..n {
                    s -= lu.at(i, j) * y[j];
                }
                y[i] = s / lu.at(i, i);
            }
            for i in 0..n {
                x.data_mut()[i * m + col] = y[i];
            }
        } else {
            // A^T = U^T L^T P  =>  U^T z = b, L^T w = z, x = P^T w
            for i in 0..n {
                let mut s = b.at(i, col);
                for j in 0..i {
                    s -= lu.at(j, i) * y[j];
                }
                y[i] = s / lu.at(i, i);
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for j in i + 1..n {
                    s -= lu.at(j, i) * y[j];
                }
                y[i] = s;
            }
            for i in 0..n {
                x.data_mut()[piv[i] * m + col] = y[i];
            }
        }
    }
    x
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Differentiable leaf tagged with parameter slot `id`.
    pub fn param(&mut self, id: usize, t: Tensor<T>) -> Var {
        self.push(t, Op::Param(id), &[])
    }

    /// Differentiable leaf for gradient checks (slot = node index).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let id = self.nodes.len();
        self.param(id, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", va.shape(), vb.shape())));
        }
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast(self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.push(out, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::Offset(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a), &[a])
    }

    /// Natural log with the input floored at [`LOG_FLOOR`].
    pub fn ln(&mut self, a: Var) -> Var {
        let floor = T::of(LOG_FLOOR);
        let out = self.value(a).map(|x| x.max(floor).ln());
        self.push(out, Op::Ln(a), &[a])
    }

    /// Square root; the derivative at zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()).sqrt());
        self.push(out, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn clamp_min(&mut self, a: Var, lo: T) -> Var {
        let out = self.value(a).map(|x| x.max(lo));
        self.push(out, Op::ClampMin(a, lo), &[a])
    }

    /// Clamps into `[lo, hi]` (composed from two one-sided clamps).
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let low = self.clamp_min(a, lo);
        let n = self.neg(low);
        let c = self.clamp_min(n, -hi);
        self.neg(c)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().copied().sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize_lossy(self.value(a).len());
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Sum over rows (axis 0): `[r, c] -> [1, c]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::from_fn(1, v.cols(), |_, c| (0..v.rows()).map(|r| v.at(r, c)).sum());
        self.push(out, Op::SumRows(a), &[a])
    }

    /// Sum over columns (axis 1): `[r, c] -> [r, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::from_fn(v.rows(), 1, |r, _| (0..v.cols()).map(|c| v.at(r, c)).sum());
        self.push(out, Op::SumCols(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a);
        let out = Tensor::matrix(rows, cols, v.data().to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                data.extend_from_slice(&v.data()[r * v.cols()..(r + 1) * v.cols()]);
            }
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Shape("concat_rows: column counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(data.len() / cols.max(1), cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a);
        if start + len > v.cols() {
            return Err(Error::Shape(format!("slice {start}+{len} of {} columns", v.cols())));
        }
        let out = Tensor::from_fn(v.rows(), len, |r, c| v.at(r, start + c));
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    /// `out[i] = a[idx[i]]` row-wise.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let v = self.value(a);
        if idx.iter().any(|&i| i >= v.rows()) {
            return Err(Error::Shape("gather index out of range".into()));
        }
        let c = v.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(out, Op::GatherRows(a, idx), &[a]))
    }

    /// `out[s] = sum_{i : ids[i] = s} a[i]`, accumulated in row order.
    pub fn segment_sum(&mut self, a: Var, ids: Arc<Vec<usize>>, segments: usize) -> Result<Var> {
        let v = self.value(a);
        if ids.len() != v.rows() || ids.iter().any(|&s| s >= segments) {
            return Err(Error::Shape("segment ids do not match rows".into()));
        }
        let c = v.cols();
        let mut out = Tensor::zeros(segments, c);
        for (i, &s) in ids.iter().enumerate() {
            for j in 0..c {
                out.data_mut()[s * c + j] += v.data()[i * c + j];
            }
        }
        Ok(self.push(out, Op::SegmentSum(a, ids), &[a]))
    }

    /// `out[o] += a[ia] * b[ib]` (elementwise) for each `[o, ia, ib]`, in
    /// list order.
    pub fn bilinear(&mut self, a: Var, b: Var, triples: Arc<Vec<[usize; 3]>>, rows: usize) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let c = va.cols();
        if vb.cols() != c || triples.iter().any(|t| t[0] >= rows || t[1] >= va.rows() || t[2] >= vb.rows()) {
            return Err(Error::Shape("bilinear indices or widths mismatch".into()));
        }
        let mut out = Tensor::zeros(rows, c);
        for t in triples.iter() {
            for j in 0..c {
                out.data_mut()[t[0] * c + j] += va.data()[t[1] * c + j] * vb.data()[t[2] * c + j];
            }
        }
        Ok(self.push(out, Op::Bilinear(a, b, triples), &[a, b]))
    }

    /// Softmax over the rows of each segment, independently per column,
    /// with max subtraction.
    pub fn segment_softmax(&mut self, a: Var, ids: Arc<Vec<usize>>, segments: usize) -> Result<Var> {
        let v = self.value(a);
        if ids.len() != v.rows() || ids.iter().any(|&s| s >= segments) {
            return Err(Error::Shape("segment ids do not match rows".into()));
        }
        let c = v.cols();
        let mut max = vec![T::neg_infinity(); segments * c];
        for (i, &s) in ids.iter().enumerate() {
            for j in 0..c {
                max[s * c + j] = max[s * c + j].max(v.at(i, j));
            }
        }
        let mut out = Tensor::zeros(v.rows(), c);
        let mut denom = vec![T::zero(); segments * c];
        for (i, &s) in ids.iter().enumerate() {
            for j in 0..c {
                let e = (v.at(i, j) - max[s * c + j]).exp();
                out.data_mut()[i * c + j] = e;
                denom[s * c + j] += e;
            }
        }
        for (i, &s) in ids.iter().enumerate() {
            for j in 0..c {
                out.data_mut()[i * c + j] /= denom[s * c + j];
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(a, ids), &[a]))
    }

    /// Softmax along `axis` (0: down each column, 1: along each row).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        match axis {
            0 => self.segment_softmax(a, Arc::new(vec![0; r]), 1),
            1 => {
                let t = self.transpose(a);
                let s = self.segment_softmax(t, Arc::new(vec![0; c]), 1)?;
                Ok(self.transpose(s))
            }
            _ => Err(Error::Shape(format!("softmax axis {axis} on a matrix"))),
        }
    }

    /// Product along each row: `[r, c] -> [r, 1]`.
    pub fn prod_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::from_fn(v.rows(), 1, |r, _| (0..v.cols()).fold(T::one(), |acc, c| acc * v.at(r, c)));
        self.push(out, Op::ProdCols(a), &[a])
    }

    /// `X = A^{-1} B` by LU with partial pivoting.
    pub fn solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != va.cols() || va.rows() != vb.rows() {
            return Err(Error::Shape(format!("solve {:?} \\ {:?}", va.shape(), vb.shape())));
        }
        let (lu, piv) = lu_factor(va)?;
        let x = lu_solve(&lu, &piv, vb, false);
        Ok(self.push(x, Op::Solve { a, b, lu, piv }, &[a, b]))
    }

    /// Per-column normalization over rows. Training mode uses batch
    /// statistics (at least two rows); eval mode uses `running`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        mode: BnMode,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        let v = self.value(x);
        let (n, c) = (v.rows(), v.cols());
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::Shape("batch norm affine parameters do not match width".into()));
        }
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(Error::Input("batch norm in training mode needs at least 2 rows".into()));
                }
                let nf = T::from_usize_lossy(n);
                let mean: Vec<T> = (0..c).map(|j| (0..n).map(|i| v.at(i, j)).sum::<T>() / nf).collect();
                let ss: Vec<T> = (0..c).map(|j| (0..n).map(|i| (v.at(i, j) - mean[j]).powi(2)).sum::<T>()).collect();
                let var: Vec<T> = ss.iter().map(|&s| s / nf).collect();
                let unbiased = ss.iter().map(|&s| s / (nf - T::one())).collect();
                (mean.clone(), var, Some(BnStats { mean, var_unbiased: unbiased }))
            }
            BnMode::Eval => {
                let (m, s) = running.ok_or_else(|| Error::Input("eval-mode batch norm needs running stats".into()))?;
                if m.len() != c || s.len() != c {
                    return Err(Error::Shape("running stats do not match width".into()));
                }
                (m.to_vec(), s.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let xhat = Tensor::from_fn(n, c, |i, j| (v.at(i, j) - mean[j]) * inv_std[j]);
        let (g, b) = (self.value(gamma), self.value(beta));
        let out = Tensor::from_fn(n, c, |i, j| g.data()[j] * xhat.at(i, j) + b.data()[j]);
        let var_out = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, mode }, &[x, gamma, beta]);
        Ok((var_out, stats))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar of shape {:?}", self.value(root).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul(&val(*b).transpose()));
                acc(*b, val(*a).transpose().matmul(g));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, reduce_to(g.clone(), ta.rows(), ta.cols()));
                let gb = if matches!(node.op, Op::Sub(..)) { g.map(|x| -x) } else { g.clone() };
                acc(*b, reduce_to(gb, tb.rows(), tb.cols()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.at(i, j) * bidx(tb, i, j));
                let gb = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.at(i, j) * bidx(ta, i, j));
                acc(*a, reduce_to(ga, ta.rows(), ta.cols()));
                acc(*b, reduce_to(gb, tb.rows(), tb.cols()));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.at(i, j) / bidx(tb, i, j));
                let gb = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                    let d = bidx(tb, i, j);
                    -g.at(i, j) * bidx(ta, i, j) / (d * d)
                });
                acc(*a, reduce_to(ga, ta.rows(), ta.cols()));
                acc(*b, reduce_to(gb, tb.rows(), tb.cols()));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * *s)),
            Op::Offset(a) | Op::Reshape(a) => {
                let t = val(*a);
                acc(*a, Tensor::new(t.shape().to_vec(), g.data().to_vec()).expect("same size"));
            }
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |gi, x| if x > T::zero() { gi } else { T::zero() })),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gi, t| gi * (T::one() - t * t))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gi, s| gi * s * (T::one() - s))),
            Op::Exp(a) => acc(*a, g.zip_map(y, |gi, e| gi * e)),
            Op::Ln(a) => {
                let floor = T::of(LOG_FLOOR);
                acc(*a, g.zip_map(val(*a), |gi, x| if x > floor { gi / x } else { T::zero() }));
            }
            Op::Sqrt(a) => acc(*a, g.zip_map(y, |gi, s| if s > T::zero() { gi / (s + s) } else { T::zero() })),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gi, x| gi * (x + x))),
            Op::ClampMin(a, lo) => acc(*a, g.zip_map(val(*a), |gi, x| if x >= *lo { gi } else { T::zero() })),
            Op::Sum(a) => {
                let t = val(*a);
                acc(*a, Tensor::new(t.shape().to_vec(), vec![g.item(); t.len()]).expect("same size"));
            }
            Op::SumRows(a) => {
                let t = val(*a);
                acc(*a, Tensor::from_fn(t.rows(), t.cols(), |_, c| g.at(0, c)));
            }
            Op::SumCols(a) => {
                let t = val(*a);
                acc(*a, Tensor::from_fn(t.rows(), t.cols(), |r, _| g.at(r, 0)));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let t = val(p);
                    let w = t.cols();
                    acc(p, Tensor::from_fn(t.rows(), w, |r, c| g.at(r, off + c)));
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let t = val(p);
                    let n = t.len();
                    acc(p, Tensor::matrix(t.rows(), t.cols(), g.data()[off..off + n].to_vec()).expect("same size"));
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let t = val(*a);
                let mut out = Tensor::zeros(t.rows(), t.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        out.data_mut()[r * t.cols() + start + c] = g.at(r, c);
                    }
                }
                acc(*a, out);
            }
            Op::GatherRows(a, idx) => {
                let t = val(*a);
                let c = t.cols();
                let mut out = Tensor::zeros(t.rows(), c);
                for (i, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        out.data_mut()[src * c + j] += g.data()[i * c + j];
                    }
                }
                acc(*a, out);
            }
            Op::SegmentSum(a, ids) => {
                let t = val(*a);
                let c = t.cols();
                let mut out = Tensor::zeros(t.rows(), c);
                for (i, &s) in ids.iter().enumerate() {
                    out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&g.data()[s * c..(s + 1) * c]);
                }
                acc(*a, out);
            }
            Op::Bilinear(a, b, triples) => {
                let (ta, tb) = (val(*a), val(*b));
                let c = ta.cols();
                let mut ga = Tensor::zeros(ta.rows(), c);
                let mut gb = Tensor::zeros(tb.rows(), c);
                for t in triples.iter() {
                    for j in 0..c {
                        let go = g.data()[t[0] * c + j];
                        ga.data_mut()[t[1] * c + j] += go * tb.data()[t[2] * c + j];
                        gb.data_mut()[t[2] * c + j] += go * ta.data()[t[1] * c + j];
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::SegmentSoftmax(a, ids) => {
                let c = y.cols();
                let segments = ids.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![T::zero(); segments * c];
                for (i, &s) in ids.iter().enumerate() {
                    for j in 0..c {
                        dot[s * c + j] += g.at(i, j) * y.at(i, j);
                    }
                }
                let out = Tensor::from_fn(y.rows(), c, |i, j| y.at(i, j) * (g.at(i, j) - dot[ids[i] * c + j]));
                acc(*a, out);
            }
            Op::ProdCols(a) => {
                let t = val(*a);
                let c = t.cols();
                let mut out = Tensor::zeros(t.rows(), c);
                for r in 0..t.rows() {
                    let mut prefix = vec![T::one(); c + 1];
                    for j in 0..c {
                        prefix[j + 1] = prefix[j] * t.at(r, j);
                    }
                    let mut suffix = T::one();
                    for j in (0..c).rev() {
                        out.data_mut()[r * c + j] = g.at(r, 0) * prefix[j] * suffix;
                        suffix *= t.at(r, j);
                    }
                }
                acc(*a, out);
            }
            Op::Solve { a, b, lu, piv } => {
                let gb = lu_solve(lu, piv, g, true);
                let ga = gb.matmul(&y.transpose()).map(|v| -v);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, mode } => {
                let (n, c) = (xhat.rows(), xhat.cols());
                let gam = val(*gamma);
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for i in 0..n {
                    for j in 0..c {
                        ggamma[j] += g.at(i, j) * xhat.at(i, j);
                        gbeta[j] += g.at(i, j);
                    }
                }
                let gx = match mode {
                    BnMode::Eval => Tensor::from_fn(n, c, |i, j| g.at(i, j) * gam.data()[j] * inv_std[j]),
                    BnMode::Train => {
                        let nf = T::from_usize_lossy(n);
                        // dxhat = g * gamma
                        let mut s1 = vec![T::zero(); c];
                        let mut s2 = vec![T::zero(); c];
                        for i in 0..n {
                            for j in 0..c {
                                let d = g.at(i, j) * gam.data()[j];
                                s1[j] += d;
                                s2[j] += d * xhat.at(i, j);
                            }
                        }
                        Tensor::from_fn(n, c, |i, j| {
                            let d = g.at(i, j) * gam.data()[j];
                            inv_std[j] / nf * (nf * d - s1[j] - xhat.at(i, j) * s2[j])
                        })
                    }
                };
                acc(*x, gx);
                let gs = val(*gamma).shape().to_vec();
                acc(*gamma, Tensor::new(gs, ggamma).expect("width matches"));
                let bs = val(*beta).shape().to_vec();
                acc(*beta, Tensor::new(bs, gbeta).expect("width matches"));
            }
        }
    }

    /// Parameter slot of a leaf created with [`Graph::param`].
    pub fn param_slot(&self, v: Var) -> Option<usize> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Parameter gradients summed per slot, for slots `0..slots`.
    pub fn param_grads(&self, grads: &Gradients<T>, slots: usize) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = vec![None; slots];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if id >= slots {
                    continue;
                }
                if let Some(g) = grads.get(Var(i)) {
                    match &mut out[id] {
                        Some(e) => e.add_assign(g),
                        slot @ None => *slot = Some(g.clone()),
                    }
                }
            }
        }
        out
    }
}

/// Gradients of a scalar root with respect to every reached node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

//! Central finite-difference checks of tape gradients.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::graph::{BnMode, Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;
use crate::rng::{stream_rng, Stream, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Normwise relative error per input tensor.
    pub per_input: Vec<f64>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h` on every entry of every input.
pub fn gradient_check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(inputs)?;
    let grads = g.backward(out)?;
    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; input.len()],
        };
        let mut numeric = Vec::with_capacity(input.len());
        for j in 0..input.len() {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] = input.data()[j] + h;
            let (gp, _, op) = eval(&shifted)?;
            shifted[i].data_mut()[j] = input.data()[j] - h;
            let (gm, _, om) = eval(&shifted)?;
            numeric.push((gp.value(op).item() - gm.value(om).item()) / (2.0 * h));
        }
        per_input.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { per_input })
}

fn rand_t(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn pos_t(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor<f64> {
    rand_t(rng, rows, cols).map(|v| v.abs() + 0.5)
}

/// Weighted sum with fixed random weights, so every entry reaches the root.
fn project(g: &mut Graph<f64>, v: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

/// Finite-difference checks (step `1e-5`) of every differentiable op on
/// randomized shapes; returns the normwise relative error per op family.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    const H: f64 = 1e-5;
    let mut rng = stream_rng(seed, Stream::Sample, 99);
    let (r, c) = (rng.random_range(2..5), rng.random_range(2..5));
    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>| -> Result<()> {
        out.push((name, gradient_check(inputs, H, f)?.max_error()));
        Ok(())
    };

    let k = rng.random_range(1..4);
    let (a, b) = (rand_t(&mut rng, r, c), rand_t(&mut rng, c, k));
    let w = rand_t(&mut rng, k, r);
    run("matmul+transpose", &[a, b], &|g, v| {
        let m = g.matmul(v[0], v[1])?;
        let t = g.transpose(m);
        project(g, t, &w)
    })?;

    for shape in [(r, c), (1, c), (r, 1), (1, 1)] {
        let a = rand_t(&mut rng, r, c);
        let b = pos_t(&mut rng, shape.0, shape.1);
        let w = rand_t(&mut rng, r, c);
        run("broadcast add/sub/mul/div", &[a, b], &|g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            let q = g.div(m, v[1])?;
            let q2 = g.div(v[0], v[1])?;
            let t = g.add(q, q2)?;
            project(g, t, &w)
        })?;
    }

    let x = rand_t(&mut rng, r, c);
    let w = rand_t(&mut rng, r, 6 * c);
    run("tanh/sigmoid/exp/square/scale/neg", std::slice::from_ref(&x), &|g, v| {
        let a = g.tanh(v[0]);
        let b = g.sigmoid(v[0]);
        let e = g.exp(v[0]);
        let d = g.square(v[0]);
        let s = g.scale(v[0], 1.7);
        let f = g.add_scalar(v[0], 0.3);
        let n = g.neg(f);
        let cat = g.concat_cols(&[a, b, e, d, s, n])?;
        project(g, cat, &w)
    })?;
    let p = pos_t(&mut rng, r, c);
    let w = rand_t(&mut rng, 2 * r, c);
    run("ln/sqrt", &[p], &|g, v| {
        let a = g.ln(v[0]);
        let b = g.sqrt(v[0]);
        let cat = g.concat_rows(&[a, b])?;
        project(g, cat, &w)
    })?;
    // kinked ops away from their kinks
    let away = x.map(|v| if v.abs() < 0.05 { 0.3 } else if (v.abs() - 0.5).abs() < 0.05 { 0.25 } else { v });
    let w = rand_t(&mut rng, r, c);
    run("relu/clamp", &[away], &|g, v| {
        let a = g.relu(v[0]);
        let b = g.clamp_min(v[0], 0.0);
        let cl = g.clamp(v[0], -0.5, 0.5);
        let s = g.add(a, b)?;
        let s = g.add(s, cl)?;
        project(g, s, &w)
    })?;

    let x = rand_t(&mut rng, 3, 4);
    let (w1, w2, w3) = (rand_t(&mut rng, 1, 4), rand_t(&mut rng, 1, 3), rand_t(&mut rng, 2, 3));
    run("sum/mean/sum_rows/sum_cols/reshape/slice", &[x], &|g, v| {
        let a = g.sum_rows(v[0]);
        let b = g.sum_cols(v[0]);
        let bt = g.transpose(b);
        let rs = g.reshape(v[0], 2, 6)?;
        let sl = g.slice_cols(rs, 1, 3)?;
        let m = g.mean(v[0]);
        let pa = project(g, a, &w1)?;
        let pb = project(g, bt, &w2)?;
        let ps = project(g, sl, &w3)?;
        let t = g.add(pa, pb)?;
        let t = g.add(t, ps)?;
        g.add(t, m)
    })?;

    let n = rng.random_range(3..7);
    let idx = Arc::new((0..n).map(|_| rng.random_range(0..3)).collect::<Vec<_>>());
    let ids = Arc::new((0..n).map(|_| rng.random_range(0..3)).collect::<Vec<_>>());
    let triples = Arc::new((0..2 * n).map(|_| [rng.random_range(0..3), rng.random_range(0..n), rng.random_range(0..3)]).collect::<Vec<_>>());
    let inputs = [rand_t(&mut rng, 3, 2), rand_t(&mut rng, n, 2), rand_t(&mut rng, 3, 2)];
    let (w1, w2) = (rand_t(&mut rng, n, 2), rand_t(&mut rng, 3, 2));
    run("gather/segment_sum/bilinear", &inputs, &|g, v| {
        let a = g.gather_rows(v[0], idx.clone())?;
        let s = g.segment_sum(v[1], ids.clone(), 3)?;
        let b = g.bilinear(v[1], v[2], triples.clone(), 3)?;
        let t = g.add(s, b)?;
        let pa = project(g, a, &w1)?;
        let pt = project(g, t, &w2)?;
        g.add(pa, pt)
    })?;

    let seg = Arc::new((0..n).map(|i| i % 2).collect::<Vec<_>>());
    let x = rand_t(&mut rng, n, 2);
    let w = rand_t(&mut rng, n, 2);
    run("segment_softmax/softmax", &[x], &|g, v| {
        let s = g.segment_softmax(v[0], seg.clone(), 2)?;
        let s1 = g.softmax(v[0], 1)?;
        let s0 = g.softmax(v[0], 0)?;
        let t = g.add(s, s1)?;
        let t = g.add(t, s0)?;
        project(g, t, &w)
    })?;

    let mut x = rand_t(&mut rng, r, c);
    x.data_mut()[0] = 0.0;
    let w = rand_t(&mut rng, r, 1);
    run("prod_cols", &[x], &|g, v| {
        let p = g.prod_cols(v[0]);
        project(g, p, &w)
    })?;

    let mut a = rand_t(&mut rng, r, r);
    for i in 0..r {
        a.data_mut()[i * r + i] += 3.0;
    }
    let b = rand_t(&mut rng, r, k);
    let w = rand_t(&mut rng, r, k);
    run("solve", &[a, b], &|g, v| {
        let x = g.solve(v[0], v[1])?;
        project(g, x, &w)
    })?;

    let rows = r + 3;
    let inputs = [rand_t(&mut rng, rows, c), pos_t(&mut rng, 1, c), rand_t(&mut rng, 1, c)];
    let w = rand_t(&mut rng, rows, c);
    let (mean, var): (Vec<f64>, Vec<f64>) = (0..c).map(|_| (rng.random_range(-0.5..0.5), rng.random_range(0.5..2.0))).unzip();
    run("batch_norm train", &inputs, &|g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, BnMode::Train, None)?;
        project(g, y, &w)
    })?;
    run("batch_norm eval", &inputs, &|g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, BnMode::Eval, Some((&mean, &var)))?;
        project(g, y, &w)
    })?;
    Ok(out)
}

//! Minimal reverse-mode automatic differentiation over dense real
//! matrices, with Adam, batch normalization and JSON checkpoints.

pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use gradcheck::{gradient_check, op_suite, relative_error, GradCheck};
pub use graph::{BnMode, BnStats, Gradients, Graph, Var, LOG_FLOOR};
pub use params::{Adam, AdamConfig, Param, ParamEntry, ParamSet};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn rand_t(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, Stream::Sample, 0);
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn square_at_three() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.square(x);
        let gr = g.backward(y).unwrap();
        assert_eq!(gr.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![-1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::row(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn softmax_uniform_and_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::filled(4, 1, 2.5));
        let s = g.softmax(x, 0).unwrap();
        assert!(g.value(s).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn every_op_passes_finite_differences() {
        for seed in 0..5 {
            for (name, err) in op_suite(seed).unwrap() {
                assert!(err < 1e-4, "{name} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn softmax_jacobian_by_hand() {
        let z = [0.2, -0.4, 1.1];
        let mut g = Graph::new();
        let x = g.variable(Tensor::column(z.to_vec()));
        let s = g.softmax(x, 0).unwrap();
        let y: Vec<f64> = g.value(s).data().to_vec();
        // d y_0 / d z_j = y_0 (delta_0j - y_j)
        let w = g.constant(Tensor::column(vec![1.0, 0.0, 0.0]));
        let p = g.mul(s, w).unwrap();
        let root = g.sum(p);
        let gr = g.backward(root).unwrap();
        for j in 0..3 {
            let want = y[0] * (if j == 0 { 1.0 } else { 0.0 } - y[j]);
            assert!((gr.get(x).unwrap().data()[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn solve_matches_inverse() {
        let a = Tensor::matrix(2, 2, vec![0.0, 2.0, 1.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let av = g.constant(a);
        let b = g.constant(Tensor::column(vec![4.0, 3.0]));
        let x = g.solve(av, b).unwrap();
        assert_eq!(g.value(x).data(), &[1.0, 2.0]);
        let sing = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap());
        assert!(g.solve(sing, b).is_err());
    }

    #[test]
    fn batch_norm_identity_and_constant() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::column(vec![-1.0, 1.0, -1.0, 1.0]));
        let one = g.constant(Tensor::scalar(1.0));
        let zero = g.constant(Tensor::scalar(0.0));
        let (y, stats) = g.batch_norm(x, one, zero, 1e-12, BnMode::Train, None).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(stats.unwrap().var_unbiased, vec![4.0 / 3.0]);
        let c = g.constant(Tensor::filled(3, 1, 7.0));
        let b = g.constant(Tensor::scalar(0.25));
        let (y, _) = g.batch_norm(c, one, b, 1e-5, BnMode::Train, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));
        let single = g.constant(Tensor::filled(1, 1, 1.0));
        assert!(g.batch_norm(single, one, zero, 1e-5, BnMode::Train, None).is_err());
    }

    #[test]
    fn backward_is_linear() {
        let x0 = rand_t(3, 3, 90);
        let grad_of = |which: u8| {
            let mut g = Graph::new();
            let x = g.variable(x0.clone());
            let a = g.tanh(x);
            let la = g.sum(a);
            let b = g.square(x);
            let lb = g.mean(b);
            let root = match which {
                0 => la,
                1 => lb,
                _ => g.add(la, lb).unwrap(),
            };
            g.backward(root).unwrap().get(x).unwrap().clone()
        };
        let (ga, gb, gs) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..9 {
            assert!((ga.data()[i] + gb.data()[i] - gs.data()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn param_grads_accumulate_per_slot() {
        let mut g = Graph::new();
        let a = g.param(0, Tensor::scalar(2.0));
        let b = g.param(0, Tensor::scalar(2.0));
        let p = g.mul(a, b).unwrap();
        let gr = g.backward(p).unwrap();
        let pg = g.param_grads(&gr, 1);
        assert_eq!(pg[0].as_ref().unwrap().item(), 4.0);
    }
}

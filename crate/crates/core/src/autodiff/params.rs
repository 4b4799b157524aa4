//! Named parameter storage, the Adam optimizer and JSON checkpoints.

use serde::{Deserialize, Serialize};

use crate::autodiff::graph::{Gradients, Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub layer: usize,
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (batch-norm running statistics) are saved but not trained.
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    /// Offset of this set's tape slots, so several sets can share a tape.
    base: usize,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), base: 0 }
    }

    pub fn add(&mut self, layer: usize, name: &str, value: Tensor<T>, trainable: bool) -> usize {
        self.params.push(Param { layer, name: name.to_string(), value, trainable });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Param<T> {
        &self.params[id]
    }

    pub fn value(&self, id: usize) -> &Tensor<T> {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.params[id].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn find(&self, layer: usize, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.layer == layer && p.name == name)
    }

    /// Puts parameter `id` on the tape as a differentiable leaf.
    pub fn leaf(&self, g: &mut Graph<T>, id: usize) -> Var {
        g.param(self.base + id, self.params[id].value.clone())
    }

    pub fn set_slot_base(&mut self, base: usize) {
        self.base = base;
    }

    /// Gradients of this set's parameters, indexed like the set.
    pub fn grads(&self, g: &Graph<T>, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        g.param_grads(grads, self.base + self.len()).split_off(self.base)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn to_entries(&self) -> Vec<ParamEntry> {
        self.params
            .iter()
            .map(|p| ParamEntry {
                layer: p.layer,
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|v| v.as_f64()).collect(),
                trainable: p.trainable,
            })
            .collect()
    }

    /// Overwrites values from checkpoint entries; every parameter must be
    /// present with a matching shape.
    pub fn load_entries(&mut self, entries: &[ParamEntry]) -> Result<()> {
        for p in &mut self.params {
            let e = entries
                .iter()
                .find(|e| e.layer == p.layer && e.name == p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks layer {} {}", p.layer, p.name)))?;
            if e.shape != p.value.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint {} layer {} has shape {:?}, model expects {:?}",
                    p.name,
                    p.layer,
                    e.shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(e.shape.clone(), e.data.iter().map(|&v| T::of(v)).collect())?;
        }
        Ok(())
    }
}

/// One checkpoint record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default = "default_true")]
    pub trainable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = |p: &Param<T>| Tensor::new(p.value.shape().to_vec(), vec![T::zero(); p.value.len()]).expect("shape");
        Self { config, m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update; missing gradients count as zero.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::of(c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for (id, g) in grads.iter().enumerate() {
            if !params.params[id].trainable {
                continue;
            }
            let Some(g) = g else { continue };
            if g.len() != params.params[id].value.len() {
                return Err(Error::Shape(format!("gradient for {} has wrong size", params.params[id].name)));
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let value = params.params[id].value.data_mut();
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
                let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                value[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add(0, "w", Tensor::scalar(v), true);
        p
    }

    #[test]
    fn zero_gradient_no_change() {
        let mut p = one_param(1.5);
        let mut opt = Adam::new(&p, AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut p, &[Some(Tensor::scalar(0.0))]).unwrap();
        }
        assert_eq!(p.value(0).item(), 1.5);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = one_param(1.0);
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &[Some(Tensor::scalar(0.3))]).unwrap();
        // m = 0.03, v = 0.00009; mhat = 0.3, vhat = 0.09
        let expected = 1.0 - 0.01 * 0.3 / (0.09f64.sqrt() + 1e-8);
        assert!((p.value(0).item() - expected).abs() < 1e-12);
        opt.step(&mut p, &[Some(Tensor::scalar(-0.1))]).unwrap();
        let m: f64 = 0.9 * 0.03 + 0.1 * -0.1;
        let v: f64 = 0.999 * 0.00009 + 0.001 * 0.01;
        let expected2 = expected - 0.01 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p.value(0).item() - expected2).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_steps_at_lr() {
        let mut p = one_param(0.0);
        let mut opt = Adam::new(&p, AdamConfig::default());
        let mut prev = 0.0;
        for _ in 0..2000 {
            opt.step(&mut p, &[Some(Tensor::scalar(-4.0))]).unwrap();
            let now = p.value(0).item();
            assert!((now - prev - 0.01).abs() < 1e-6);
            prev = now;
        }
    }

    #[test]
    fn buffers_are_not_trained() {
        let mut p = ParamSet::<f64>::new();
        p.add(0, "running_mean", Tensor::scalar(2.0), false);
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &[Some(Tensor::scalar(1.0))]).unwrap();
        assert_eq!(p.value(0).item(), 2.0);
    }

    #[test]
    fn entries_round_trip() {
        let mut p = ParamSet::<f64>::new();
        p.add(1, "Q_PS_1", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let json = serde_json::to_string(&p.to_entries()).unwrap();
        assert!(json.contains("\"name\":\"Q_PS_1\"") && json.contains("\"shape\":[2,2]"));
        let entries: Vec<ParamEntry> = serde_json::from_str(&json).unwrap();
        let mut q = p.clone();
        q.value_mut(0).data_mut()[0] = 9.0;
        q.load_entries(&entries).unwrap();
        assert_eq!(q, p);
        let mut bad = entries.clone();
        bad[0].shape = vec![4, 1];
        assert!(q.load_entries(&bad).is_err());
    }
}

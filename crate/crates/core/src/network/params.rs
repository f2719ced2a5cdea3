use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::layers::Bound;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Step decay: `base_lr · 0.5^floor(epoch / 20)`.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    base_lr * 0.5f64.powi((epoch / 20) as i32)
}

#[derive(Clone, Debug)]
struct Param<T> {
    name: String,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Named parameters in registration order, with Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    step: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::param(&name, "duplicate parameter name"));
        }
        let shape = value.shape();
        self.params.push(Param {
            name: name.clone(),
            value,
            grad: None,
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        });
        self.index.insert(name, self.params.len() - 1);
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.params[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.params[index].value
    }

    pub fn grad(&self, index: usize) -> Option<&Tensor<T>> {
        self.params[index].grad.as_ref()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound::new(
            self.params
                .iter()
                .map(|p| g.leaf(p.value.clone(), trainable))
                .collect(),
        )
    }

    /// Adds the gradients of a backward pass to the stored gradients.
    /// Repeated calls accumulate until the next [`adam_step`](Self::adam_step)
    /// or [`zero_grad`](Self::zero_grad).
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(bound.vars()) {
            let Some(g) = grads.get(v) else { continue };
            match &mut p.grad {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *d;
                    }
                }
                slot @ None => *slot = Some(g.clone()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Bias-corrected Adam update of every parameter; clears gradients.
    /// Fails, leaving everything untouched, if any parameter lacks a gradient.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::of(1.0 - cfg.beta1.powi(t));
        let c2 = T::of(1.0 - cfg.beta2.powi(t));
        let lr = T::of(lr);
        let eps = T::of(cfg.eps);
        let one = T::one();
        for p in &mut self.params {
            let grad = p.grad.take().unwrap();
            let it = p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.m.data_mut().iter_mut())
                .zip(p.v.data_mut().iter_mut())
                .zip(grad.data());
            for (((w, m), v), &g) in it {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Raw bytes of every parameter value, in order.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.params {
            out.extend_from_slice(p.name.as_bytes());
            for &v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Writes parameters as `prefix + name`; with `optimizer`, also the Adam
    /// moments (`<name>.adam.m`, `<name>.adam.v`) and the step counter.
    pub fn export(&self, ckpt: &mut Checkpoint, prefix: &str, optimizer: bool) {
        for p in &self.params {
            let name = format!("{prefix}{}", p.name);
            if optimizer {
                ckpt.insert_tensor(&format!("{name}.adam.m"), &p.m);
                ckpt.insert_tensor(&format!("{name}.adam.v"), &p.v);
            }
            ckpt.insert_tensor(&name, &p.value);
        }
        if optimizer {
            ckpt.insert(&format!("{prefix}step"), vec![], vec![self.step as f32]);
        }
    }

    /// Loads every parameter from `prefix + name`. Shapes must match exactly;
    /// optimizer state is restored when present.
    pub fn import(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        for p in &mut self.params {
            let name = format!("{prefix}{}", p.name);
            let expected = p.value.shape().to_vec();
            let entry = ckpt.get(&name).ok_or_else(|| Error::CheckpointMismatch {
                name: name.clone(),
                expected: expected.clone(),
                found: vec![],
            })?;
            p.value = entry.to_tensor(&name, p.value.shape())?;
            if let Some(m) = ckpt.get(&format!("{name}.adam.m")) {
                p.m = m.to_tensor(&name, p.value.shape())?;
            }
            if let Some(v) = ckpt.get(&format!("{name}.adam.v")) {
                p.v = v.to_tensor(&name, p.value.shape())?;
            }
            p.grad = None;
        }
        if let Some(step) = ckpt.get(&format!("{prefix}step")) {
            self.step = step.values.first().copied().unwrap_or(0.0) as u64;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore<f64>, usize, usize) {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::full([1, 1, 1, 3], 1.0)).unwrap();
        let b = s.insert("b", Tensor::full([1, 1, 1, 3], 1.0)).unwrap();
        (s, a, b)
    }

    fn feed(s: &mut ParamStore<f64>, ga: f64, gb: f64) {
        let mut g = Graph::new();
        let bound = s.bind(&mut g, true);
        let sa = g.scale(bound.var(0), ga);
        let sb = g.scale(bound.var(1), gb);
        let ta = g.sum(sa);
        let tb = g.sum(sb);
        let t = g.add(ta, tb).unwrap();
        let grads = g.backward(t).unwrap();
        s.accumulate(&bound, &grads);
    }

    #[test]
    fn schedule_halves_every_twenty_epochs() {
        assert_eq!(lr_schedule(0, 1e-4), 1e-4);
        assert_eq!(lr_schedule(19, 1e-4), 1e-4);
        assert_eq!(lr_schedule(20, 1e-4), 5e-5);
        assert_eq!(lr_schedule(40, 1e-4), 2.5e-5);
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _, _) = store();
        assert!(s.insert("a", Tensor::zeros([1, 1, 1, 1])).is_err());
    }

    #[test]
    fn missing_gradient_rejected() {
        let (mut s, _, _) = store();
        assert!(matches!(s.adam_step(1e-3, &AdamConfig::default()), Err(Error::MissingGradient(n)) if n == "a"));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn zero_gradient_leaves_values_and_advances_step() {
        let (mut s, a, _) = store();
        feed(&mut s, 0.0, 0.0);
        s.adam_step(1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(s.step(), 1);
        assert!(s.value(a).data().iter().all(|&v| v == 1.0));
        assert!(s.grad(a).is_none());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, a, b) = store();
        feed(&mut s, 3.0, -0.002);
        s.adam_step(1e-2, &AdamConfig::default()).unwrap();
        // m̂ = g, v̂ = g², so the update is −lr·g/(|g| + eps).
        for &v in s.value(a).data() {
            assert!((v - (1.0 - 1e-2 * 3.0 / (3.0 + 1e-8))).abs() < 1e-12);
        }
        for &v in s.value(b).data() {
            assert!((v - (1.0 + 1e-2 * 0.002 / (0.002 + 1e-8))).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_gradients_give_equal_updates() {
        let (mut s, a, b) = store();
        feed(&mut s, 0.7, 0.7);
        s.adam_step(1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(a), s.value(b));
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let (mut s, a, _) = store();
        let before = s.value(a).clone();
        feed(&mut s, 5.0, 1.0);
        s.adam_step(0.0, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(a), &before);
    }

    #[test]
    fn gradients_accumulate_until_step() {
        let (mut s, a, _) = store();
        feed(&mut s, 1.0, 0.0);
        feed(&mut s, 2.0, 0.0);
        assert!(s.grad(a).unwrap().data().iter().all(|&v| v == 3.0));
    }
}

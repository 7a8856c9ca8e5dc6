use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with its per-parameter state. Adam moments are allocated on the
/// first step and must keep matching the store's shapes afterwards.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    adam: AdamParams,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self, NnError> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(NnError::InvalidHyperparameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            adam: AdamParams::default(),
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self, NnError> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn adam(learning_rate: f64) -> Result<Self, NnError> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.learning_rate as f32;
                for p in store.iter_mut().filter(|p| p.trainable) {
                    let grad = p.grad.data().to_vec();
                    for (v, g) in p.value.data_mut().iter_mut().zip(grad) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => self.adam_step(store)?,
        }
        Ok(())
    }

    fn adam_step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        if self.first_moment.is_empty() {
            self.first_moment = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != store.len() {
            return Err(NnError::OptimizerState(format!(
                "{} moment slots for {} parameters",
                self.first_moment.len(),
                store.len()
            )));
        }
        let AdamParams { beta1, beta2, eps } = self.adam;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let step = self.learning_rate / bias1;
        for ((p, m), v) in store
            .iter_mut()
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            if m.shape() != p.value.shape() {
                return Err(NnError::OptimizerState(format!(
                    "moment shape {:?} does not match parameter {} {:?}",
                    m.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !p.trainable {
                continue;
            }
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = f64::from(g);
                let m_new = beta1 * f64::from(*mi) + (1.0 - beta1) * g;
                let v_new = beta2 * f64::from(*vi) + (1.0 - beta2) * g * g;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = step * m_new / ((v_new / bias2).sqrt() + eps);
                *w = (f64::from(*w) - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f32, grad: f32) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::filled(&[3], value)).unwrap();
        s.get_mut(id).grad.data_mut().fill(grad);
        s
    }

    #[test]
    fn sgd_step() {
        let mut s = store_with(1.0, 0.5);
        Optimizer::sgd(0.1).unwrap().step(&mut s).unwrap();
        for &v in s.iter().next().unwrap().value.data() {
            assert!((v - 0.95).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_grad_leaves_parameters() {
        for mut opt in [Optimizer::sgd(0.1).unwrap(), Optimizer::adam(0.1).unwrap()] {
            let mut s = store_with(0.25, 0.0);
            opt.step(&mut s).unwrap();
            assert!(s.iter().next().unwrap().value.data().iter().all(|&v| v == 0.25));
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let mut s = store_with(1.0, 1.0);
        Optimizer::adam(1e-3).unwrap().step(&mut s).unwrap();
        for &v in s.iter().next().unwrap().value.data() {
            assert!((f64::from(v) - (1.0 - 1e-3)).abs() < 1e-6);
        }
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut s = ParamStore::new();
        let id = s.add_frozen("alpha", Tensor::filled(&[2], 0.02)).unwrap();
        s.get_mut(id).grad.data_mut().fill(3.0);
        Optimizer::adam(0.1).unwrap().step(&mut s).unwrap();
        Optimizer::sgd(0.1).unwrap().step(&mut s).unwrap();
        assert!(s.get(id).value.data().iter().all(|&v| v == 0.02));
    }

    #[test]
    fn rejects_bad_learning_rate() {
        assert!(Optimizer::sgd(0.0).is_err());
        assert!(Optimizer::adam(f64::NAN).is_err());
    }
}

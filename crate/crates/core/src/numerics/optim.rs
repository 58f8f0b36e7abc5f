//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{FocusError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable tensor, then zeroes gradients.
    ///
    /// Fails without touching any parameter if a trainable tensor has no
    /// gradient buffer.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for (name, t) in params.iter() {
            if t.requires_grad && t.grad.is_none() {
                return Err(FocusError::MissingGradient {
                    name: name.to_string(),
                });
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);

        for (name, t) in params.iter_mut() {
            if !t.requires_grad {
                continue;
            }
            let n = t.len();
            let m = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments {
                    first: vec![0.0; n],
                    second: vec![0.0; n],
                });
            let grad = t.grad.take().expect("checked above");
            let data = t.data_mut();
            for i in 0..n {
                let g = grad[i];
                m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * g;
                m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * g * g;
                let m_hat = m.first[i] / bias1;
                let v_hat = m.second[i] / bias2;
                data[i] -= lr * weight_decay * data[i];
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(FocusError::NonFiniteValue { op: "adamw_step" });
            }
            t.grad = Some(vec![0.0; n]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor2;

    fn scalar_store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.register("x", Tensor2::filled(1, 1, v).trainable()).unwrap();
        p
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut p = ParamStore::new();
        p.register(
            "w",
            Tensor2::from_rows(&[[0.3, -1.2], [2.0, 0.0]]).trainable(),
        )
        .unwrap();
        let before = p.get("w").unwrap().data().to_vec();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..5 {
            opt.step(&mut p).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &before[..]);
    }

    #[test]
    fn first_step_matches_hand_recurrence() {
        // m1 = 0.1, v1 = 0.001; bias-corrected both are 1, so the Adam part
        // moves by lr / (1 + eps). Decay is applied to the old value first.
        let lr = 1e-4;
        let eps = 1e-8;
        let wd = 0.01;
        let x0 = 0.5;
        let mut p = scalar_store(x0);
        p.get_mut("x").unwrap().grad = Some(vec![1.0]);
        let mut opt = AdamW::new(AdamWConfig {
            lr,
            eps,
            weight_decay: wd,
            ..Default::default()
        });
        opt.step(&mut p).unwrap();
        let expected = x0 - lr * wd * x0 - lr * 1.0 / (1.0 + eps);
        let got = p.get("x").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert_eq!(p.get("x").unwrap().grad.as_deref(), Some(&[0.0][..]));
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn second_step_matches_hand_recurrence() {
        let lr = 1e-3;
        let mut p = scalar_store(0.0);
        let mut opt = AdamW::new(AdamWConfig {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        });
        p.get_mut("x").unwrap().grad = Some(vec![1.0]);
        opt.step(&mut p).unwrap();
        p.get_mut("x").unwrap().grad = Some(vec![-2.0]);
        opt.step(&mut p).unwrap();
        let m2: f64 = 0.9 * 0.1 + 0.1 * -2.0;
        let v2: f64 = 0.999 * 0.001 + 0.001 * 4.0;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999f64.powi(2));
        let expected = -lr / (1.0 + 1e-8) - lr * m_hat / (v_hat.sqrt() + 1e-8);
        let got = p.get("x").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut p = scalar_store(1.0);
        p.get_mut("x").unwrap().grad = None;
        let mut opt = AdamW::new(AdamWConfig::default());
        match opt.step(&mut p) {
            Err(FocusError::MissingGradient { name }) => assert_eq!(name, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn frozen_tensors_untouched() {
        let mut p = scalar_store(1.0);
        p.register("f", Tensor2::filled(1, 1, 3.0)).unwrap();
        p.get_mut("x").unwrap().grad = Some(vec![1.0]);
        AdamW::new(AdamWConfig::default()).step(&mut p).unwrap();
        assert_eq!(p.get("f").unwrap().data(), &[3.0]);
    }
}

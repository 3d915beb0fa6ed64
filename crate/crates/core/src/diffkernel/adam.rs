use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamStore};
use crate::error::{KgError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay coefficient: `p <- p * (1 - lr * weight_decay)`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay applied before
/// the Adam delta. Tensors without a gradient are left untouched.
///
/// All gradients are checked first; a non-finite value aborts the step
/// without modifying anything and names the offending tensor.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, grads: &ParamGrads<T>, cfg: &AdamConfig) -> Result<()> {
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            if g.shape() != store.tensor(id).shape() {
                return Err(KgError::Contract(format!(
                    "gradient shape {:?} != parameter `{}` shape {:?}",
                    g.shape(),
                    store.name(id),
                    store.tensor(id).shape()
                )));
            }
            if let Some(pos) = g.as_slice().iter().position(|x| !x.is_finite()) {
                return Err(KgError::NonFinite {
                    tensor: store.name(id).to_string(),
                    detail: format!("gradient element {pos} = {:?}", g.as_slice()[pos]),
                });
            }
        }
    }
    let step = store.step() + 1;
    store.set_step(step);
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let bc1 = one - b1.powi(step.min(i32::MAX as u64) as i32);
    let bc2 = one - b2.powi(step.min(i32::MAX as u64) as i32);
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let decay = one - lr * T::of(cfg.weight_decay);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let Some(g) = grads.get(id) else { continue };
        let (p, m, v) = store.parts_mut(id);
        for (((p, m), v), &g) in p
            .as_mut_slice()
            .iter_mut()
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
            .zip(g.as_slice())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    debug_assert!(store.first_non_finite().is_none(), "non-finite parameter after Adam step");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkernel::Matrix;

    fn scalar_store(p: f64) -> (ParamStore<f64>, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("p", Matrix::scalar(p));
        (s, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let (mut s, id) = scalar_store(0.37);
        let mut g = ParamGrads::empty(1);
        g.set(id, Matrix::scalar(0.0));
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &g, &cfg).unwrap();
        assert_eq!(s.tensor(id).item(), 0.37);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.0);
        let mut g = ParamGrads::empty(1);
        g.set(id, Matrix::scalar(1.0));
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &g, &cfg).unwrap();
        // m_hat = v_hat = 1, so the delta is lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((s.tensor(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_matches_reference_loop() {
        let (mut s, id) = scalar_store(0.0);
        let mut g = ParamGrads::empty(1);
        g.set(id, Matrix::scalar(1.0));
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        // scalar reference recurrences
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut prev = 0.0;
        for t in 1..=100 {
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            p -= 1e-3 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            adam_step(&mut s, &g, &cfg).unwrap();
            let now = s.tensor(id).item();
            assert!(now < prev, "step {t} did not decrease");
            assert!((now - p).abs() < 1e-12);
            prev = now;
        }
    }

    #[test]
    fn decay_is_applied_before_the_adam_delta() {
        let (mut s, id) = scalar_store(2.0);
        let mut g = ParamGrads::empty(1);
        g.set(id, Matrix::scalar(0.0));
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &g, &cfg).unwrap();
        assert!((s.tensor(id).item() - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_tensor() {
        let (mut s, id) = scalar_store(1.0);
        let mut g = ParamGrads::empty(1);
        g.set(id, Matrix::scalar(f64::INFINITY));
        let err = adam_step(&mut s, &g, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`p`"));
        assert_eq!(s.step(), 0);
        assert_eq!(s.tensor(id).item(), 1.0);
    }
}

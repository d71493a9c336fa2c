use std::collections::BTreeMap;

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Tensor,
    v: Tensor,
    t: u64,
}

/// Bias-corrected Adam. Moments are kept per parameter name; parameters
/// without a gradient in a step are left untouched.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(NumError::NonFiniteGradient { name: name.clone() });
            }
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(NumError::Shape {
                    op: "adam_step",
                    detail: format!("`{name}`: param {:?} vs grad {:?}", p.shape(), g.shape()),
                });
            }
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape().to_vec()),
                v: Tensor::zeros(g.shape().to_vec()),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - beta1.powi(st.t as i32);
            let bc2 = 1.0 - beta2.powi(st.t as i32);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gv;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gv * gv;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their global ℓ2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = scalar_store(3.0);
        let mut adam = Adam::new(AdamConfig::default());
        let grads = BTreeMap::from([("theta".to_string(), Tensor::scalar(0.0))]);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("theta").unwrap().item(), 3.0);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // m̂ = g, v̂ = g², so Δθ = lr·g/(|g| + ε).
        let mut store = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        let grads = BTreeMap::from([("theta".to_string(), Tensor::scalar(1.0))]);
        adam.step(&mut store, &grads).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((store.get("theta").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        let grads = BTreeMap::from([("theta".to_string(), Tensor::scalar(f64::NAN))]);
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(store.get("theta").unwrap().item(), 1.0);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut store = scalar_store(0.5);
            let mut adam = Adam::new(AdamConfig::default());
            for i in 0..50 {
                let g = (i as f64 * 0.3).sin();
                let grads = BTreeMap::from([("theta".to_string(), Tensor::scalar(g))]);
                adam.step(&mut store, &grads).unwrap();
            }
            store.get("theta").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }
}

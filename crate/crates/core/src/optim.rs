//! AdamW with decoupled weight decay.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Named parameter tensors, iterated in name order.
pub type ParamStore<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = |p: &ParamStore<T>| {
            p.iter()
                .map(|(k, v)| (k.clone(), vec![T::zero(); v.len()]))
                .collect()
        };
        OptimizerState {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    /// One AdamW update in place. Parameters without a gradient entry are
    /// left untouched; a non-finite gradient aborts before anything changes.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &HashMap<String, Tensor<T>>,
    ) -> Result<()> {
        for (name, p) in params.iter() {
            if let Some(g) = grads.get(name) {
                if g.shape() != p.shape() {
                    return Err(Error::shape(
                        format!("gradient of `{name}`"),
                        format!("{:?} vs parameter {:?}", g.shape(), p.shape()),
                    ));
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite(name.clone()));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let decay = T::one() - T::of(c.lr * c.weight_decay);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); p.len()]);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); p.len()]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w".into(), Tensor::from_vec(vals.to_vec()));
        s
    }

    fn grads(vals: &[f64]) -> HashMap<String, Tensor<f64>> {
        HashMap::from([("w".to_string(), Tensor::from_vec(vals.to_vec()))])
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = store(&[1.0, -2.0]);
        let cfg = AdamConfig {
            lr: 0.0,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p);
        st.step(&mut p, &grads(&[3.0, -0.1])).unwrap();
        assert_eq!(p["w"].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+eps)
        let mut p = store(&[0.0, 0.0]);
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p);
        st.step(&mut p, &grads(&[0.3, -7.0])).unwrap();
        approx::assert_abs_diff_eq!(p["w"].data()[0], -0.01, epsilon = 1e-9);
        approx::assert_abs_diff_eq!(p["w"].data()[1], 0.01, epsilon = 1e-9);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn decoupled_decay_scales_params() {
        let mut p = store(&[2.0]);
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p);
        st.step(&mut p, &grads(&[0.0])).unwrap();
        approx::assert_abs_diff_eq!(p["w"].data()[0], 2.0 * (1.0 - 0.001), epsilon = 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = store(&[1.0]);
        let mut st = OptimizerState::new(AdamConfig::default(), &p);
        let err = st.step(&mut p, &grads(&[f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref n) if n == "w"));
        assert_eq!(p["w"].data(), &[1.0]);
        assert_eq!(st.step, 0);
    }
}

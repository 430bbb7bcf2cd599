//! Adam with decoupled weight decay on convolution and linear weights only.

use autograd::Real;
use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::params::{take_block, ParamStore, StateBlocks, StateError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Real> {
    cfg: AdamConfig,
    steps: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros: Vec<ArrayD<T>> = store.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        Self {
            cfg,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    /// One update. A missing gradient counts as zero.
    ///
    /// Decayed parameters are first scaled by `1 − lr·weight_decay`, then
    /// moved by the bias-corrected Adam step.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<ArrayD<T>>], lr: f64) {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        self.steps += 1;
        let c = self.cfg;
        let t = self.steps as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let lr_t = T::lit(lr);
        let eps = T::lit(c.eps);
        let shrink = T::lit(1.0 - lr * c.weight_decay);
        for (((p, grad), m), v) in store.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.kind.decays() {
                p.value.mapv_inplace(|x| x * shrink);
            }
            match grad {
                Some(g) => {
                    Zip::from(&mut p.value)
                        .and(&mut *m)
                        .and(&mut *v)
                        .and(g)
                        .for_each(|x, m, v, &g| {
                            *m = b1 * *m + one_b1 * g;
                            *v = b2 * *v + one_b2 * g * g;
                            *x -= lr_t * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                        });
                }
                None => {
                    Zip::from(&mut p.value).and(&mut *m).and(&mut *v).for_each(|x, m, v| {
                        *m = b1 * *m;
                        *v = b2 * *v;
                        *x -= lr_t * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    });
                }
            }
        }
    }

    /// Moments as `opt/<net>/m/<param>` and `opt/<net>/v/<param>`.
    pub fn export(&self, net: &str, store: &ParamStore<T>, out: &mut StateBlocks<T>) {
        for ((p, m), v) in store.iter().zip(&self.m).zip(&self.v) {
            out.insert(format!("opt/{net}/m/{}", p.name), m.clone());
            out.insert(format!("opt/{net}/v/{}", p.name), v.clone());
        }
    }

    pub fn import(&mut self, net: &str, store: &ParamStore<T>, blocks: &mut StateBlocks<T>) -> Result<(), StateError> {
        for ((p, m), v) in store.iter().zip(&mut self.m).zip(&mut self.v) {
            *m = take_block(blocks, &format!("opt/{net}/m/{}", p.name), p.value.shape())?;
            *v = take_block(blocks, &format!("opt/{net}/v/{}", p.name), p.value.shape())?;
        }
        Ok(())
    }
}

use std::collections::BTreeMap;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Tensor,
    v: Tensor,
    t: i32,
}

/// Adam with bias correction. Only trainable parameters that received a
/// gradient are touched; each keeps its own step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, grad) in grads {
            if !store.get(name).is_some_and(|p| p.trainable) {
                continue;
            }
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(grad.shape()),
                v: Tensor::zeros(grad.shape()),
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - self.beta1.powi(st.t);
            let c2 = 1.0 - self.beta2.powi(st.t);
            let value = store.value_mut(name)?;
            for i in 0..grad.numel() {
                let gi = grad.data()[i];
                let m = self.beta1 * st.m.data()[i] + (1.0 - self.beta1) * gi;
                let v = self.beta2 * st.v.data()[i] + (1.0 - self.beta2) * gi * gi;
                st.m.data_mut()[i] = m;
                st.v.data_mut()[i] = v;
                value.data_mut()[i] -= lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

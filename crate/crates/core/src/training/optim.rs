//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::{Real, Tensor};

use super::TrainConfig;

/// Moment estimates for one store, in store order.
#[derive(Clone, Debug, Default)]
pub struct AdamW {
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
    t: u64,
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every trainable tensor.
    ///
    /// `grads[i]` belongs to the i-th store tensor. Frozen tensors must have
    /// `None`; trainable ones must have a gradient.
    pub fn step<T: Real>(&mut self, store: &mut ParameterStore<T>, grads: &[Option<Tensor<T>>], cfg: &TrainConfig) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        let trainable: Vec<bool> = store.entries().iter().map(|e| store.is_trainable(e.partition)).collect();
        for ((e, g), &tr) in store.entries().iter().zip(grads).zip(&trainable) {
            match (g, tr) {
                (Some(_), false) => return Err(Error::FreezeViolation(e.name.clone())),
                (None, true) => {
                    return Err(Error::InvalidArgument(format!("missing gradient for trainable `{}`", e.name)))
                }
                (Some(g), true) if g.shape() != e.value.shape() => {
                    return Err(Error::Shape(format!(
                        "gradient for `{}` has shape {:?}, parameter {:?}",
                        e.name,
                        g.shape(),
                        e.value.shape()
                    )))
                }
                _ => {}
            }
        }
        self.m.resize(store.len(), None);
        self.v.resize(store.len(), None);
        self.t += 1;
        let (b1, b2) = cfg.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, wd, eps) = (cfg.lr, cfg.weight_decay, cfg.eps);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let n = g.numel();
            let m = self.m[i].get_or_insert_with(|| vec![0.0; n]);
            let v = self.v[i].get_or_insert_with(|| vec![0.0; n]);
            let p = store.get_mut(ParamId(i));
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mut x = p.as_f64();
                x -= lr * wd * x;
                x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *p = T::from_f64_lossy(x);
            }
        }
        Ok(())
    }
}

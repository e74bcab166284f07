use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }
}

/// Optimizer state over a fixed list of trainable parameters. Parameters not
/// in the list are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    pub trainable: Vec<String>,
    /// First moment (Adam) or velocity (SGD).
    pub m: ParamStore<T>,
    /// Second moment (Adam only; empty for SGD).
    pub v: ParamStore<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new<'a>(
        kind: OptimizerKind,
        lr: f64,
        params: &ParamStore<T>,
        trainable: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let trainable: Vec<String> = trainable.into_iter().map(str::to_string).collect();
        let m = params
            .subset(trainable.iter().map(String::as_str))
            .zeros_like();
        let v = match kind {
            OptimizerKind::Adam { .. } => m.clone(),
            OptimizerKind::SgdMomentum { .. } => ParamStore::new(),
        };
        OptimizerState {
            kind,
            lr,
            step: 0,
            trainable,
            m,
            v,
        }
    }

    /// Optimizer over every parameter of `params`.
    pub fn for_all(kind: OptimizerKind, lr: f64, params: &ParamStore<T>) -> Self {
        let names: Vec<String> = params.names().map(str::to_string).collect();
        Self::new(kind, lr, params, names.iter().map(String::as_str))
    }

    pub fn apply(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> Result<()> {
        for name in &self.trainable {
            let (Some(p), Some(g)) = (params.try_get(name), grads.try_get(name)) else {
                return Err(Error::Contract(format!(
                    "missing parameter or gradient `{name}`"
                )));
            };
            if p.shape() != g.shape() || p.shape() != self.m.get(name).shape() {
                return Err(Error::Contract(format!(
                    "shape mismatch for `{name}`: param {:?}, grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let lr = T::lit(self.lr);
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                let mu = T::lit(momentum);
                for name in &self.trainable {
                    let g = grads.get(name);
                    let vel = self.m.get_mut(name);
                    vel.zip_mut_with(g, |v, &gi| *v = mu * *v + gi);
                    params.get_mut(name).scaled_add(-lr, vel);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let c1 = T::lit(1.0 - beta1.powi(self.step as i32));
                let c2 = T::lit(1.0 - beta2.powi(self.step as i32));
                let eps = T::lit(eps);
                for name in &self.trainable {
                    let g = grads.get(name);
                    let m = self.m.get_mut(name);
                    m.zip_mut_with(g, |m, &gi| *m = b1 * *m + (T::one() - b1) * gi);
                    let v = self.v.get_mut(name);
                    v.zip_mut_with(g, |v, &gi| *v = b2 * *v + (T::one() - b2) * gi * gi);
                    let m = self.m.get(name);
                    let v = self.v.get(name);
                    let p = params.get_mut(name);
                    ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                        *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                    });
                }
            }
        }
        Ok(())
    }
}

//! SGD and Adam over [`ViTParams`].

use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::tensor::Tensor;
use crate::vit::{ViTParams, ViTWeights};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptimError {
    #[error("{name}: parameter has {params} values but gradient has {grads}")]
    Shape {
        name: String,
        params: usize,
        grads: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// `p ← p − lr·g`
pub fn sgd_step<T: Real>(params: &mut [T], grads: &[T], lr: T) {
    for (p, &g) in params.iter_mut().zip(grads) {
        *p = *p - lr * g;
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) {
    let one = T::one();
    let correct1 = one - beta1.powi(t as i32);
    let correct2 = one - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (one - beta1) * g;
        v[i] = beta2 * v[i] + (one - beta2) * g * g;
        let m_hat = m[i] / correct1;
        let v_hat = v[i] / correct2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer moments and step counter for a full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    /// Updates applied so far.
    pub step: u64,
    /// First and second moments (Adam only), shaped like the parameters.
    pub moments: Option<(ViTParams<T>, ViTParams<T>)>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, params: &ViTParams<T>) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam { .. } => {
                let zeros = params.map(|_, t| Tensor::zeros(t.shape().to_vec()));
                Some((zeros.clone(), zeros))
            }
        };
        Self {
            kind,
            step: 0,
            moments,
        }
    }

    /// Applies one update. Slots whose gradient is `None` are left alone.
    pub fn apply(
        &mut self,
        params: &mut ViTParams<T>,
        grads: &ViTWeights<Option<Tensor<T>>>,
        lr: f64,
    ) -> Result<(), OptimError> {
        let grad_slots = grads.named();
        for ((name, p), (_, g)) in params.named().iter().zip(&grad_slots) {
            if let Some(g) = g {
                if g.len() != p.len() {
                    return Err(OptimError::Shape {
                        name: name.clone(),
                        params: p.len(),
                        grads: g.len(),
                    });
                }
            }
        }
        self.step += 1;
        let lr = T::from_f64(lr);
        match (self.kind, self.moments.as_mut()) {
            (OptimizerKind::Adam { beta1, beta2, eps }, Some((m, v))) => {
                let (beta1, beta2, eps) =
                    (T::from_f64(beta1), T::from_f64(beta2), T::from_f64(eps));
                let slots = params
                    .named_mut()
                    .into_iter()
                    .zip(m.named_mut())
                    .zip(v.named_mut())
                    .zip(&grad_slots);
                for ((((_, p), (_, m)), (_, v)), (_, g)) in slots {
                    if let Some(g) = g {
                        adam_step(
                            p.data_mut(),
                            g.data(),
                            m.data_mut(),
                            v.data_mut(),
                            self.step,
                            lr,
                            beta1,
                            beta2,
                            eps,
                        );
                    }
                }
            }
            _ => {
                for ((_, p), (_, g)) in params.named_mut().into_iter().zip(&grad_slots) {
                    if let Some(g) = g {
                        sgd_step(p.data_mut(), g.data(), lr);
                    }
                }
            }
        }
        Ok(())
    }
}

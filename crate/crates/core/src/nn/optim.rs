//! Parameter updates: Adam with bias correction, plus plain SGD.

use serde::{Deserialize, Serialize};

use super::Parameter;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

pub enum Optimizer {
    Adam(Adam),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, params: &mut [Parameter], grads: &[Option<Vec<f64>>]) -> Result<()> {
        match self {
            Optimizer::Adam(adam) => adam.step(params, grads),
            Optimizer::Sgd { lr } => {
                for (i, param) in params.iter_mut().enumerate() {
                    if !param.trainable {
                        continue;
                    }
                    let Some(grad) = grads.get(i).and_then(|g| g.as_ref()) else {
                        continue;
                    };
                    check_finite(&param.name, grad)?;
                    for (p, g) in param.tensor.data_mut().iter_mut().zip(grad) {
                        *p -= *lr * g;
                    }
                }
                Ok(())
            }
        }
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        assert!(lr >= 0.0, "learning rate must be non-negative");
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Parameter], grads: &[Option<Vec<f64>>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, param) in params.iter_mut().enumerate() {
            if !param.trainable {
                continue;
            }
            let Some(grad) = grads.get(i).and_then(|g| g.as_ref()) else {
                continue;
            };
            check_finite(&param.name, grad)?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in param.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

fn check_finite(name: &str, grad: &[f64]) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::internal(format!(
            "non-finite gradient for parameter '{name}'"
        )));
    }
    Ok(())
}

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::backbone::TransformerBlock;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::config(format!("unknown optimizer `{other}` (expected adam or sgd)"))),
        }
    }
}

/// Adam with bias correction, or plain SGD when `kind` is `Sgd`.
pub(crate) struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Optimizer {
    pub(crate) fn new(kind: OptimizerKind, lr: f64, params: &TransformerBlock) -> Self {
        let zeros: Vec<ArrayD<f64>> = params
            .tensors()
            .iter()
            .map(|t| ArrayD::zeros(t.raw_dim()))
            .collect();
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub(crate) fn step(&mut self, params: &mut TransformerBlock, grads: &TransformerBlock) {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (mut p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    Zip::from(&mut p).and(&g).for_each(|p, &g| *p -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                for (((mut p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    Zip::from(&mut p).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
                }
            }
        }
    }
}

//! Parameter update rules.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

use super::network::{Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: i32,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Network) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => {
                let n = net.param_count();
                Optimizer::Adam {
                    lr,
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                    step: 0,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                }
            }
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        match self {
            Optimizer::Sgd { lr } => {
                for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
                    if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), g) {
                        for (p, d) in w.iter_mut().zip(gw).chain(b.iter_mut().zip(gb)) {
                            *p -= *lr * d;
                        }
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                let mut k = 0;
                for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
                    if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), g) {
                        for (p, &d) in w.iter_mut().zip(gw).chain(b.iter_mut().zip(gb)) {
                            m[k] = *beta1 * m[k] + (1.0 - *beta1) * d;
                            v[k] = *beta2 * v[k] + (1.0 - *beta2) * d * d;
                            let mhat = m[k] / c1;
                            let vhat = v[k] / c2;
                            *p -= *lr * mhat / (vhat.sqrt() + *eps);
                            k += 1;
                        }
                    }
                }
            }
        }
    }
}

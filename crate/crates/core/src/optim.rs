//! First-order optimizers whose state survives task boundaries.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Network, ParamId};
use crate::par::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Defaults to 1e-8 for Adam and 1e-10 for Adagrad.
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerConfig {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: match kind {
                OptimizerKind::Adagrad => 1e-10,
                _ => 1e-8,
            },
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adagrad(lr: f64) -> Self {
        Self::new(OptimizerKind::Adagrad, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }
}

/// `θ ← θ − lr·g`.
pub fn sgd_step<T: Real>(params: &mut [T], grads: &[T], lr: T) -> Result<()> {
    same_len(params.len(), grads.len())?;
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// `G ← G + g²; θ ← θ − lr·g / (√G + eps)`.
pub fn adagrad_step<T: Real>(params: &mut [T], grads: &[T], accum: &mut [T], lr: T, eps: T) -> Result<()> {
    same_len(params.len(), grads.len())?;
    same_len(params.len(), accum.len())?;
    for ((p, &g), a) in params.iter_mut().zip(grads).zip(accum.iter_mut()) {
        *a += g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
    Ok(())
}

/// Bias-corrected Adam update for one tensor; `step` is the already
/// incremented global step (1 on the first call).
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) -> Result<()> {
    same_len(params.len(), grads.len())?;
    same_len(params.len(), m.len())?;
    same_len(params.len(), v.len())?;
    let one = T::one();
    let bc1 = one - beta1.powi(step as i32);
    let bc2 = one - beta2.powi(step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (one - beta1) * g;
        *v = beta2 * *v + (one - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape("optimizer operand", &[a], &[b]));
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Slot<T> {
    Sgd,
    Adagrad { accum: Vec<T> },
    Adam { m: Vec<T>, v: Vec<T> },
}

/// Optimizer bound to one network for a whole experiment. State for
/// parameters created later (new heads) is added lazily with zeros;
/// nothing is ever reset.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u64,
    slots: Vec<Option<Slot<T>>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Number of `step` calls so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Ids that currently carry optimizer state.
    pub fn state_ids(&self) -> Vec<ParamId> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Adagrad accumulator of one parameter, if any.
    pub fn adagrad_accumulator(&self, id: ParamId) -> Option<&[T]> {
        match self.slots.get(id.0)?.as_ref()? {
            Slot::Adagrad { accum } => Some(accum),
            _ => None,
        }
    }

    fn new_slot(&self, len: usize) -> Slot<T> {
        match self.config.kind {
            OptimizerKind::Sgd => Slot::Sgd,
            OptimizerKind::Adagrad => Slot::Adagrad {
                accum: vec![T::zero(); len],
            },
            OptimizerKind::Adam => Slot::Adam {
                m: vec![T::zero(); len],
                v: vec![T::zero(); len],
            },
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        self.step += 1;
        if self.slots.len() < net.param_count() {
            self.slots.resize(net.param_count(), None);
        }
        let lr = T::lit(self.config.lr);
        let eps = T::lit(self.config.eps);
        let (b1, b2) = (T::lit(self.config.beta1), T::lit(self.config.beta2));
        for (id, g) in grads.iter() {
            if id.0 >= net.param_count() {
                return Err(Error::Config(format!("gradient for unknown parameter {}", id.0)));
            }
            let shape = net.param(id).shape().to_vec();
            g.expect_shape(net.name(id), &shape)?;
            if self.slots[id.0].is_none() {
                self.slots[id.0] = Some(self.new_slot(g.len()));
            }
            let slot = self.slots[id.0].as_mut().expect("slot");
            let p = net.param_mut(id).data_mut();
            match slot {
                Slot::Sgd => sgd_step(p, g.data(), lr)?,
                Slot::Adagrad { accum } => adagrad_step(p, g.data(), accum, lr, eps)?,
                Slot::Adam { m, v } => adam_step(p, g.data(), m, v, self.step, lr, b1, b2, eps)?,
            }
        }
        Ok(())
    }
}

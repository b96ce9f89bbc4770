use std::ops::Range;

use crate::error::Result;
use crate::nn::loss::batch_xent;
use crate::nn::network::{Network, ParamId};
use crate::nn::tensor::Tensor;
use crate::rng::{self, Rng, Stream};

/// A labelled batch for gradient checking.
#[derive(Debug, Clone)]
pub struct CheckBatch {
    pub inputs: Tensor<f64>,
    pub targets: Vec<usize>,
    pub active: Vec<Range<usize>>,
}

/// Compares backprop gradients of the mean masked cross-entropy against
/// central differences at up to `per_param` sampled entries of every
/// parameter tensor (all entries when the tensor is smaller). Returns the
/// largest `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(net: &Network<f64>, batch: &CheckBatch, eps: f64, per_param: usize, seed: u64) -> Result<f64> {
    let loss_of = |n: &Network<f64>| -> Result<f64> {
        let logits = n.logits(&batch.inputs)?;
        Ok(batch_xent(&logits, &batch.targets, &batch.active)?.0)
    };
    let (logits, cache) = net.forward(&batch.inputs)?;
    let (_, dlogits) = batch_xent(&logits, &batch.targets, &batch.active)?;
    let grads = net.backward(&cache, &dlogits, None)?;

    let mut probe = net.clone();
    let mut rng = rng::stream(seed, Stream::Holdout);
    let mut worst = 0.0f64;
    for id in net.param_ids().collect::<Vec<ParamId>>() {
        let len = net.param(id).len();
        let entries: Vec<usize> = if len <= per_param {
            (0..len).collect()
        } else {
            (0..per_param).map(|_| rng.random_range(0..len)).collect()
        };
        let analytic = grads.get(id).expect("all heads active");
        for i in entries {
            let orig = net.param(id).data()[i];
            probe.param_mut(id).data_mut()[i] = orig + eps;
            let up = loss_of(&probe)?;
            probe.param_mut(id).data_mut()[i] = orig - eps;
            let down = loss_of(&probe)?;
            probe.param_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

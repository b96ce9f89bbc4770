//! The shared mini-batch loop and per-task evaluation.

use std::ops::Range;

use crate::data::Processed;
use crate::error::{Error, Result};
use crate::methods::penalty::{heads_touched, ProbeSet};
use crate::methods::Method;
use crate::nn::{batch_xent, predict, HeadLayout, Network, Tensor};
use crate::optim::Optimizer;
use crate::par::Real;
use crate::rng;
use crate::scenario::{self, Scenario};

/// One task's examples in one split, with targets under a head layout.
#[derive(Debug, Clone)]
pub struct TaskPart<'a> {
    pub t: usize,
    pub data: &'a Processed,
    pub perm: Option<&'a [usize]>,
    pub indices: Vec<usize>,
    pub classes: Vec<usize>,
    pub targets: Vec<usize>,
    pub active: Range<usize>,
}

impl<'a> TaskPart<'a> {
    pub fn new(scenario: &'a Scenario, t: usize, data: &'a Processed, layout: &HeadLayout) -> Result<Self> {
        let task = scenario.task(t);
        let (split, active) = scenario::select(&data.labels, task, scenario.kind, scenario.head_policy, layout)?;
        let classes = split.indices.iter().map(|&i| data.labels[i]).collect();
        Ok(TaskPart {
            t,
            data,
            perm: task.permutation(),
            indices: split.indices,
            classes,
            targets: split.targets,
            active,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Keeps only the first `n` examples.
    pub fn truncate(&mut self, n: usize) {
        self.indices.truncate(n);
        self.classes.truncate(n);
        self.targets.truncate(n);
    }

    pub fn write_input(&self, pos: usize, out: &mut [f32]) {
        self.data.write_row(self.indices[pos], self.perm, out);
    }

    /// Pre-normalization pixels in model input order.
    pub fn raw_input(&self, pos: usize) -> Vec<f32> {
        let raw = self.data.raw(self.indices[pos]);
        match self.perm {
            Some(p) => p.iter().map(|&j| raw[j]).collect(),
            None => raw.to_vec(),
        }
    }
}

/// Examples of one or more task parts, addressed by a flat index.
#[derive(Debug, Clone)]
pub struct TaskSet<'a> {
    parts: Vec<TaskPart<'a>>,
    offsets: Vec<usize>,
}

impl<'a> TaskSet<'a> {
    pub fn new(parts: Vec<TaskPart<'a>>) -> Self {
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for p in &parts {
            acc += p.len();
            offsets.push(acc);
        }
        TaskSet { parts, offsets }
    }

    pub fn parts(&self) -> &[TaskPart<'a>] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.parts.first().map_or(0, |p| p.data.dim)
    }

    pub fn locate(&self, k: usize) -> (&TaskPart<'a>, usize) {
        let p = self.offsets.partition_point(|&o| o <= k) - 1;
        (&self.parts[p], k - self.offsets[p])
    }

    /// A view for the importance estimators: all examples, or the listed
    /// flat indices.
    pub fn probe<T: Real>(&self, picks: Option<Vec<usize>>) -> SetProbe<'_, 'a, T> {
        SetProbe {
            set: self,
            picks,
            _t: std::marker::PhantomData,
        }
    }
}

/// [`ProbeSet`] over a [`TaskSet`], optionally through an index list.
pub struct SetProbe<'s, 'a, T> {
    set: &'s TaskSet<'a>,
    picks: Option<Vec<usize>>,
    _t: std::marker::PhantomData<fn() -> T>,
}

impl<T: Real> SetProbe<'_, '_, T> {
    fn flat(&self, k: usize) -> usize {
        self.picks.as_ref().map_or(k, |p| p[k])
    }
}

impl<T: Real> ProbeSet<T> for SetProbe<'_, '_, T> {
    fn len(&self) -> usize {
        self.picks.as_ref().map_or(self.set.len(), Vec::len)
    }

    fn input(&self, k: usize) -> Vec<T> {
        let (part, pos) = self.set.locate(self.flat(k));
        let mut row = vec![0f32; part.data.dim];
        part.write_input(pos, &mut row);
        row.into_iter().map(|v| T::lit(v as f64)).collect()
    }

    fn active(&self, k: usize) -> Range<usize> {
        self.set.locate(self.flat(k)).0.active.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainStats {
    pub steps: u64,
    /// Mean training objective over the last epoch (penalty excluded).
    pub last_epoch_loss: f64,
}

/// Trains `net` on one task (or, for offline runs, a merged set). The
/// caller has already applied `layout` to the network.
#[allow(clippy::too_many_arguments)]
pub fn train_task<T: Real>(
    method: &mut Method<T>,
    net: &mut Network<T>,
    opt: &mut Optimizer<T>,
    scenario: &Scenario,
    layout: &HeadLayout,
    t: usize,
    set: &TaskSet<'_>,
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    if set.is_empty() {
        return Err(Error::Scenario(format!("task {t} has no training examples")));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::ConfigKey {
            key: "run.batch_size / run.epochs".into(),
            reason: "must be positive".into(),
        });
    }
    method.begin_task(net, scenario, t)?;
    let dim = set.dim();
    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..set.len()).collect();
    for _ in 0..cfg.epochs {
        rng::shuffle(method.shuffle_rng(), &mut order);
        let replay = method.buffer().is_some_and(|b| !b.is_empty());
        let fresh = if replay { (cfg.batch_size / 2).max(1) } else { cfg.batch_size };
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(fresh) {
            let mut rows = vec![0f32; chunk.len() * dim];
            let mut targets = Vec::with_capacity(chunk.len() * 2);
            let mut ranges = Vec::with_capacity(chunk.len() * 2);
            for (r, &k) in chunk.iter().enumerate() {
                let (part, pos) = set.locate(k);
                part.write_input(pos, &mut rows[r * dim..(r + 1) * dim]);
                targets.push(part.targets[pos]);
                ranges.push(part.active.clone());
            }
            if replay {
                method.append_replay(scenario, layout, chunk.len(), dim, &mut rows, &mut targets, &mut ranges)?;
            }
            let n = targets.len();
            let x = Tensor::from_vec(vec![n, dim], rows.into_iter().map(|v| T::lit(v as f64)).collect())?;
            loss_sum += step(method, net, opt, layout, &x, &targets, &ranges)?;
            batches += 1;
            stats.steps += 1;
        }
        stats.last_epoch_loss = loss_sum / batches.max(1) as f64;
    }
    method.end_task(net, scenario, layout, t, set)?;
    Ok(stats)
}

fn step<T: Real>(
    method: &mut Method<T>,
    net: &mut Network<T>,
    opt: &mut Optimizer<T>,
    layout: &HeadLayout,
    x: &Tensor<T>,
    targets: &[usize],
    ranges: &[Range<usize>],
) -> Result<f64> {
    let (logits, cache) = net.forward(x)?;
    let (loss, dlogits) = method.task_loss(&logits, x, targets, ranges)?;
    let mut touched = ranges.to_vec();
    touched.extend_from_slice(method.teacher_ranges());
    let heads = heads_touched(layout, &touched);
    let mut grads = net.backward(&cache, &dlogits, Some(&heads))?;
    let tracking = method.before_step(net, &grads);
    method.add_penalty_grad(net, &mut grads);
    opt.step(net, &grads)?;
    method.after_step(net, tracking);
    Ok(loss.as_f64())
}

/// Top-1 accuracy on a test part, reading out its active logits.
pub fn evaluate<T: Real>(net: &Network<T>, part: &TaskPart<'_>, batch_size: usize) -> Result<f64> {
    if part.is_empty() {
        return Err(Error::Scenario(format!("task {} has no test examples", part.t)));
    }
    let dim = part.data.dim;
    let batch = batch_size.max(1);
    let mut correct = 0usize;
    for start in (0..part.len()).step_by(batch) {
        let end = (start + batch).min(part.len());
        let mut rows = vec![0f32; (end - start) * dim];
        for pos in start..end {
            part.write_input(pos, &mut rows[(pos - start) * dim..(pos - start + 1) * dim]);
        }
        let x = Tensor::from_vec(vec![end - start, dim], rows.into_iter().map(|v| T::lit(v as f64)).collect())?;
        let logits = net.logits(&x)?;
        let active = vec![part.active.clone(); end - start];
        let pred = predict(&logits, &active);
        correct += pred.iter().zip(&part.targets[start..end]).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / part.len() as f64)
}

/// Mean cross-entropy of `net` on a part, for diagnostics.
pub fn mean_loss<T: Real>(net: &Network<T>, part: &TaskPart<'_>) -> Result<f64> {
    let dim = part.data.dim;
    let mut rows = vec![0f32; part.len() * dim];
    for pos in 0..part.len() {
        part.write_input(pos, &mut rows[pos * dim..(pos + 1) * dim]);
    }
    let x = Tensor::from_vec(vec![part.len(), dim], rows.into_iter().map(|v| T::lit(v as f64)).collect())?;
    let logits = net.logits(&x)?;
    let (l, _) = batch_xent(&logits, &part.targets, &vec![part.active.clone(); part.len()])?;
    Ok(l.as_f64())
}

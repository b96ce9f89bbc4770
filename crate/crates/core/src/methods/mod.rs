//! Continual-learning methods as plug-ins to one training loop:
//! fine-tuning, quadratic penalties (L2, EWC, online EWC, SI, MAS),
//! distillation (LwF) and naive rehearsal.

pub mod lwf;
pub mod penalty;
pub mod replay;
pub mod train;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{batch_xent, Gradients, HeadLayout, Network, ParamId, Tensor};
use crate::par::Real;
use crate::rng::{self, Stream, StreamRng};
use crate::scenario::{LayoutPolicy, Scenario, ScenarioKind};

pub use lwf::{distill_kl, lwf_batch, lwf_loss};
pub use penalty::{
    accumulate_consolidate, ewc_consolidate, fisher_diag, l2_consolidate, mas_importance, sample_predicted_labels, snapshot,
    Consolidated, EwcMode, ParamVec, PenaltyState, ProbeList, ProbeSet, SiTracker,
};
pub use replay::{capacity_from_overhead, Compression, ReplayBuffer, Stored, StoredPixels};
pub use train::{evaluate, train_task, TaskPart, TaskSet, TrainConfig, TrainStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    #[default]
    Finetune,
    L2,
    Ewc,
    OnlineEwc,
    Si,
    Mas,
    Lwf,
    Rehearsal,
}

impl MethodKind {
    pub const ALL: [MethodKind; 8] = [
        MethodKind::Finetune,
        MethodKind::L2,
        MethodKind::Ewc,
        MethodKind::OnlineEwc,
        MethodKind::Si,
        MethodKind::Mas,
        MethodKind::Lwf,
        MethodKind::Rehearsal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Finetune => "finetune",
            MethodKind::L2 => "l2",
            MethodKind::Ewc => "ewc",
            MethodKind::OnlineEwc => "online_ewc",
            MethodKind::Si => "si",
            MethodKind::Mas => "mas",
            MethodKind::Lwf => "lwf",
            MethodKind::Rehearsal => "rehearsal",
        }
    }

    /// Methods driven by a quadratic penalty with coefficient λ.
    pub fn is_penalty(self) -> bool {
        matches!(self, MethodKind::L2 | MethodKind::Ewc | MethodKind::OnlineEwc | MethodKind::Si | MethodKind::Mas)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Method selection and hyperparameters (`[method]` in run configs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// Penalty coefficient λ.
    pub lambda: f64,
    /// Online-EWC decay γ.
    pub gamma: f64,
    /// SI damping ξ.
    pub xi: f64,
    /// Examples used for Fisher / MAS estimates; all when unset.
    pub fisher_samples: Option<usize>,
    pub lwf_temperature: f64,
    pub lwf_alpha: f64,
    /// Replay capacity in images; derived from the network's trunk size
    /// when unset.
    pub buffer_capacity: Option<usize>,
    pub compression: Compression,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            kind: MethodKind::Finetune,
            lambda: 0.0,
            gamma: 1.0,
            xi: 0.1,
            fisher_samples: None,
            lwf_temperature: 2.0,
            lwf_alpha: 0.5,
            buffer_capacity: None,
            compression: Compression::Float32,
        }
    }
}

impl MethodConfig {
    pub fn new(kind: MethodKind) -> Self {
        MethodConfig { kind, ..Default::default() }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::ConfigKey {
                key: format!("method.{key}"),
                reason: reason.into(),
            })
        };
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be a finite value >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if self.xi.is_nan() || self.xi <= 0.0 {
            return bad("xi", "must be > 0");
        }
        if self.lwf_temperature.is_nan() || self.lwf_temperature <= 0.0 {
            return bad("lwf_temperature", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.lwf_alpha) {
            return bad("lwf_alpha", "must lie in [0, 1]");
        }
        if self.fisher_samples == Some(0) {
            return bad("fisher_samples", "must be positive");
        }
        Ok(())
    }

    /// Replay capacity for `net`: the configured value or the number of
    /// images matching twice the trunk weight count.
    pub fn resolved_capacity<T: Real>(&self, net: &Network<T>) -> usize {
        self.buffer_capacity
            .unwrap_or_else(|| capacity_from_overhead(2 * net.trunk_weight_scalars(), net.input_dim(), self.compression))
    }
}

/// Snapshot of the parameters before an optimizer step plus the task-loss
/// gradient, for the SI path integral.
pub struct StepTrace<T> {
    before: ParamVec<T>,
    grads: Gradients<T>,
}

/// All per-run state of one method.
#[derive(Debug, Clone)]
pub struct Method<T> {
    config: MethodConfig,
    penalty: PenaltyState<T>,
    buffer: Option<ReplayBuffer>,
    teacher: Option<Network<T>>,
    teacher_ranges: Vec<Range<usize>>,
    multi_head: bool,
    shuffle: StreamRng,
    buffer_rng: StreamRng,
    fisher_rng: StreamRng,
}

impl<T: Real> Method<T> {
    pub fn new(config: MethodConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Method {
            config,
            penalty: PenaltyState::new(),
            buffer: None,
            teacher: None,
            teacher_ranges: Vec::new(),
            multi_head: false,
            shuffle: rng::stream(seed, Stream::Shuffle),
            buffer_rng: rng::stream(seed, Stream::Buffer),
            fisher_rng: rng::stream(seed, Stream::Fisher),
        })
    }

    pub fn config(&self) -> &MethodConfig {
        &self.config
    }

    pub fn kind(&self) -> MethodKind {
        self.config.kind
    }

    pub fn penalty(&self) -> &PenaltyState<T> {
        &self.penalty
    }

    pub fn buffer(&self) -> Option<&ReplayBuffer> {
        self.buffer.as_ref()
    }

    pub(crate) fn shuffle_rng(&mut self) -> &mut StreamRng {
        &mut self.shuffle
    }

    pub(crate) fn teacher_ranges(&self) -> &[Range<usize>] {
        &self.teacher_ranges
    }

    /// Whether parameter `id` is subject to consolidation: everything
    /// except heads of multi-headed layouts.
    pub fn regularized(&self, net: &Network<T>, id: ParamId) -> bool {
        !(self.multi_head && net.is_head_param(id))
    }

    fn keep_mask(&self, net: &Network<T>) -> Vec<bool> {
        net.param_ids().map(|id| self.regularized(net, id)).collect()
    }

    pub(crate) fn begin_task(&mut self, net: &Network<T>, scenario: &Scenario, t: usize) -> Result<()> {
        self.multi_head = scenario.head_policy.layout == LayoutPolicy::MultiHead;
        match self.config.kind {
            MethodKind::Rehearsal if self.buffer.is_none() => {
                self.buffer = Some(ReplayBuffer::new(self.config.resolved_capacity(net), self.config.compression));
            }
            MethodKind::Si => {
                let keep = self.keep_mask(net);
                let si = self.penalty.si.get_or_insert_with(|| SiTracker::new(snapshot(net, |id| keep[id.0])));
                // parameters born since the last consolidation start tracking now
                for id in net.param_ids() {
                    if keep[id.0] && si.w.get(id.0).is_none_or(|w| w.is_none()) {
                        if si.w.len() <= id.0 {
                            si.w.resize(id.0 + 1, None);
                            si.start.resize(id.0 + 1, None);
                        }
                        si.w[id.0] = Some(vec![T::zero(); net.param(id).len()]);
                        si.start[id.0] = Some(net.param(id).data().to_vec());
                    }
                }
            }
            MethodKind::Lwf => {
                self.teacher_ranges = if t > 1 { teacher_ranges(scenario, t)? } else { Vec::new() };
                self.teacher = (t > 1).then(|| net.clone());
            }
            _ => {}
        }
        Ok(())
    }

    /// Task objective and its logit gradient (cross-entropy, or the LwF
    /// mix once a teacher exists).
    pub(crate) fn task_loss(&self, logits: &Tensor<T>, x: &Tensor<T>, targets: &[usize], ranges: &[Range<usize>]) -> Result<(T, Tensor<T>)> {
        match (&self.teacher, self.config.kind) {
            (Some(teacher), MethodKind::Lwf) => {
                let old = teacher.logits(x)?;
                lwf_batch(
                    logits,
                    Some(&old),
                    targets,
                    ranges,
                    &self.teacher_ranges,
                    T::lit(self.config.lwf_temperature),
                    T::lit(self.config.lwf_alpha),
                )
            }
            _ => batch_xent(logits, targets, ranges),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn append_replay(
        &mut self,
        scenario: &Scenario,
        layout: &HeadLayout,
        k: usize,
        dim: usize,
        rows: &mut Vec<f32>,
        targets: &mut Vec<usize>,
        ranges: &mut Vec<Range<usize>>,
    ) -> Result<()> {
        let Some(buffer) = &self.buffer else { return Ok(()) };
        for item in buffer.sample(k, &mut self.buffer_rng) {
            let start = rows.len();
            rows.resize(start + dim, 0.0);
            item.write_input(&mut rows[start..]);
            let (target, range) = scenario.present(item.class, item.task, layout)?;
            targets.push(target);
            ranges.push(range);
        }
        Ok(())
    }

    pub(crate) fn before_step(&self, net: &Network<T>, grads: &Gradients<T>) -> Option<StepTrace<T>> {
        let si = self.penalty.si.as_ref()?;
        let before = net
            .param_ids()
            .map(|id| si.w.get(id.0).and_then(|w| w.as_ref()).map(|_| net.param(id).data().to_vec()))
            .collect();
        Some(StepTrace {
            before,
            grads: grads.clone(),
        })
    }

    pub(crate) fn add_penalty_grad(&self, net: &Network<T>, grads: &mut Gradients<T>) {
        if self.config.kind.is_penalty() && self.config.lambda != 0.0 {
            self.penalty.add_grad(net, T::lit(self.config.lambda), grads);
        }
    }

    pub(crate) fn after_step(&mut self, net: &Network<T>, trace: Option<StepTrace<T>>) {
        if let (Some(si), Some(trace)) = (self.penalty.si.as_mut(), trace) {
            si.track_step(net, &trace.before, &trace.grads);
        }
    }

    fn probe_picks(&mut self, n: usize) -> Option<Vec<usize>> {
        match self.config.fisher_samples {
            Some(k) if k > n => {
                log::warn!("fisher_samples {k} exceeds the {n} available examples; using all");
                None
            }
            Some(k) if k < n => {
                let mut picks = rng::sample_without_replacement(&mut self.fisher_rng, n, k);
                picks.sort_unstable();
                Some(picks)
            }
            _ => None,
        }
    }

    pub(crate) fn end_task(&mut self, net: &Network<T>, scenario: &Scenario, layout: &HeadLayout, t: usize, set: &TaskSet<'_>) -> Result<()> {
        let _ = (scenario, layout);
        let keep = self.keep_mask(net);
        let keep_fn = |id: ParamId| keep.get(id.0).copied().unwrap_or(false);
        match self.config.kind {
            MethodKind::Finetune | MethodKind::Lwf => {}
            MethodKind::L2 => l2_consolidate(&mut self.penalty, snapshot(net, keep_fn)),
            MethodKind::Ewc | MethodKind::OnlineEwc => {
                let picks = self.probe_picks(set.len());
                let probe = set.probe::<T>(picks);
                let labels = sample_predicted_labels(net, &probe, &mut self.fisher_rng)?;
                let fisher = fisher_diag(net, &probe, &labels, &keep_fn)?;
                let mode = if self.config.kind == MethodKind::Ewc { EwcMode::MultiAnchor } else { EwcMode::Online };
                ewc_consolidate(&mut self.penalty, snapshot(net, keep_fn), fisher, mode, T::lit(self.config.gamma));
            }
            MethodKind::Si => {
                let current = snapshot(net, keep_fn);
                let si = self.penalty.si.as_mut().expect("tracker created at task start");
                let omega = si.consolidate(T::lit(self.config.xi), current.clone());
                accumulate_consolidate(&mut self.penalty, current, omega);
            }
            MethodKind::Mas => {
                let picks = self.probe_picks(set.len());
                let probe = set.probe::<T>(picks);
                let omega = mas_importance(net, &probe, &keep_fn)?;
                accumulate_consolidate(&mut self.penalty, snapshot(net, keep_fn), omega);
            }
            MethodKind::Rehearsal => {
                let compression = self.config.compression;
                let buffer = self.buffer.as_mut().expect("buffer created at task start");
                for part in set.parts() {
                    let task = part.t;
                    let stats = part.data.stats;
                    buffer.update(
                        part.len(),
                        |pos| Stored::new(&part.raw_input(pos), stats, part.classes[pos], task, compression),
                        &mut self.buffer_rng,
                    );
                }
            }
        }
        log::debug!("{} consolidated after task {t}", self.config.kind);
        Ok(())
    }
}

/// Logit ranges the LwF teacher is distilled on during task `t`: each old
/// head for multi-headed layouts, otherwise the units of classes seen so far.
pub fn teacher_ranges(scenario: &Scenario, t: usize) -> Result<Vec<Range<usize>>> {
    let prev = scenario.output_layout(t - 1)?;
    Ok(match scenario.kind {
        ScenarioKind::IncrementalTask => (0..prev.heads.len()).map(|h| prev.range(h)).collect(),
        ScenarioKind::IncrementalDomain => std::iter::once(0..prev.total_units()).collect(),
        ScenarioKind::IncrementalClass => {
            let seen: usize = scenario.tasks[..t - 1].iter().map(|task| task.class_count()).sum();
            std::iter::once(0..seen).collect()
        }
    })
}

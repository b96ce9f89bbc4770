//! Quadratic consolidation penalties and the importance estimators behind
//! them.

use std::ops::Range;

use crate::error::Result;
use crate::nn::{masked_softmax, masked_softmax_xent, Gradients, HeadLayout, Network, ParamId, Tensor};
use crate::par::{self, Real};
use crate::rng::{Rng, StreamRng};

/// Per-parameter values keyed by registry index; `None` where a parameter
/// did not exist (or was not regularized) when the values were taken.
pub type ParamVec<T> = Vec<Option<Vec<T>>>;

/// One anchor/importance pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Consolidated<T> {
    pub anchor: ParamVec<T>,
    pub omega: ParamVec<T>,
}

impl<T: Real> Consolidated<T> {
    /// Number of stored scalars (anchor plus importance).
    pub fn scalars(&self) -> usize {
        let n = |v: &ParamVec<T>| v.iter().flatten().map(Vec::len).sum::<usize>();
        n(&self.anchor) + n(&self.omega)
    }
}

/// Running state of the synaptic-intelligence path integral.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiTracker<T> {
    pub w: ParamVec<T>,
    /// Parameters at the start of the current task.
    pub start: ParamVec<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PenaltyState<T> {
    /// One entry per task for multi-anchor EWC, at most one otherwise.
    pub terms: Vec<Consolidated<T>>,
    pub si: Option<SiTracker<T>>,
}

impl<T: Real> PenaltyState<T> {
    pub fn new() -> Self {
        PenaltyState { terms: Vec::new(), si: None }
    }

    /// Every stored importance value, for audits.
    pub fn omegas(&self) -> impl Iterator<Item = T> + '_ {
        self.terms.iter().flat_map(|c| c.omega.iter().flatten().flatten().copied())
    }

    /// `λ/2 · Σ Ω (θ − θ*)²` over all terms.
    pub fn loss(&self, net: &Network<T>, lambda: T) -> T {
        let mut total = T::zero();
        for term in &self.terms {
            for (i, (a, o)) in term.anchor.iter().zip(&term.omega).enumerate() {
                if let (Some(a), Some(o)) = (a, o) {
                    let p = net.param(ParamId(i)).data();
                    for ((&p, &a), &o) in p.iter().zip(a).zip(o) {
                        let d = p - a;
                        total += o * d * d;
                    }
                }
            }
        }
        lambda * total / T::lit(2.0)
    }

    /// Adds `λ Ω (θ − θ*)` to every gradient entry that is present.
    pub fn add_grad(&self, net: &Network<T>, lambda: T, grads: &mut Gradients<T>) {
        for term in &self.terms {
            for (i, (a, o)) in term.anchor.iter().zip(&term.omega).enumerate() {
                let (Some(a), Some(o)) = (a, o) else { continue };
                let Some(g) = grads.get_mut(ParamId(i)) else { continue };
                let p = net.param(ParamId(i)).data();
                for (((g, &p), &a), &o) in g.data_mut().iter_mut().zip(p).zip(a).zip(o) {
                    *g += lambda * o * (p - a);
                }
            }
        }
    }
}

/// Snapshot of the regularized parameters.
pub fn snapshot<T: Real>(net: &Network<T>, keep: impl Fn(ParamId) -> bool) -> ParamVec<T> {
    net.param_ids()
        .map(|id| keep(id).then(|| net.param(id).data().to_vec()))
        .collect()
}

fn ones_like<T: Real>(v: &ParamVec<T>) -> ParamVec<T> {
    v.iter().map(|p| p.as_ref().map(|p| vec![T::one(); p.len()])).collect()
}

/// Identity-importance anchor used by L2.
pub fn l2_consolidate<T: Real>(state: &mut PenaltyState<T>, anchor: ParamVec<T>) {
    state.terms = vec![Consolidated {
        omega: ones_like(&anchor),
        anchor,
    }];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwcMode {
    MultiAnchor,
    Online,
}

/// Folds a new Fisher estimate into the state.
pub fn ewc_consolidate<T: Real>(state: &mut PenaltyState<T>, anchor: ParamVec<T>, fisher: ParamVec<T>, mode: EwcMode, gamma: T) {
    match mode {
        EwcMode::MultiAnchor => state.terms.push(Consolidated { anchor, omega: fisher }),
        EwcMode::Online => {
            let old = state.terms.pop();
            let omega = merge(old.map(|c| c.omega), fisher, |o, f| gamma * o + f);
            state.terms = vec![Consolidated { anchor, omega }];
        }
    }
}

/// Adds a fresh importance estimate to the running one (MAS, SI).
pub fn accumulate_consolidate<T: Real>(state: &mut PenaltyState<T>, anchor: ParamVec<T>, importance: ParamVec<T>) {
    let old = state.terms.pop();
    let omega = merge(old.map(|c| c.omega), importance, |o, f| o + f);
    state.terms = vec![Consolidated { anchor, omega }];
}

fn merge<T: Real>(old: Option<ParamVec<T>>, new: ParamVec<T>, f: impl Fn(T, T) -> T) -> ParamVec<T> {
    let old = old.unwrap_or_default();
    new.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let n = n?;
            Some(match old.get(i).and_then(|o| o.as_ref()) {
                Some(o) => o.iter().zip(&n).map(|(&o, &n)| f(o, n)).collect(),
                None => n.iter().map(|&n| f(T::zero(), n)).collect(),
            })
        })
        .collect()
}

impl<T: Real> SiTracker<T> {
    pub fn new(start: ParamVec<T>) -> Self {
        let w = start.iter().map(|p| p.as_ref().map(|p| vec![T::zero(); p.len()])).collect();
        SiTracker { w, start }
    }

    /// `w ← w − g·Δθ` for one optimizer step. `before` holds the
    /// parameters prior to the step, `grads` the task-loss gradient.
    pub fn track_step(&mut self, net: &Network<T>, before: &ParamVec<T>, grads: &Gradients<T>) {
        for (i, w) in self.w.iter_mut().enumerate() {
            let (Some(w), Some(Some(b)), Some(g)) = (w.as_mut(), before.get(i), grads.get(ParamId(i))) else {
                continue;
            };
            let p = net.param(ParamId(i)).data();
            for (((w, &g), &p), &b) in w.iter_mut().zip(g.data()).zip(p).zip(b) {
                *w -= g * (p - b);
            }
        }
    }

    /// `max(0, w / ((θ − θ_start)² + ξ))`, then resets `w` and moves the
    /// start to the current parameters. New parameters join with zero `w`.
    pub fn consolidate(&mut self, xi: T, current: ParamVec<T>) -> ParamVec<T> {
        let mut omega: ParamVec<T> = vec![None; current.len()];
        for (i, cur) in current.iter().enumerate() {
            let Some(cur) = cur else { continue };
            let contrib = match (self.w.get(i).and_then(|w| w.as_ref()), self.start.get(i).and_then(|s| s.as_ref())) {
                (Some(w), Some(s)) => w
                    .iter()
                    .zip(s)
                    .zip(cur)
                    .map(|((&w, &s), &c)| {
                        let d = c - s;
                        (w / (d * d + xi)).max(T::zero())
                    })
                    .collect(),
                _ => vec![T::zero(); cur.len()],
            };
            omega[i] = Some(contrib);
        }
        *self = SiTracker::new(current);
        omega
    }
}

/// Examples the importance estimators read: a model input and the logit
/// range it is read out on.
pub trait ProbeSet<T>: Sync {
    fn len(&self) -> usize;
    fn input(&self, k: usize) -> Vec<T>;
    fn active(&self, k: usize) -> Range<usize>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Explicit list of probe examples.
#[derive(Debug, Clone, Default)]
pub struct ProbeList<T> {
    pub inputs: Vec<Vec<T>>,
    pub active: Vec<Range<usize>>,
}

impl<T: Real> ProbeSet<T> for ProbeList<T> {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn input(&self, k: usize) -> Vec<T> {
        self.inputs[k].clone()
    }
    fn active(&self, k: usize) -> Range<usize> {
        self.active[k].clone()
    }
}

/// Logit ranges mapped onto heads of `layout`.
pub fn heads_touched(layout: &HeadLayout, ranges: &[Range<usize>]) -> Vec<bool> {
    (0..layout.heads.len())
        .map(|h| {
            let r = layout.range(h);
            ranges.iter().any(|a| r.start < a.end && a.start < r.end)
        })
        .collect()
}

const CHUNK: usize = 64;

type Stat<'s, T> = dyn Fn(&Tensor<T>, Range<usize>, usize) -> Tensor<T> + Sync + 's;

/// Averages per-example gradient statistics over `set`. Examples are
/// grouped in fixed chunks (processed in parallel when enabled) and the
/// chunk sums reduced in order, so results do not depend on thread count.
fn per_example_mean<T: Real>(
    net: &Network<T>,
    set: &dyn ProbeSet<T>,
    keep: &(dyn Fn(ParamId) -> bool + Sync),
    labels: &[usize],
    stat: &Stat<'_, T>,
    square: bool,
) -> Result<ParamVec<T>> {
    let zeros = || -> ParamVec<T> {
        net.param_ids()
            .map(|id| keep(id).then(|| vec![T::zero(); net.param(id).len()]))
            .collect()
    };
    let layout = net.layout();
    let chunks = set.len().div_ceil(CHUNK);
    let partials = par::map_range(chunks, |c| -> Result<ParamVec<T>> {
        let mut acc = zeros();
        for k in c * CHUNK..((c + 1) * CHUNK).min(set.len()) {
            let input = set.input(k);
            let active = set.active(k);
            let x = Tensor::from_vec(vec![1, input.len()], input)?;
            let (logits, cache) = net.forward(&x)?;
            let dlogits = stat(&logits, active.clone(), labels.get(k).copied().unwrap_or(0));
            let heads = heads_touched(&layout, &[active]);
            let g = net.backward(&cache, &dlogits, Some(&heads))?;
            for (id, gt) in g.iter() {
                if let Some(Some(a)) = acc.get_mut(id.0) {
                    for (a, &v) in a.iter_mut().zip(gt.data()) {
                        *a += if square { v * v } else { v.abs() };
                    }
                }
            }
        }
        Ok(acc)
    });
    let mut total = zeros();
    for p in partials {
        for (a, b) in total.iter_mut().zip(p?) {
            if let (Some(a), Some(b)) = (a.as_mut(), b) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
    }
    let n = T::lit(set.len().max(1) as f64);
    for v in total.iter_mut().flatten() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
    Ok(total)
}

/// One label per example drawn from the model's predictive distribution
/// over its active logits.
pub fn sample_predicted_labels<T: Real>(net: &Network<T>, set: &dyn ProbeSet<T>, rng: &mut StreamRng) -> Result<Vec<usize>> {
    const BATCH: usize = 256;
    let mut labels = Vec::with_capacity(set.len());
    for start in (0..set.len()).step_by(BATCH) {
        let end = (start + BATCH).min(set.len());
        let mut rows = Vec::new();
        for k in start..end {
            rows.extend(set.input(k));
        }
        let x = Tensor::from_vec(vec![end - start, rows.len() / (end - start)], rows)?;
        let logits = net.logits(&x)?;
        for k in start..end {
            let active = set.active(k);
            let row = logits.row(k - start);
            let mask: Vec<bool> = (0..row.len()).map(|j| active.contains(&j)).collect();
            let p = masked_softmax(row, &mask);
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut pick = active.end - 1;
            for j in active.clone() {
                cum += p[j].as_f64();
                if u < cum {
                    pick = j;
                    break;
                }
            }
            labels.push(pick);
        }
    }
    Ok(labels)
}

/// Diagonal Fisher: mean squared gradient of `log p(y|x)` with `y` given
/// per example (normally drawn by [`sample_predicted_labels`]).
pub fn fisher_diag<T: Real>(
    net: &Network<T>,
    set: &dyn ProbeSet<T>,
    labels: &[usize],
    keep: &(dyn Fn(ParamId) -> bool + Sync),
) -> Result<ParamVec<T>> {
    let stat = |logits: &Tensor<T>, active: Range<usize>, y: usize| {
        let mask: Vec<bool> = (0..logits.len()).map(|j| active.contains(&j)).collect();
        let (_, g) = masked_softmax_xent(logits.data(), y, &mask).expect("label inside active range");
        Tensor::from_vec(logits.shape().to_vec(), g).expect("logit shape")
    };
    per_example_mean(net, set, keep, labels, &stat, true)
}

/// MAS importance: mean over examples of `|∂‖f(x)‖² / ∂θ|`, with `f` the
/// active logits.
pub fn mas_importance<T: Real>(net: &Network<T>, set: &dyn ProbeSet<T>, keep: &(dyn Fn(ParamId) -> bool + Sync)) -> Result<ParamVec<T>> {
    let stat = |logits: &Tensor<T>, active: Range<usize>, _: usize| {
        let mut g = vec![T::zero(); logits.len()];
        for j in active {
            g[j] = T::lit(2.0) * logits.data()[j];
        }
        Tensor::from_vec(logits.shape().to_vec(), g).expect("logit shape")
    };
    per_example_mean(net, set, keep, &[], &stat, false)
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use crate::nn::{build_model, Arch, HeadInit, HeadLayout};

    fn net() -> Network<f64> {
        build_model(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2, 2]), HeadInit::Random, 3).unwrap()
    }

    #[test]
    fn l2_hand_value() {
        let n = net();
        let mut state = PenaltyState::new();
        let mut anchor = snapshot(&n, |_| true);
        for a in anchor.iter_mut().flatten() {
            a.iter_mut().for_each(|v| *v -= 2.0);
        }
        l2_consolidate(&mut state, anchor);
        let count = n.num_scalars() as f64;
        assert!((state.loss(&n, 1.0) - 2.0 * count).abs() < 1e-6 * count);
        assert_eq!(state.loss(&n, 0.0), 0.0);
        let mut same = PenaltyState::new();
        l2_consolidate(&mut same, snapshot(&n, |_| true));
        assert_eq!(same.loss(&n, 5.0), 0.0);
    }

    #[test]
    fn online_gamma_one_sums() {
        let n = net();
        let f = |v: f64| -> ParamVec<f64> { n.param_ids().map(|id| Some(vec![v; n.param(id).len()])).collect() };
        let mut online = PenaltyState::new();
        ewc_consolidate(&mut online, snapshot(&n, |_| true), f(1.5), EwcMode::Online, 1.0);
        ewc_consolidate(&mut online, snapshot(&n, |_| true), f(2.0), EwcMode::Online, 1.0);
        assert_eq!(online.terms.len(), 1);
        assert!(online.omegas().all(|o| o == 3.5));
        let mut multi = PenaltyState::new();
        ewc_consolidate(&mut multi, snapshot(&n, |_| true), f(1.5), EwcMode::MultiAnchor, 1.0);
        ewc_consolidate(&mut multi, snapshot(&n, |_| true), f(2.0), EwcMode::MultiAnchor, 1.0);
        assert_eq!(multi.terms.len(), 2);
    }

    #[test]
    fn si_single_step_hand_trace() {
        let n = build_model::<f64>(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2]), HeadInit::Random, 0).unwrap();
        let mut moved = n.clone();
        let id = ParamId(0);
        let (g, lr, xi) = (2.0, 0.01, 0.1);
        moved.param_mut(id).data_mut()[0] -= lr * g;
        let start = snapshot(&n, |_| true);
        let mut tr = SiTracker::new(start.clone());
        let mut grads = n.zero_gradients();
        grads.get_mut(id).unwrap().data_mut()[0] = g;
        tr.track_step(&moved, &start, &grads);
        let w = tr.w[0].as_ref().unwrap()[0];
        assert!((w - lr * g * g).abs() < 1e-12);
        let omega = tr.consolidate(xi, snapshot(&moved, |_| true));
        let d: f64 = lr * g;
        assert!((omega[0].as_ref().unwrap()[0] - 0.04 / (d * d + xi)).abs() < 1e-12);
        assert_eq!(omega[0].as_ref().unwrap()[1], 0.0);
    }

    #[test]
    fn mas_linear_unit() {
        // one active output y = w·x: |d(y²)/dw| = 2|y||x|
        let n = build_model::<f64>(Arch::Mlp256x2, 784, &HeadLayout::new(vec![1]), HeadInit::Random, 5).unwrap();
        let x: Vec<f64> = (0..784).map(|i| ((i % 7) as f64 - 3.0) / 10.0).collect();
        let probes = ProbeList { inputs: vec![x.clone()], active: vec![0..1] };
        let omega = mas_importance(&n, &probes, &|_| true).unwrap();
        let (hw, hb) = n.head_params(0);
        let y = n.logits(&Tensor::from_vec(vec![1, 784], x.clone()).unwrap()).unwrap().data()[0];
        assert!((omega[hb.0].as_ref().unwrap()[0] - 2.0 * y.abs()).abs() < 1e-9);
        assert!(omega.iter().flatten().flatten().all(|&v| v >= 0.0));
        assert_eq!(omega[hw.0].as_ref().unwrap().len(), 256);
    }

    #[test]
    fn fisher_single_example_is_squared_gradient() {
        let n = net();
        let x: Vec<f64> = (0..784).map(|i| (i as f64 * 0.37).sin()).collect();
        let probes = ProbeList { inputs: vec![x.clone()], active: vec![2..4] };
        let f = fisher_diag(&n, &probes, &[3], &|_| true).unwrap();
        let xt = Tensor::from_vec(vec![1, 784], x.clone()).unwrap();
        let (logits, cache) = n.forward(&xt).unwrap();
        let (_, g) = crate::nn::batch_xent(&logits, &[3], &[2..4]).unwrap();
        let grads = n.backward(&cache, &g, Some(&[false, true])).unwrap();
        for (id, gt) in grads.iter() {
            let fi = f[id.0].as_ref().unwrap();
            for (a, b) in fi.iter().zip(gt.data()) {
                assert!((a - b * b).abs() < 1e-12);
            }
        }
        // head 0 saw nothing
        assert!(f[n.head_params(0).0 .0].as_ref().unwrap().iter().all(|&v| v == 0.0));
    }
}

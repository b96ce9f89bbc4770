//! Shared fixtures and property checks. The acceptance target and the
//! regular integration tests both call these.

#![allow(dead_code)]

use std::path::Path;

use clbench::data::{write_idx, DatasetId, ImageSet, NormStats, PreparedDataset};
use clbench::harness::{build_scenario, load_datasets, ExperimentConfig};
use clbench::methods::{
    evaluate, train_task, Compression, Method, ReplayBuffer, Stored, TaskPart, TaskSet, TrainConfig, TrainStats,
};
use clbench::nn::{build_model, gradient_check, masked_softmax_xent, Arch, CheckBatch, HeadInit, HeadLayout, Network, Tensor};
use clbench::optim::Optimizer;
use clbench::rng::{self, Rng, Stream};
use clbench::scenario::{task_permutation, Scenario};

pub type Check = Result<(), String>;

/// Ten-class 28x28 images: each class lights a distinct 6x6 block over
/// low-level noise.
pub fn synth_set(per_class: usize, seed: u64) -> ImageSet {
    let mut r = rng::stream(seed, Stream::Holdout);
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    for i in 0..per_class * 10 {
        let c = i % 10;
        let (row0, col0) = (3 + (c / 5) * 12, 1 + (c % 5) * 5);
        for y in 0..28 {
            for x in 0..28 {
                let on = (row0..row0 + 6).contains(&y) && (col0..col0 + 6).contains(&x);
                let v: u8 = if on { r.random_range(170..=255) } else { r.random_range(0..50) };
                pixels.push(v);
            }
        }
        labels.push(c);
    }
    ImageSet::new("mnist".into(), pixels, 28, 28, 1, labels, 10).expect("synthetic set")
}

/// Writes a synthetic `mnist/` directory under `root`.
pub fn write_synth_mnist(root: &Path, train_per_class: usize, test_per_class: usize) {
    let f = DatasetId::Mnist.files(root);
    std::fs::create_dir_all(f[0].parent().unwrap()).unwrap();
    write_idx(&synth_set(train_per_class, 1), &f[0], &f[1]).unwrap();
    write_idx(&synth_set(test_per_class, 2), &f[2], &f[3]).unwrap();
}

/// A small split config over the synthetic data.
pub fn split_config(kind: &str, method: &str, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
        [scenario]
        generator = "split"
        dataset = "mnist"
        kind = "{kind}"

        [model]
        arch = "mlp256x2"

        [method]
        kind = "{method}"
        {extra}

        [optimizer]
        kind = "adam"

        [run]
        epochs = 1
        batch_size = 16
        seeds = [0]
        "#
    );
    ExperimentConfig::from_toml(&text, &[]).expect("config")
}

pub fn synth_datasets(root: &Path, config: &ExperimentConfig) -> Vec<PreparedDataset> {
    if !DatasetId::Mnist.is_available(root) {
        write_synth_mnist(root, 30, 10);
    }
    load_datasets(config, root).expect("datasets")
}

/// Everything observable after one task.
pub struct TaskEnd<'a> {
    pub t: usize,
    pub net: &'a Network<f32>,
    pub opt: &'a Optimizer<f32>,
    pub method: &'a Method<f32>,
    pub stats: TrainStats,
    pub accs: Vec<f64>,
    pub train_len: usize,
}

/// Sequential training loop mirroring the harness, with a per-task hook.
pub fn run_tasks(
    config: &ExperimentConfig,
    data: &[PreparedDataset],
    seed: u64,
    mut hook: impl FnMut(TaskEnd<'_>) -> Check,
) -> Result<(Network<f32>, Vec<Vec<f64>>), String> {
    let e = |x: clbench::Error| x.to_string();
    let scenario: Scenario = build_scenario(config, data, seed).map_err(e)?;
    let mut net: Network<f32> = build_model(
        config.arch(),
        data[0].dim(),
        &scenario.output_layout(1).map_err(e)?,
        config.head_policy().head_init,
        seed,
    )
    .map_err(e)?;
    let mut opt = Optimizer::new(config.optimizer_config());
    let mut method = Method::new(config.method, seed).map_err(e)?;
    let cfg = TrainConfig {
        epochs: config.epochs(),
        batch_size: config.run.batch_size,
    };
    let mut rows = Vec::new();
    for t in 1..=scenario.len() {
        let layout = scenario.output_layout(t).map_err(e)?;
        net.ensure_heads(&layout).map_err(e)?;
        let src = scenario.task(t).source;
        let part = TaskPart::new(&scenario, t, &data[src].train, &layout).map_err(e)?;
        let train_len = part.len();
        let stats = train_task(&mut method, &mut net, &mut opt, &scenario, &layout, t, &TaskSet::new(vec![part]), &cfg).map_err(e)?;
        let accs = (1..=t)
            .map(|j| {
                let d = &data[scenario.task(j).source].test;
                evaluate(&net, &TaskPart::new(&scenario, j, d, &layout)?, 256)
            })
            .collect::<clbench::Result<Vec<f64>>>()
            .map_err(e)?;
        hook(TaskEnd {
            t,
            net: &net,
            opt: &opt,
            method: &method,
            stats,
            accs: accs.clone(),
            train_len,
        })?;
        rows.push(accs);
    }
    Ok((net, rows))
}

/// Worst relative gradient error of each named architecture in 64-bit.
pub fn gradcheck_errors() -> Result<Vec<(&'static str, f64)>, String> {
    let e = |x: clbench::Error| x.to_string();
    let mut out = Vec::new();
    for (arch, batch, name) in [(Arch::Mlp400, 3, "mlp400"), (Arch::Mlp256x2, 4, "mlp256x2"), (Arch::CnnSmall, 2, "cnn_small")] {
        let layout = HeadLayout::new(vec![2, 3]);
        let net: Network<f64> = build_model(arch, arch.input_dim(), &layout, HeadInit::Random, 7).map_err(e)?;
        let mut r = rng::stream(11, Stream::Holdout);
        let dim = arch.input_dim();
        let inputs = Tensor::from_vec(vec![batch, dim], (0..batch * dim).map(|_| r.random_range(-1.0..1.0)).collect()).map_err(e)?;
        // alternate between the two heads so both receive gradient
        let active: Vec<_> = (0..batch).map(|i| layout.range(i % 2)).collect();
        let targets = active.iter().enumerate().map(|(i, a)| a.start + i % a.len()).collect();
        let err = gradient_check(&net, &CheckBatch { inputs, targets, active }, 1e-6, 24, 3).map_err(e)?;
        out.push((name, err));
    }
    Ok(out)
}

pub fn check_gradients() -> Check {
    for (name, err) in gradcheck_errors()? {
        if err.is_nan() || err >= 1e-4 {
            return Err(format!("{name}: max relative error {err:.3e} >= 1e-4"));
        }
    }
    Ok(())
}

/// Every penalty method at λ = 0 reproduces fine-tuning bit for bit.
pub fn check_lambda_zero(root: &Path) -> Check {
    for kind in ["incremental_task", "incremental_class"] {
        let base = split_config(kind, "finetune", "");
        let data = synth_datasets(root, &base);
        let (ref_net, ref_rows) = run_tasks(&base, &data, 3, |_| Ok(()))?;
        for m in ["l2", "ewc", "online_ewc", "si", "mas"] {
            let cfg = split_config(kind, m, "lambda = 0.0");
            let (net, rows) = run_tasks(&cfg, &data, 3, |_| Ok(()))?;
            if rows != ref_rows {
                return Err(format!("{m}/{kind}: accuracies differ from finetune"));
            }
            if net.state() != ref_net.state() {
                return Err(format!("{m}/{kind}: weights differ from finetune"));
            }
        }
    }
    Ok(())
}

/// Capacity, quota and provenance invariants of one update sequence.
pub fn check_buffer_sequence(capacity: usize, candidates: &[usize], seed: u64) -> Check {
    let mut r = rng::stream(seed, Stream::Buffer);
    let mut b = ReplayBuffer::new(capacity, Compression::Float32);
    for (i, &n) in candidates.iter().enumerate() {
        let t = i + 1;
        let before = b.slot_sizes();
        b.update(n, |j| Stored::new(&[j as f32], NormStats::IDENTITY, j % 10, t, Compression::Float32), &mut r);
        let sizes = b.slot_sizes();
        if sizes.len() != t {
            return Err(format!("{} slots after {t} tasks", sizes.len()));
        }
        if b.len() > capacity {
            return Err(format!("{} items exceed capacity {capacity}", b.len()));
        }
        if capacity == 0 {
            continue;
        }
        for (k, &s) in sizes.iter().enumerate() {
            let q = b.quota(t, k);
            if s > q {
                return Err(format!("slot {k} holds {s} > quota {q}"));
            }
            if k < before.len() && s != before[k].min(q) {
                return Err(format!("slot {k} shrank from {} to {s}, quota {q}", before[k]));
            }
        }
        let newest = sizes[t - 1];
        if newest != n.min(b.quota(t, t - 1)) {
            return Err(format!("new slot holds {newest} of {n} candidates"));
        }
        for (k, slot) in b.slots().iter().enumerate() {
            if slot.iter().any(|s| s.task != k + 1) {
                return Err(format!("slot {k} holds items of another task"));
            }
            let mut ids: Vec<u32> = slot.iter().map(|s| s.raw()[0] as u32).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() != slot.len() {
                return Err(format!("slot {k} holds duplicates"));
            }
        }
        // with enough candidates every slot sits exactly at its quota
        if candidates[..t].iter().all(|&c| c >= capacity) && sizes.iter().enumerate().any(|(k, &s)| s != b.quota(t, k)) {
            return Err(format!("unbalanced slots {sizes:?}"));
        }
    }
    Ok(())
}

/// `count` random update sequences.
pub fn check_buffer_random(count: usize) -> Check {
    let mut r = rng::stream(99, Stream::Holdout);
    for i in 0..count {
        let capacity = r.random_range(0..600);
        let tasks = r.random_range(1..12);
        let cands: Vec<usize> = (0..tasks).map(|_| r.random_range(0..400)).collect();
        check_buffer_sequence(capacity, &cands, i as u64).map_err(|e| format!("sequence {i} (cap {capacity}, {cands:?}): {e}"))?;
    }
    Ok(())
}

/// Task permutations are bijections, task 1 is the identity and the
/// scenario is a pure function of the seed.
pub fn check_permutations_and_determinism(root: &Path) -> Check {
    for seed in 0..5u64 {
        for t in 1..=10 {
            let p = task_permutation(seed, t, 1024);
            match (t, &p) {
                (1, None) => {}
                (1, Some(_)) => return Err("task 1 is permuted".into()),
                (_, None) => return Err(format!("task {t} has no permutation")),
                (_, Some(p)) => {
                    let mut s = p.clone();
                    s.sort_unstable();
                    if s != (0..1024).collect::<Vec<_>>() {
                        return Err(format!("seed {seed} task {t}: not a bijection"));
                    }
                    if task_permutation(seed, t, 1024).as_ref() != Some(p) {
                        return Err(format!("seed {seed} task {t}: not deterministic"));
                    }
                }
            }
        }
        if task_permutation(seed, 2, 1024) == task_permutation(seed + 1, 2, 1024) {
            return Err("permutation ignores the seed".into());
        }
    }
    let mut cfg = split_config("incremental_domain", "finetune", "");
    let data = synth_datasets(root, &cfg);
    cfg.scenario.generator = clbench::harness::Generator::Permuted;
    cfg.scenario.n_tasks = 4;
    let a = build_scenario(&cfg, &data, 5).map_err(|e| e.to_string())?;
    let b = build_scenario(&cfg, &data, 5).map_err(|e| e.to_string())?;
    if a.manifest() != b.manifest() {
        return Err("same seed, different scenario".into());
    }
    let c = Scenario::from_manifest(&a.manifest()).map_err(|e| e.to_string())?;
    if c.manifest() != a.manifest() {
        return Err("manifest does not round-trip".into());
    }
    if build_scenario(&cfg, &data, 6).map_err(|e| e.to_string())?.manifest() == a.manifest() {
        return Err("different seeds, same scenario".into());
    }
    let (_, r1) = run_tasks(&split_config("incremental_class", "ewc", "lambda = 10.0"), &data, 2, |_| Ok(()))?;
    let (_, r2) = run_tasks(&split_config("incremental_class", "ewc", "lambda = 10.0"), &data, 2, |_| Ok(()))?;
    if r1 != r2 {
        return Err("same (config, seed), different results".into());
    }
    Ok(())
}

/// Importances stay finite and non-negative after every consolidation.
pub fn check_omega_nonnegative(root: &Path) -> Check {
    for m in ["l2", "ewc", "online_ewc", "si", "mas"] {
        for kind in ["incremental_task", "incremental_class"] {
            let cfg = split_config(kind, m, "lambda = 1.0");
            let data = synth_datasets(root, &cfg);
            run_tasks(&cfg, &data, 4, |end| {
                let p = end.method.penalty();
                if p.terms.is_empty() {
                    return Err(format!("{m}/{kind}: nothing consolidated after task {}", end.t));
                }
                match p.omegas().find(|w| !(w.is_finite() && *w >= 0.0)) {
                    Some(w) => Err(format!("{m}/{kind} task {}: omega {w}", end.t)),
                    None => Ok(()),
                }
            })?;
        }
    }
    Ok(())
}

/// The optimizer counts every step and never resets across tasks.
pub fn check_step_audit(root: &Path) -> Check {
    for opt in ["sgd", "adagrad", "adam"] {
        let mut cfg = split_config("incremental_class", "rehearsal", "buffer_capacity = 40");
        cfg.optimizer.kind = opt.parse().map_err(|e: clbench::Error| e.to_string())?;
        cfg.run.epochs = Some(2);
        let data = synth_datasets(root, &cfg);
        let (mut total, mut last_ids) = (0u64, 0usize);
        run_tasks(&cfg, &data, 1, |end| {
            total += end.stats.steps;
            // rehearsal halves the fresh share once the buffer holds data
            let fresh = if end.t == 1 { 16 } else { 8 };
            let expect = (end.train_len.div_ceil(fresh) * 2) as u64;
            if end.stats.steps != expect {
                return Err(format!("{opt} task {}: {} steps, expected {expect}", end.t, end.stats.steps));
            }
            if end.opt.step_count() != total {
                return Err(format!("{opt} task {}: counter {} != {total}", end.t, end.opt.step_count()));
            }
            let ids = end.opt.state_ids().len();
            if opt != "sgd" && ids < last_ids {
                return Err(format!("{opt}: optimizer state dropped"));
            }
            last_ids = ids;
            Ok(())
        })?;
    }
    Ok(())
}

/// Inactive logits get exactly zero gradient, and heads outside the active
/// ranges get no gradient entry at all.
pub fn check_masked_zero_grad() -> Check {
    let mut r = rng::stream(5, Stream::Holdout);
    for _ in 0..200 {
        let n = r.random_range(2..12);
        let logits: Vec<f64> = (0..n).map(|_| r.random_range(-20.0..20.0)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let target = r.random_range(0..n);
        mask[target] = true;
        let (loss, d) = masked_softmax_xent(&logits, target, &mask).map_err(|e| e.to_string())?;
        if !loss.is_finite() {
            return Err("non-finite loss".into());
        }
        if let Some(i) = (0..n).find(|&i| !mask[i] && d[i] != 0.0) {
            return Err(format!("inactive logit {i} has gradient {}", d[i]));
        }
        let s: f64 = d.iter().sum();
        if s.abs() > 1e-12 {
            return Err(format!("active gradients sum to {s}"));
        }
    }
    let layout = HeadLayout::new(vec![2, 2, 2]);
    let net: Network<f64> = build_model(Arch::Mlp256x2, 784, &layout, HeadInit::Random, 0).map_err(|e| e.to_string())?;
    let x = Tensor::full(&[2, 784], 0.3);
    let (logits, cache) = net.forward(&x).map_err(|e| e.to_string())?;
    let (_, dl) = clbench::nn::batch_xent(&logits, &[2, 3], &[layout.range(1), layout.range(1)]).map_err(|e| e.to_string())?;
    let g = net.backward(&cache, &dl, Some(&[false, true, false])).map_err(|e| e.to_string())?;
    for h in [0, 2] {
        let (w, b) = net.head_params(h);
        if g.get(w).is_some() || g.get(b).is_some() {
            return Err(format!("inactive head {h} received a gradient"));
        }
    }
    Ok(())
}

//! Task-sequence generation: splitting, permuting and concatenating
//! datasets into incremental task / domain / class scenarios.

use std::fmt;
use std::fmt::Write as _;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::PreparedDataset;
use crate::error::{Error, Result};
use crate::nn::{HeadInit, HeadLayout};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    IncrementalTask,
    IncrementalDomain,
    IncrementalClass,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::IncrementalTask => "incremental_task",
            ScenarioKind::IncrementalDomain => "incremental_domain",
            ScenarioKind::IncrementalClass => "incremental_class",
        }
    }

    /// Layout used when a config does not name one.
    pub fn default_layout(self) -> LayoutPolicy {
        match self {
            ScenarioKind::IncrementalTask => LayoutPolicy::MultiHead,
            ScenarioKind::IncrementalDomain => LayoutPolicy::SingleHeadFixed,
            ScenarioKind::IncrementalClass => LayoutPolicy::SingleHeadGrowing,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incremental_task" => Ok(ScenarioKind::IncrementalTask),
            "incremental_domain" => Ok(ScenarioKind::IncrementalDomain),
            "incremental_class" => Ok(ScenarioKind::IncrementalClass),
            other => Err(Error::Config(format!("unknown scenario kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutPolicy {
    MultiHead,
    SingleHeadFixed,
    SingleHeadGrowing,
    SingleHeadPreallocated,
}

impl LayoutPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutPolicy::MultiHead => "multi_head",
            LayoutPolicy::SingleHeadFixed => "single_head_fixed",
            LayoutPolicy::SingleHeadGrowing => "single_head_growing",
            LayoutPolicy::SingleHeadPreallocated => "single_head_preallocated",
        }
    }
}

impl fmt::Display for LayoutPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayoutPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_head" => Ok(LayoutPolicy::MultiHead),
            "single_head_fixed" => Ok(LayoutPolicy::SingleHeadFixed),
            "single_head_growing" => Ok(LayoutPolicy::SingleHeadGrowing),
            "single_head_preallocated" => Ok(LayoutPolicy::SingleHeadPreallocated),
            other => Err(Error::Config(format!("unknown head layout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadPolicy {
    pub layout: LayoutPolicy,
    #[serde(default)]
    pub head_init: HeadInit,
}

impl HeadPolicy {
    pub fn new(layout: LayoutPolicy, head_init: HeadInit) -> Self {
        HeadPolicy { layout, head_init }
    }

    pub fn default_for(kind: ScenarioKind) -> Self {
        HeadPolicy::new(kind.default_layout(), HeadInit::Random)
    }

    pub fn check(&self, kind: ScenarioKind) -> Result<()> {
        let ok = matches!(
            (kind, self.layout),
            (ScenarioKind::IncrementalTask, LayoutPolicy::MultiHead)
                | (ScenarioKind::IncrementalDomain, LayoutPolicy::SingleHeadFixed)
                | (ScenarioKind::IncrementalClass, LayoutPolicy::SingleHeadGrowing)
                | (ScenarioKind::IncrementalClass, LayoutPolicy::SingleHeadPreallocated)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Scenario(format!("head layout {} cannot serve {kind}", self.layout)))
        }
    }
}

/// What a task does to its source images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskInput {
    /// Images of a class subset, unchanged.
    Classes,
    /// All images, pixels reordered by a bijection drawn from `seed`.
    /// `None` as permutation means identity.
    Permuted { seed: u64, permutation: Option<Arc<Vec<usize>>> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    /// 1-based task identity.
    pub t: usize,
    /// Index into the scenario's source list.
    pub source: usize,
    /// Source classes in this task, ordered.
    pub classes: Vec<usize>,
    pub input: TaskInput,
    /// `(source class, presented label)`, one entry per class.
    pub label_map: Vec<(usize, usize)>,
}

impl TaskSpec {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        match &self.input {
            TaskInput::Permuted {
                permutation: Some(p), ..
            } => Some(p),
            _ => None,
        }
    }

    pub fn label_of(&self, class: usize) -> Option<usize> {
        self.label_map.iter().find(|(c, _)| *c == class).map(|&(_, l)| l)
    }
}

/// Name, class count and flattened input size of a source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub name: String,
    pub class_count: usize,
    pub dim: usize,
}

impl Source {
    pub fn new(name: impl Into<String>, class_count: usize, dim: usize) -> Self {
        Source {
            name: name.into(),
            class_count,
            dim,
        }
    }
}

impl From<&PreparedDataset> for Source {
    fn from(d: &PreparedDataset) -> Self {
        Source::new(d.name.clone(), d.class_count, d.dim())
    }
}

/// An ordered task sequence with its output-space rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub head_policy: HeadPolicy,
    pub seed: u64,
    pub sources: Vec<Source>,
    pub tasks: Vec<TaskSpec>,
}

fn label_map(kind: ScenarioKind, classes: &[usize], offset: usize) -> Vec<(usize, usize)> {
    classes
        .iter()
        .enumerate()
        .map(|(i, &c)| match kind {
            ScenarioKind::IncrementalClass => (c, offset + i),
            _ => (c, i),
        })
        .collect()
}

/// Splits one dataset's classes, in ascending order, into consecutive
/// tasks of `classes_per_task`.
pub fn split_tasks(source: Source, classes_per_task: usize, kind: ScenarioKind, policy: HeadPolicy) -> Result<Scenario> {
    if classes_per_task == 0 || !source.class_count.is_multiple_of(classes_per_task) {
        return Err(Error::Scenario(format!(
            "{} has {} classes, not divisible by {classes_per_task}",
            source.name, source.class_count
        )));
    }
    let n = source.class_count / classes_per_task;
    let tasks = (0..n)
        .map(|i| {
            let classes: Vec<usize> = (i * classes_per_task..(i + 1) * classes_per_task).collect();
            TaskSpec {
                t: i + 1,
                source: 0,
                label_map: label_map(kind, &classes, i * classes_per_task),
                classes,
                input: TaskInput::Classes,
            }
        })
        .collect();
    Scenario::new(kind, policy, 0, vec![source], tasks)
}

/// Pixel permutation of task `t` (1-based) for a scenario seed. Task 1 is
/// the identity.
pub fn task_permutation(seed: u64, t: usize, dim: usize) -> Option<Vec<usize>> {
    if t <= 1 {
        return None;
    }
    let mut rng = rng::substream(seed, Stream::Permutation, t as u64);
    Some(rng::permutation(&mut rng, dim))
}

/// `n_tasks` copies of the dataset under different pixel permutations.
pub fn permuted_tasks(source: Source, n_tasks: usize, seed: u64, kind: ScenarioKind, policy: HeadPolicy) -> Result<Scenario> {
    let classes: Vec<usize> = (0..source.class_count).collect();
    let tasks = (0..n_tasks)
        .map(|i| TaskSpec {
            t: i + 1,
            source: 0,
            label_map: label_map(kind, &classes, i * classes.len()),
            classes: classes.clone(),
            input: TaskInput::Permuted {
                seed,
                permutation: task_permutation(seed, i + 1, source.dim).map(Arc::new),
            },
        })
        .collect();
    Scenario::new(kind, policy, seed, vec![source], tasks)
}

/// Every dataset's classes in pairs (or `classes_per_task`), datasets in
/// order, as one multi-headed task sequence.
pub fn multi_dataset_queue(sources: Vec<Source>, classes_per_task: usize, policy: HeadPolicy) -> Result<Scenario> {
    let mut tasks = Vec::new();
    for (s, src) in sources.iter().enumerate() {
        if classes_per_task == 0 || src.class_count % classes_per_task != 0 {
            return Err(Error::Scenario(format!(
                "{} has {} classes, not divisible by {classes_per_task}",
                src.name, src.class_count
            )));
        }
        for i in 0..src.class_count / classes_per_task {
            let classes: Vec<usize> = (i * classes_per_task..(i + 1) * classes_per_task).collect();
            tasks.push(TaskSpec {
                t: tasks.len() + 1,
                source: s,
                label_map: label_map(ScenarioKind::IncrementalTask, &classes, 0),
                classes,
                input: TaskInput::Classes,
            });
        }
    }
    Scenario::new(ScenarioKind::IncrementalTask, policy, 0, sources, tasks)
}

/// Output units of `task` under a layout, as a logit range.
pub type ActiveRange = Range<usize>;

impl Scenario {
    pub fn new(kind: ScenarioKind, head_policy: HeadPolicy, seed: u64, sources: Vec<Source>, tasks: Vec<TaskSpec>) -> Result<Self> {
        head_policy.check(kind)?;
        if tasks.len() < 2 {
            return Err(Error::Scenario(format!("a scenario needs at least 2 tasks, got {}", tasks.len())));
        }
        for (i, task) in tasks.iter().enumerate() {
            if task.t != i + 1 {
                return Err(Error::Scenario(format!("task at position {i} has identity {}", task.t)));
            }
            let src = sources
                .get(task.source)
                .ok_or_else(|| Error::Scenario(format!("task {} names missing source {}", task.t, task.source)))?;
            if task.classes.iter().any(|&c| c >= src.class_count) {
                return Err(Error::Scenario(format!("task {} uses a class outside {}", task.t, src.name)));
            }
            if let Some(p) = task.permutation() {
                if p.len() != src.dim {
                    return Err(Error::Scenario(format!("task {} permutation has wrong length", task.t)));
                }
            }
        }
        for (i, a) in tasks.iter().enumerate() {
            if a.input != TaskInput::Classes {
                continue;
            }
            for b in &tasks[i + 1..] {
                if b.source == a.source && b.input == TaskInput::Classes && b.classes.iter().any(|c| a.classes.contains(c)) {
                    return Err(Error::Scenario(format!("tasks {} and {} share classes", a.t, b.t)));
                }
            }
        }
        Ok(Scenario {
            kind,
            head_policy,
            seed,
            sources,
            tasks,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, t: usize) -> &TaskSpec {
        &self.tasks[t - 1]
    }

    pub fn total_classes(&self) -> usize {
        self.tasks.iter().map(TaskSpec::class_count).sum()
    }

    /// Output units after `tasks_seen` tasks.
    pub fn output_layout(&self, tasks_seen: usize) -> Result<HeadLayout> {
        output_layout(self.kind, &self.tasks, tasks_seen, self.head_policy)
    }

    /// Output units of the whole scenario (what `offline` training uses).
    pub fn final_layout(&self) -> HeadLayout {
        self.output_layout(self.len()).expect("validated on construction")
    }

    /// Label and active logit range for a source-class sample of task `t`,
    /// given the currently allocated `layout`.
    pub fn present(&self, class: usize, t: usize, layout: &HeadLayout) -> Result<(usize, ActiveRange)> {
        present(class, self.task(t), self.kind, self.head_policy, layout)
    }

    /// Line-oriented manifest: one header line, then one line per task.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario kind={} layout={} head_init={} seed={} tasks={}",
            self.kind,
            self.head_policy.layout,
            match self.head_policy.head_init {
                HeadInit::Random => "random",
                HeadInit::Zeros => "zeros",
            },
            self.seed,
            self.tasks.len()
        );
        for s in &self.sources {
            let _ = writeln!(out, "source name={} classes={} dim={}", s.name, s.class_count, s.dim);
        }
        for task in &self.tasks {
            let classes: Vec<String> = task.classes.iter().map(|c| c.to_string()).collect();
            let labels: Vec<String> = task.label_map.iter().map(|(c, l)| format!("{c}:{l}")).collect();
            let input = match &task.input {
                TaskInput::Classes => "classes".to_string(),
                TaskInput::Permuted { seed, permutation } => match permutation {
                    Some(_) => format!("permuted:{seed}"),
                    None => "identity".to_string(),
                },
            };
            let _ = writeln!(
                out,
                "task t={} source={} input={} classes={} labels={}",
                task.t,
                self.sources[task.source].name,
                input,
                classes.join(","),
                labels.join(",")
            );
        }
        out
    }

    /// Rebuilds a scenario from [`Scenario::manifest`] output.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Scenario(format!("malformed manifest line `{line}`"));
        let mut header = None;
        let mut sources: Vec<Source> = Vec::new();
        let mut tasks = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut words = line.split_whitespace();
            let tag = words.next().unwrap_or_default();
            let mut field = std::collections::HashMap::new();
            for w in words {
                let (k, v) = w.split_once('=').ok_or_else(|| bad(line))?;
                field.insert(k, v);
            }
            let get = |k: &str| field.get(k).copied().ok_or_else(|| bad(line));
            let num = |k: &str| get(k)?.parse::<u64>().map_err(|_| bad(line));
            match tag {
                "scenario" => {
                    let kind: ScenarioKind = get("kind")?.parse()?;
                    let layout: LayoutPolicy = get("layout")?.parse()?;
                    let init = match get("head_init")? {
                        "random" => HeadInit::Random,
                        "zeros" => HeadInit::Zeros,
                        _ => return Err(bad(line)),
                    };
                    header = Some((kind, HeadPolicy::new(layout, init), num("seed")?));
                }
                "source" => sources.push(Source::new(get("name")?, num("classes")? as usize, num("dim")? as usize)),
                "task" => {
                    let t = num("t")? as usize;
                    let name = get("source")?;
                    let source = sources.iter().position(|s| s.name == name).ok_or_else(|| bad(line))?;
                    let list = |v: &str| -> Result<Vec<usize>> {
                        v.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().map_err(|_| bad(line))).collect()
                    };
                    let classes = list(get("classes")?)?;
                    let label_map = get("labels")?
                        .split(',')
                        .map(|p| {
                            let (c, l) = p.split_once(':').ok_or_else(|| bad(line))?;
                            Ok((c.parse().map_err(|_| bad(line))?, l.parse().map_err(|_| bad(line))?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let seed = header.map(|h| h.2).unwrap_or(0);
                    let input = match get("input")? {
                        "classes" => TaskInput::Classes,
                        "identity" => TaskInput::Permuted { seed, permutation: None },
                        other => {
                            let s: u64 = other.strip_prefix("permuted:").and_then(|s| s.parse().ok()).ok_or_else(|| bad(line))?;
                            TaskInput::Permuted {
                                seed: s,
                                permutation: task_permutation(s, t, sources[source].dim).map(Arc::new),
                            }
                        }
                    };
                    tasks.push(TaskSpec {
                        t,
                        source,
                        classes,
                        input,
                        label_map,
                    });
                }
                _ => return Err(bad(line)),
            }
        }
        let (kind, policy, seed) = header.ok_or_else(|| Error::Scenario("manifest has no scenario line".into()))?;
        Scenario::new(kind, policy, seed, sources, tasks)
    }
}

/// Output units after `tasks_seen` tasks. Growing single heads are kept as
/// one segment per task so new units can be appended without touching
/// existing ones; the logits still form one softmax.
pub fn output_layout(kind: ScenarioKind, tasks: &[TaskSpec], tasks_seen: usize, policy: HeadPolicy) -> Result<HeadLayout> {
    policy.check(kind)?;
    if tasks_seen == 0 || tasks_seen > tasks.len() {
        return Err(Error::OutOfRange {
            index: tasks_seen,
            len: tasks.len(),
        });
    }
    let seen = &tasks[..tasks_seen];
    Ok(match policy.layout {
        LayoutPolicy::MultiHead | LayoutPolicy::SingleHeadGrowing => HeadLayout::new(seen.iter().map(TaskSpec::class_count).collect()),
        LayoutPolicy::SingleHeadFixed => HeadLayout::new(vec![tasks.iter().map(TaskSpec::class_count).max().unwrap_or(0)]),
        LayoutPolicy::SingleHeadPreallocated => HeadLayout::new(vec![tasks.iter().map(TaskSpec::class_count).sum()]),
    })
}

/// Presented label and active logits for a sample of source class `class`
/// drawn from `task`.
pub fn present(class: usize, task: &TaskSpec, kind: ScenarioKind, policy: HeadPolicy, layout: &HeadLayout) -> Result<(usize, ActiveRange)> {
    let label = task.label_of(class).ok_or(Error::Routing { class, task: task.t })?;
    let range = match (kind, policy.layout) {
        (ScenarioKind::IncrementalTask, _) => {
            if task.t > layout.heads.len() {
                return Err(Error::Routing { class, task: task.t });
            }
            layout.range(task.t - 1)
        }
        _ => 0..layout.total_units(),
    };
    let global = range.start + label;
    if global >= range.end {
        return Err(Error::Routing { class, task: task.t });
    }
    Ok((global, range))
}

/// Sample indices and presented labels of one task in a prepared dataset.
#[derive(Debug, Clone, Default)]
pub struct TaskSplit {
    pub indices: Vec<usize>,
    /// Logit index of each sample's target.
    pub targets: Vec<usize>,
}

impl TaskSplit {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Samples of `task` among `labels`, with targets under `layout`.
pub fn select(labels: &[usize], task: &TaskSpec, kind: ScenarioKind, policy: HeadPolicy, layout: &HeadLayout) -> Result<(TaskSplit, ActiveRange)> {
    let mut split = TaskSplit::default();
    let mut active = 0..0;
    for (i, &c) in labels.iter().enumerate() {
        if task.label_of(c).is_none() {
            continue;
        }
        let (target, range) = present(c, task, kind, policy, layout)?;
        split.indices.push(i);
        split.targets.push(target);
        active = range;
    }
    if split.is_empty() {
        return Err(Error::Scenario(format!("task {} has no samples", task.t)));
    }
    Ok((split, active))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mnist() -> Source {
        Source::new("mnist", 10, 1024)
    }

    fn split(kind: ScenarioKind) -> Scenario {
        split_tasks(mnist(), 2, kind, HeadPolicy::default_for(kind)).unwrap()
    }

    #[test]
    fn split_mnist_pairs() {
        let s = split(ScenarioKind::IncrementalTask);
        let pairs: Vec<Vec<usize>> = s.tasks.iter().map(|t| t.classes.clone()).collect();
        assert_eq!(pairs, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]);
        let d = split(ScenarioKind::IncrementalDomain);
        assert!(d.tasks.iter().all(|t| t.label_map.iter().map(|p| p.1).collect::<Vec<_>>() == vec![0, 1]));
    }

    #[test]
    fn degenerate_and_bad_splits() {
        let p = HeadPolicy::default_for(ScenarioKind::IncrementalTask);
        assert!(split_tasks(mnist(), 10, ScenarioKind::IncrementalTask, p).is_err());
        assert!(split_tasks(mnist(), 3, ScenarioKind::IncrementalTask, p).is_err());
        let wrong = HeadPolicy::new(LayoutPolicy::MultiHead, HeadInit::Random);
        assert!(split_tasks(mnist(), 2, ScenarioKind::IncrementalClass, wrong).is_err());
    }

    #[test]
    fn present_digit_three() {
        let d = split(ScenarioKind::IncrementalDomain);
        assert_eq!(d.present(3, 2, &d.output_layout(2).unwrap()).unwrap(), (1, 0..2));
        let c = split(ScenarioKind::IncrementalClass);
        assert_eq!(c.present(3, 2, &c.output_layout(2).unwrap()).unwrap(), (3, 0..4));
        let t = split(ScenarioKind::IncrementalTask);
        assert_eq!(t.present(3, 2, &t.output_layout(2).unwrap()).unwrap(), (3, 2..4));
        assert!(matches!(
            t.present(5, 2, &t.output_layout(2).unwrap()),
            Err(Error::Routing { class: 5, task: 2 })
        ));
    }

    #[test]
    fn layouts() {
        let c = split(ScenarioKind::IncrementalClass);
        assert_eq!(c.output_layout(3).unwrap().total_units(), 6);
        let t = split(ScenarioKind::IncrementalTask);
        assert_eq!(t.output_layout(5).unwrap().heads, vec![2; 5]);
        let pre = HeadPolicy::new(LayoutPolicy::SingleHeadPreallocated, HeadInit::Random);
        let p = permuted_tasks(mnist(), 10, 1, ScenarioKind::IncrementalClass, pre).unwrap();
        assert_eq!(p.output_layout(1).unwrap().heads, vec![100]);
        assert!(c.output_layout(0).is_err());
    }

    #[test]
    fn permuted_tasks_are_seeded_bijections() {
        let pol = HeadPolicy::default_for(ScenarioKind::IncrementalDomain);
        let a = permuted_tasks(mnist(), 4, 7, ScenarioKind::IncrementalDomain, pol).unwrap();
        let b = permuted_tasks(mnist(), 4, 7, ScenarioKind::IncrementalDomain, pol).unwrap();
        assert_eq!(a, b);
        assert!(a.task(1).permutation().is_none());
        let mut p = a.task(2).permutation().unwrap().to_vec();
        assert_ne!(p, (0..1024).collect::<Vec<_>>());
        p.sort_unstable();
        assert_eq!(p, (0..1024).collect::<Vec<_>>());
        let c = permuted_tasks(mnist(), 10, 7, ScenarioKind::IncrementalClass, HeadPolicy::default_for(ScenarioKind::IncrementalClass)).unwrap();
        assert_eq!(c.total_classes(), 100);
        assert_eq!(c.task(3).label_of(4), Some(24));
    }

    #[test]
    fn queue_counts() {
        let pol = HeadPolicy::default_for(ScenarioKind::IncrementalTask);
        let q = multi_dataset_queue(
            vec![
                mnist(),
                Source::new("fashion_mnist", 10, 784),
                Source::new("emnist_letters", 26, 784),
                Source::new("cifar100", 100, 784),
            ],
            2,
            pol,
        )
        .unwrap();
        assert_eq!(q.len(), 73);
        assert!(q.tasks.iter().all(|t| t.class_count() == 2));
        assert!(multi_dataset_queue(vec![Source::new("odd", 5, 4)], 2, pol).is_err());
        let alone = multi_dataset_queue(vec![mnist()], 2, pol).unwrap();
        assert_eq!(alone.tasks, split(ScenarioKind::IncrementalTask).tasks);
    }

    #[test]
    fn manifest_round_trip() {
        for s in [
            split(ScenarioKind::IncrementalClass),
            permuted_tasks(mnist(), 3, 11, ScenarioKind::IncrementalDomain, HeadPolicy::default_for(ScenarioKind::IncrementalDomain)).unwrap(),
        ] {
            let text = s.manifest();
            assert_eq!(Scenario::from_manifest(&text).unwrap(), s, "{text}");
        }
    }

    #[test]
    fn select_filters_and_maps() {
        let s = split(ScenarioKind::IncrementalClass);
        let labels = [0, 3, 2, 9, 3];
        let (sp, active) = select(&labels, s.task(2), s.kind, s.head_policy, &s.output_layout(2).unwrap()).unwrap();
        assert_eq!(sp.indices, vec![1, 2, 4]);
        assert_eq!(sp.targets, vec![3, 2, 3]);
        assert_eq!(active, 0..4);
    }
}

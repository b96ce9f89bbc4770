//! Experiment configuration: a TOML document with `[scenario]`, `[model]`,
//! `[method]`, `[optimizer]` and `[run]` sections.
//!
//! ```toml
//! [scenario]
//! generator = "split"          # split | permuted | queue
//! dataset = "mnist"
//! kind = "incremental_class"
//!
//! [model]
//! arch = "mlp400"
//!
//! [method]
//! kind = "rehearsal"
//! buffer_capacity = 1112
//!
//! [optimizer]
//! kind = "adam"
//!
//! [run]
//! seeds = [0, 1, 2]
//! ```
//!
//! Omitted keys take the protocol defaults of the chosen generator (epochs,
//! learning rate, architecture). The data directory comes from, in order:
//! a command-line flag, the `CLBENCH_DATA` environment variable,
//! `run.data_dir`, and finally `data`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetId, PreprocessPolicy};
use crate::error::{Error, Result};
use crate::methods::{Compression, MethodConfig, MethodKind};
use crate::nn::{Arch, HeadInit};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::scenario::{HeadPolicy, LayoutPolicy, ScenarioKind};

pub const DATA_ENV: &str = "CLBENCH_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Split,
    Permuted,
    Queue,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::Split => "split",
            Generator::Permuted => "permuted",
            Generator::Queue => "queue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub generator: Generator,
    /// Source for `split` / `permuted`.
    #[serde(default)]
    pub dataset: Option<DatasetId>,
    /// Ordered sources for `queue`.
    #[serde(default)]
    pub datasets: Vec<DatasetId>,
    #[serde(default = "default_kind")]
    pub kind: ScenarioKind,
    #[serde(default)]
    pub layout: Option<LayoutPolicy>,
    #[serde(default)]
    pub head_init: HeadInit,
    #[serde(default = "default_classes_per_task")]
    pub classes_per_task: usize,
    /// Number of permutations for `permuted`.
    #[serde(default = "default_n_tasks")]
    pub n_tasks: usize,
    /// Keep only the first tasks of the generated sequence.
    #[serde(default)]
    pub max_tasks: Option<usize>,
    /// Keep at most this many training images per class (smoke runs).
    #[serde(default)]
    pub train_per_class: Option<usize>,
}

fn default_kind() -> ScenarioKind {
    ScenarioKind::IncrementalTask
}

fn default_classes_per_task() -> usize {
    2
}

fn default_n_tasks() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub arch: Option<Arch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    #[serde(default)]
    pub lr: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            kind: OptimizerKind::Adam,
            lr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Train once on the union of all tasks (upper bound).
    #[serde(default)]
    pub offline: bool,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Output prefix; `<output>.csv` and `<output>_summary.csv` are written.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Method column of emitted rows; derived from method and optimizer
    /// when absent.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
}

fn default_batch() -> usize {
    128
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_eval_batch() -> usize {
    1000
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            epochs: None,
            batch_size: default_batch(),
            seeds: default_seeds(),
            offline: false,
            data_dir: None,
            output: None,
            label: None,
            eval_batch: default_eval_batch(),
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ExperimentConfig {
    /// Parses TOML text, applying `section.key=value` overrides first.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn head_policy(&self) -> HeadPolicy {
        HeadPolicy::new(
            self.scenario.layout.unwrap_or_else(|| self.scenario.kind.default_layout()),
            self.scenario.head_init,
        )
    }

    pub fn sources(&self) -> Vec<DatasetId> {
        match self.scenario.generator {
            Generator::Queue => self.scenario.datasets.clone(),
            _ => self.scenario.dataset.into_iter().collect(),
        }
    }

    pub fn arch(&self) -> Arch {
        self.model.arch.unwrap_or(match self.scenario.generator {
            Generator::Split => Arch::Mlp400,
            Generator::Permuted => Arch::Mlp1000,
            Generator::Queue => Arch::Mlp256x2,
        })
    }

    /// Padding to 32x32 for the 1024-input MLPs, grayscale 28x28 otherwise.
    pub fn preprocess_policy(&self) -> PreprocessPolicy {
        if self.arch().input_dim() == 1024 {
            PreprocessPolicy::pad32()
        } else {
            PreprocessPolicy::gray28()
        }
    }

    pub fn epochs(&self) -> usize {
        self.run.epochs.unwrap_or(match self.scenario.generator {
            Generator::Split => 4,
            Generator::Permuted | Generator::Queue => 10,
        })
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let lr = self.optimizer.lr.unwrap_or(match (self.scenario.generator, self.optimizer.kind) {
            (Generator::Split, OptimizerKind::Adam) => 1e-3,
            (Generator::Split, _) => 1e-2,
            (Generator::Permuted, OptimizerKind::Adam) => 1e-4,
            (Generator::Permuted, _) => 1e-3,
            (Generator::Queue, _) => 1e-3,
        });
        OptimizerConfig::new(self.optimizer.kind, lr)
    }

    /// `split_mnist/incremental_class`, with the head layout appended when
    /// it is not the kind's default.
    pub fn scenario_label(&self) -> String {
        let src: Vec<&str> = self.sources().iter().map(|d| d.as_str()).collect();
        let mut s = format!("{}_{}/{}", self.scenario.generator.as_str(), src.join("+"), self.scenario.kind);
        let policy = self.head_policy();
        if policy.layout != self.scenario.kind.default_layout() {
            s.push('/');
            s.push_str(policy.layout.as_str());
        }
        if policy.head_init == HeadInit::Zeros {
            s.push_str("/zero_heads");
        }
        if let Some(m) = self.scenario.max_tasks {
            s.push_str(&format!("/first{m}"));
        }
        s
    }

    /// Fine-tuning is named after its optimizer, rehearsal with 8-bit
    /// storage gets a `_c` suffix and offline runs an `offline_` prefix.
    pub fn method_label(&self) -> String {
        if let Some(l) = &self.run.label {
            return l.clone();
        }
        let base = match self.method.kind {
            MethodKind::Finetune => self.optimizer.kind.as_str().to_string(),
            MethodKind::Rehearsal if self.method.compression == Compression::Uint8 => "rehearsal_c".to_string(),
            k => k.as_str().to_string(),
        };
        if self.run.offline {
            format!("offline_{base}")
        } else {
            base
        }
    }

    /// Resolves the data directory (flag, env var, config, `data`).
    pub fn data_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(DATA_ENV) {
            return PathBuf::from(p);
        }
        self.run.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"))
    }

    /// Pre-flight checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, reason: String| Error::ConfigKey { key: k.into(), reason };
        match self.scenario.generator {
            Generator::Split | Generator::Permuted if self.scenario.dataset.is_none() => {
                return Err(key("scenario.dataset", "required for split and permuted generators".into()))
            }
            Generator::Queue if self.scenario.datasets.is_empty() => {
                return Err(key("scenario.datasets", "required for the queue generator".into()))
            }
            Generator::Queue if self.scenario.kind != ScenarioKind::IncrementalTask => {
                return Err(key("scenario.kind", "the queue generator is task-incremental".into()))
            }
            _ => {}
        }
        self.head_policy()
            .check(self.scenario.kind)
            .map_err(|e| key("scenario.layout", e.to_string()))?;
        if self.run.seeds.is_empty() {
            return Err(key("run.seeds", "must list at least one seed".into()));
        }
        if self.run.batch_size == 0 {
            return Err(key("run.batch_size", "must be positive".into()));
        }
        if self.epochs() == 0 {
            return Err(key("run.epochs", "must be positive".into()));
        }
        if self.run.eval_batch == 0 {
            return Err(key("run.eval_batch", "must be positive".into()));
        }
        if self.scenario.max_tasks.is_some_and(|m| m < 2) {
            return Err(key("scenario.max_tasks", "a scenario needs at least 2 tasks".into()));
        }
        let lr = self.optimizer_config().lr;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(key("optimizer.lr", "must be a finite value >= 0".into()));
        }
        if self.run.offline && self.method.kind != MethodKind::Finetune {
            return Err(key("run.offline", "offline runs use method.kind = \"finetune\"".into()));
        }
        let label = self.method_label();
        if label.contains(',') || self.scenario_label().contains(',') {
            return Err(key("run.label", "labels may not contain commas".into()));
        }
        self.method.validate()
    }

    /// Checks that every referenced dataset is present under `root`.
    pub fn check_data(&self, root: &Path) -> Result<()> {
        for d in self.sources() {
            if !d.is_available(root) {
                let missing: Vec<String> = d
                    .files(root)
                    .into_iter()
                    .filter(|p| !p.is_file())
                    .map(|p| p.display().to_string())
                    .collect();
                return Err(Error::ConfigKey {
                    key: "scenario.dataset".into(),
                    reason: format!("{d} not found; missing {}", missing.join(", ")),
                });
            }
        }
        Ok(())
    }
}

/// Sets `section.key=value` in a parsed document. Values are parsed as
/// TOML, falling back to a plain string.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut keys: Vec<&str> = path.trim().split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{spec}`")))?;
    let mut table = doc;
    for k in keys {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{k}` in `{spec}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

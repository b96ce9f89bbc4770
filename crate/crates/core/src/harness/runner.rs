//! Seeded experiment runs, accuracy matrices and grid search.

use std::path::Path;
use std::time::Instant;

use crate::data::{ImageSet, PreparedDataset};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Generator};
use crate::methods::{evaluate, train_task, Method, TaskPart, TaskSet, TrainConfig};
use crate::nn::{build_model, Arch, HeadLayout, Network};
use crate::optim::Optimizer;
use crate::par;
use crate::scenario::{multi_dataset_queue, permuted_tasks, split_tasks, Scenario, Source};

/// `acc[i][j]`: test accuracy on task `j` after training task `i`, stored
/// as rows of `(after_task, accuracies of tasks 1..=after_task)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultMatrix {
    rows: Vec<(usize, Vec<f64>)>,
}

impl ResultMatrix {
    pub fn new() -> Self {
        ResultMatrix { rows: Vec::new() }
    }

    /// Appends the evaluation after task `after_task` (1-based).
    pub fn push(&mut self, after_task: usize, accs: Vec<f64>) -> Result<()> {
        if accs.len() != after_task {
            return Err(Error::shape("result row", &[after_task], &[accs.len()]));
        }
        if let Some(bad) = accs.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Config(format!("accuracy {bad} outside [0, 1]")));
        }
        if self.rows.last().is_some_and(|(k, _)| *k >= after_task) {
            return Err(Error::Config(format!("row for task {after_task} out of order")));
        }
        self.rows.push((after_task, accs));
        Ok(())
    }

    pub fn rows(&self) -> &[(usize, Vec<f64>)] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last_task(&self) -> Option<usize> {
        self.rows.last().map(|r| r.0)
    }

    pub fn get(&self, after_task: usize, eval_task: usize) -> Option<f64> {
        let row = &self.rows.iter().find(|r| r.0 == after_task)?.1;
        eval_task.checked_sub(1).and_then(|j| row.get(j)).copied()
    }

    /// Unweighted mean of `acc[k][1..=k]`.
    pub fn average_accuracy(&self, after_task: usize) -> Result<f64> {
        average_accuracy(self, after_task)
    }

    /// Average accuracy after the last evaluated task.
    pub fn final_average(&self) -> Result<f64> {
        let k = self.last_task().ok_or(Error::OutOfRange { index: 0, len: 0 })?;
        self.average_accuracy(k)
    }
}

/// Unweighted mean of the accuracies of all tasks seen after task `k`.
pub fn average_accuracy(matrix: &ResultMatrix, k: usize) -> Result<f64> {
    let row = matrix
        .rows
        .iter()
        .find(|r| r.0 == k)
        .ok_or(Error::OutOfRange {
            index: k,
            len: matrix.last_task().unwrap_or(0),
        })?;
    Ok(row.1.iter().sum::<f64>() / row.1.len() as f64)
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub matrix: ResultMatrix,
    pub steps: u64,
    pub seconds: f64,
}

/// All seeds of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub method: String,
    pub scenario: String,
    pub arch: Arch,
    pub lambda: f64,
    pub runs: Vec<SeedRun>,
}

impl ExperimentResult {
    pub fn final_averages(&self) -> Result<Vec<f64>> {
        self.runs.iter().map(|r| r.matrix.final_average()).collect()
    }

    pub fn averages_at(&self, k: usize) -> Result<Vec<f64>> {
        self.runs.iter().map(|r| r.matrix.average_accuracy(k)).collect()
    }

    /// Mean and std of the final average accuracy over seeds.
    pub fn summary(&self) -> Result<(f64, f64)> {
        Ok(mean_std(&self.final_averages()?))
    }
}

/// Loads and preprocesses every dataset the config references, with
/// training-split statistics.
pub fn load_datasets(config: &ExperimentConfig, root: &Path) -> Result<Vec<PreparedDataset>> {
    config.check_data(root)?;
    let policy = config.preprocess_policy();
    config
        .sources()
        .into_iter()
        .map(|id| {
            let (train, test) = id.load(root)?;
            let train = match config.scenario.train_per_class {
                Some(n) => train.take_per_class(n),
                None => train,
            };
            log::info!("loaded {id}: {} train / {} test", train.len(), test.len());
            PreparedDataset::new(&train, &test, policy)
        })
        .collect()
}

/// Wraps in-memory image sets as prepared datasets (tests, custom data).
pub fn prepare(sets: &[(ImageSet, ImageSet)], config: &ExperimentConfig) -> Result<Vec<PreparedDataset>> {
    let policy = config.preprocess_policy();
    sets.iter().map(|(tr, te)| PreparedDataset::new(tr, te, policy)).collect()
}

pub fn build_scenario(config: &ExperimentConfig, datasets: &[PreparedDataset], seed: u64) -> Result<Scenario> {
    let policy = config.head_policy();
    let kind = config.scenario.kind;
    let first = || -> Result<Source> {
        datasets
            .first()
            .map(Source::from)
            .ok_or_else(|| Error::Config("no dataset loaded".into()))
    };
    let mut s = match config.scenario.generator {
        Generator::Split => split_tasks(first()?, config.scenario.classes_per_task, kind, policy)?,
        Generator::Permuted => permuted_tasks(first()?, config.scenario.n_tasks, seed, kind, policy)?,
        Generator::Queue => multi_dataset_queue(datasets.iter().map(Source::from).collect(), config.scenario.classes_per_task, policy)?,
    };
    if let Some(m) = config.scenario.max_tasks {
        if m < s.tasks.len() {
            s.tasks.truncate(m);
            s = Scenario::new(s.kind, s.head_policy, s.seed, s.sources, s.tasks)?;
        }
    }
    Ok(s)
}

/// One seed: train every task in order (or the merged set when offline),
/// evaluating all seen tasks after each one.
pub fn run_seed(config: &ExperimentConfig, datasets: &[PreparedDataset], seed: u64) -> Result<SeedRun> {
    let started = Instant::now();
    let scenario = build_scenario(config, datasets, seed)?;
    let arch = config.arch();
    let dim = datasets.first().map_or(0, PreparedDataset::dim);
    if datasets.iter().any(|d| d.dim() != arch.input_dim()) {
        return Err(Error::ConfigKey {
            key: "model.arch".into(),
            reason: format!("{arch} expects {} inputs, data has {dim}", arch.input_dim()),
        });
    }
    let mut net: Network<f32> = build_model(arch, dim, &scenario.output_layout(1)?, config.head_policy().head_init, seed)?;
    let mut opt = Optimizer::new(config.optimizer_config());
    let mut method = Method::new(config.method, seed)?;
    let train_cfg = TrainConfig {
        epochs: config.epochs(),
        batch_size: config.run.batch_size,
    };
    let k = scenario.len();
    let mut matrix = ResultMatrix::new();
    let mut steps = 0;
    let eval_row = |net: &Network<f32>, upto: usize, layout: &HeadLayout| -> Result<Vec<f64>> {
        (1..=upto)
            .map(|j| {
                let data = &datasets[scenario.task(j).source].test;
                evaluate(net, &TaskPart::new(&scenario, j, data, layout)?, config.run.eval_batch)
            })
            .collect()
    };
    if config.run.offline {
        let layout = scenario.final_layout();
        net.ensure_heads(&layout)?;
        let parts = (1..=k)
            .map(|t| TaskPart::new(&scenario, t, &datasets[scenario.task(t).source].train, &layout))
            .collect::<Result<Vec<_>>>()?;
        steps += train_task(&mut method, &mut net, &mut opt, &scenario, &layout, 1, &TaskSet::new(parts), &train_cfg)?.steps;
        matrix.push(k, eval_row(&net, k, &layout)?)?;
    } else {
        for t in 1..=k {
            let layout = scenario.output_layout(t)?;
            net.ensure_heads(&layout)?;
            let part = TaskPart::new(&scenario, t, &datasets[scenario.task(t).source].train, &layout)?;
            let stats = train_task(&mut method, &mut net, &mut opt, &scenario, &layout, t, &TaskSet::new(vec![part]), &train_cfg)?;
            steps += stats.steps;
            let row = eval_row(&net, t, &layout)?;
            log::info!(
                "seed {seed} task {t}/{k}: loss {:.4}, avg acc {:.4}",
                stats.last_epoch_loss,
                row.iter().sum::<f64>() / row.len() as f64
            );
            matrix.push(t, row)?;
        }
    }
    debug_assert_eq!(opt.step_count(), steps);
    Ok(SeedRun {
        seed,
        matrix,
        steps,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs every seed of `config` (in parallel when enabled).
pub fn run_experiment(config: &ExperimentConfig, datasets: &[PreparedDataset]) -> Result<ExperimentResult> {
    config.validate()?;
    let seeds = &config.run.seeds;
    let runs = par::map_range(seeds.len(), |i| run_seed(config, datasets, seeds[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        method: config.method_label(),
        scenario: config.scenario_label(),
        arch: config.arch(),
        lambda: config.method.lambda,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best_lambda: f64,
    /// One result per grid point, in grid order.
    pub points: Vec<ExperimentResult>,
}

impl GridResult {
    pub fn best(&self) -> &ExperimentResult {
        self.points
            .iter()
            .find(|p| p.lambda == self.best_lambda)
            .expect("best point is in the grid")
    }
}

/// Default regularization grid.
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

/// One full run per λ. The best point has the highest mean final average
/// accuracy; ties go to the smaller λ.
pub fn grid_search(config: &ExperimentConfig, lambdas: &[f64], datasets: &[PreparedDataset]) -> Result<GridResult> {
    if lambdas.is_empty() {
        return Err(Error::ConfigKey {
            key: "lambdas".into(),
            reason: "grid is empty".into(),
        });
    }
    let mut points = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let mut c = config.clone();
        c.method.lambda = l;
        points.push(run_experiment(&c, datasets)?);
    }
    let mut best: Option<(f64, f64)> = None;
    for p in &points {
        let (mean, _) = p.summary()?;
        best = match best {
            Some((bm, bl)) if bm > mean || (bm == mean && bl <= p.lambda) => Some((bm, bl)),
            _ => Some((mean, p.lambda)),
        };
    }
    Ok(GridResult {
        best_lambda: best.expect("non-empty grid").1,
        points,
    })
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clbench::harness::{
    emit_results, grid_search, load_datasets, output_paths, read_detail, render_table, run_experiment, series, table, ExperimentConfig,
    ExperimentResult,
};
use clbench::harness::output::{write_series, write_table};

#[derive(Parser)]
#[command(name = "clbench", version, about = "Continual-learning benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration over all its seeds.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one configuration for every regularization coefficient.
    Grid {
        config: PathBuf,
        /// Comma-separated coefficients; defaults to 0.01,0.1,1,10,100,1000.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize detail CSVs into a table and per-coefficient series.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Prefix for `<prefix>_table.csv` and `<prefix>_sensitivity.csv`.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Override a config key, e.g. `--set method.lambda=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Dataset root; beats `CLBENCH_DATA` and `run.data_dir`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output prefix; `<prefix>.csv` and `<prefix>_summary.csv`.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl Common {
    fn load(&self, path: &Path) -> clbench::Result<(ExperimentConfig, PathBuf, PathBuf)> {
        let mut overrides = self.overrides.clone();
        if !self.seeds.is_empty() {
            let list: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
            overrides.push(format!("run.seeds=[{}]", list.join(",")));
        }
        let config = ExperimentConfig::load(path, &overrides)?;
        config.validate()?;
        let root = config.data_dir(self.data_dir.as_deref());
        let prefix = self
            .output
            .clone()
            .or_else(|| config.run.output.clone())
            .unwrap_or_else(|| PathBuf::from("results").join(path.file_stem().unwrap_or_default()));
        Ok((config, root, prefix))
    }
}

fn print_summary(results: &[ExperimentResult]) -> clbench::Result<()> {
    for r in results {
        let (m, s) = r.summary()?;
        println!(
            "{} {} lambda={} avg_acc={:.2} ± {:.2} over {} seed(s)",
            r.method,
            r.scenario,
            r.lambda,
            100.0 * m,
            100.0 * s,
            r.runs.len()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> clbench::Result<()> {
    match cli.command {
        Command::Run { config, common } => {
            let (cfg, root, prefix) = common.load(&config)?;
            let data = load_datasets(&cfg, &root)?;
            let result = run_experiment(&cfg, &data)?;
            let (detail, summary) = output_paths(&prefix);
            emit_results(std::slice::from_ref(&result), &detail, &summary)?;
            print_summary(std::slice::from_ref(&result))?;
            println!("wrote {} and {}", detail.display(), summary.display());
        }
        Command::Grid { config, lambdas, common } => {
            let (cfg, root, prefix) = common.load(&config)?;
            let lambdas = if lambdas.is_empty() {
                clbench::harness::DEFAULT_LAMBDAS.to_vec()
            } else {
                lambdas
            };
            let data = load_datasets(&cfg, &root)?;
            let grid = grid_search(&cfg, &lambdas, &data)?;
            let (detail, summary) = output_paths(&prefix);
            emit_results(&grid.points, &detail, &summary)?;
            print_summary(&grid.points)?;
            println!("best lambda: {}", grid.best_lambda);
            println!("wrote {} and {}", detail.display(), summary.display());
        }
        Command::Report { csv, output } => {
            let mut rows = Vec::new();
            for p in &csv {
                rows.extend(read_detail(p)?);
            }
            let points = series(&rows);
            let best = table(&points);
            render_table(&best, &mut std::io::stdout()).map_err(|e| clbench::Error::io(Path::new("<stdout>"), e))?;
            if let Some(prefix) = output {
                let base = prefix.to_string_lossy().trim_end_matches(".csv").to_string();
                let (t, s) = (PathBuf::from(format!("{base}_table.csv")), PathBuf::from(format!("{base}_sensitivity.csv")));
                write_table(&best, &t)?;
                write_series(&points, &s)?;
                println!("wrote {} and {}", t.display(), s.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

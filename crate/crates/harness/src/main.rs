use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robust_sampling::samplers::histogram_csv;
use robust_sampling_harness::config::ConfigOverrides;
use robust_sampling_harness::output::read_usage_counts;
use robust_sampling_harness::sweep::{sweep_configs, TABLE_ROWS};
use robust_sampling_harness::{
    compare_runs, emit_outputs, parse_config, run_experiment, run_sweep, HarnessError,
};

/// Train MLPs under variance-reducing mini-batch schedulers and compare them.
///
/// Scheduler tokens: baseline, vr-m-<pct>, vr-e-<pct>, pvr-m-<pool>,
/// pvr-e-<pool>. For vr-* the number is 100·ε. For pvr-* it is the size of
/// the worst-sample pool, twice the carried fraction: pvr-m-40 draws 20% of
/// each batch from its worst 40%.
#[derive(Parser)]
#[command(name = "rsample", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, histogram and manifest.
    Train(RunArgs),
    /// Train one configuration per scheduler token into <out>/<label>.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated scheduler tokens [default: the 13 table rows].
        #[arg(long, value_delimiter = ',')]
        schedulers: Vec<String>,
        /// Run the configs one after another even when built with rayon.
        #[arg(long)]
        sequential: bool,
    },
    /// Tabulate finished runs against the baseline among them.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Also write comparison.csv and curves.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print (or write) a run's usage histogram as usage_count,num_samples.
    Histogram {
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON config file, or a manifest.json to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist or synthetic.
    #[arg(long)]
    dataset: Option<String>,
    /// Directory holding the MNIST IDX files.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    scheduler: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout_keep: Option<f64>,
    /// Hidden layer widths, e.g. 256 or 128,64.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Log the robust risk at this radius every epoch.
    #[arg(long)]
    rho: Option<f64>,
    /// Contrast-normalise every sample.
    #[arg(long)]
    gcn: bool,
    /// sum or mean.
    #[arg(long)]
    loss_reduction: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            dataset: self.dataset.clone(),
            mnist_dir: self.mnist_dir.clone(),
            gcn: self.gcn.then_some(true),
            train_size: self.train_size,
            scheduler: self.scheduler.clone(),
            epsilon: self.epsilon,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            dropout_keep: self.dropout_keep,
            hidden_sizes: self.hidden.clone(),
            init_std: self.init_std,
            seed: self.seed,
            rho_log: self.rho,
            loss_reduction: self.loss_reduction.clone(),
            output_dir: self.out.clone(),
            ..Default::default()
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train(args) => {
            let cfg = parse_config(&args.overrides(), args.config.as_deref())?;
            let result = run_experiment(&cfg)?;
            emit_outputs(&result.metrics, &result.ledger, &result.manifest, &cfg.output_dir)?;
            println!(
                "{}: final validation accuracy {:.4} after {} epochs -> {}",
                result.manifest.label,
                result.manifest.final_accuracy,
                result.manifest.epochs_completed,
                cfg.output_dir.display()
            );
        }
        Command::Sweep {
            run,
            schedulers,
            sequential,
        } => {
            let base = parse_config(&run.overrides(), run.config.as_deref())?;
            let tokens: Vec<&str> = if schedulers.is_empty() {
                TABLE_ROWS.to_vec()
            } else {
                schedulers.iter().map(String::as_str).collect()
            };
            let configs = sweep_configs(&base, &tokens, &base.output_dir)?;
            let done = run_sweep(&configs, !sequential)?;
            let dirs: Vec<PathBuf> = done.into_iter().map(|(d, _)| d).collect();
            if dirs.len() >= 2 {
                match compare_runs(&dirs) {
                    Ok(table) => {
                        table.write(&base.output_dir)?;
                        print!("{}", table.render());
                    }
                    Err(HarnessError::Usage(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Command::Compare { runs, out } => {
            let table = compare_runs(&runs)?;
            if let Some(dir) = out {
                table.write(&dir)?;
            }
            print!("{}", table.render());
        }
        Command::Histogram { run, out } => {
            let mut hist = std::collections::BTreeMap::new();
            for c in read_usage_counts(&run)? {
                *hist.entry(c).or_insert(0usize) += 1;
            }
            let body = histogram_csv(&hist);
            match out {
                Some(path) => std::fs::write(&path, body)
                    .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?,
                None => print!("{body}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rsample: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

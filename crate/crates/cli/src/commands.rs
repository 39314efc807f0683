//! Command-line surface and subcommand implementations.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use bislab_core::data::{make_synthetic, Dataset};
use bislab_core::exec::Execution;
use bislab_core::model::MicroModel;
use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, SamplerPair};
use crate::csvio::RunLabels;
use crate::error::{config_err, CliError, Result};
use crate::grid::{run_grid, GridOptions};
use crate::report::{load_and_aggregate, render_text, write_csv};
use crate::runner::{finetune_id, persist, run_bis, run_joint, OutDir, RunOutput};

#[derive(Debug, Parser)]
#[command(
    name = "bislab",
    version,
    about = "Class-imbalanced semi-supervised sampling experiments"
)]
pub struct Cli {
    /// Output directory for runs, checkpoints and CSV tables.
    #[arg(long, global = true, env = "BIS_LAB_OUT", default_value = "bislab-out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and dump it to a text file.
    Gen(GenArgs),
    /// Joint training with the [train] sampler pair.
    Train(RunArgs),
    /// Freeze the feature extractor of a checkpoint and retrain the classifier.
    Finetune(FinetuneArgs),
    /// End-to-end Bi-Sampling training with the [bis] schedule.
    Bis(RunArgs),
    /// Run the [grid] experiment matrix.
    Grid(GridArgs),
    /// Aggregate a summary CSV into mean ± sd tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration file (TOML sections [data] [train] [bis] [finetune] [grid]).
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination file; defaults to `<out>/dataset_s<seed>.txt`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Overwrite an existing file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on a dataset dump instead of generating one from [data].
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Runs executed concurrently.
    #[arg(short, long, default_value_t = 1)]
    pub jobs: usize,
    /// Skip runs already present in the summary table.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Summary CSV; defaults to `<out>/summary.csv`.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let out = OutDir::new(&cli.out);
    match cli.command {
        Command::Gen(args) => cmd_gen(&out, args),
        Command::Train(args) => cmd_train(&out, args),
        Command::Finetune(args) => cmd_finetune(&out, args),
        Command::Bis(args) => cmd_bis(&out, args),
        Command::Grid(args) => cmd_grid(&out, args),
        Command::Report(args) => cmd_report(&out, args),
    }
}

fn cmd_gen(out: &OutDir, args: GenArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let path = args
        .output
        .unwrap_or_else(|| out.root.join(format!("dataset_s{}.txt", args.seed)));
    if path.exists() && !args.force {
        return Err(config_err(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    let data = make_synthetic(&cfg.data, args.seed)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    data.write_to(&mut buf)?;
    fs::write(&path, buf)?;
    println!("{}", path.display());
    Ok(())
}

fn load_data(cfg: &RunConfig, data: Option<&Path>, seed: u64) -> Result<Dataset> {
    match data {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| config_err(format!("cannot open {}: {e}", p.display())))?;
            Ok(Dataset::read_from(file)?)
        }
        None => Ok(make_synthetic(&cfg.data, seed)?),
    }
}

fn report_run(out: &OutDir, o: &RunOutput) {
    let acc = o
        .record
        .final_metrics
        .as_ref()
        .map_or(f64::NAN, |m| m.balanced_accuracy);
    println!(
        "{}\tbalanced_accuracy={:.4}\t{}",
        o.record.run_id,
        acc,
        out.run_json(&o.record.run_id).display()
    );
}

fn cmd_train(out: &OutDir, args: RunArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let data = load_data(&cfg, args.data.as_deref(), args.seed)?;
    let pair = SamplerPair::new(cfg.train.labeled_sampler, cfg.train.unlabeled_sampler);
    let o = run_joint(&cfg.train, pair, &data, args.seed, Execution::best())?;
    persist(out, std::slice::from_ref(&o), true)?;
    report_run(out, &o);
    Ok(())
}

fn cmd_finetune(out: &OutDir, args: FinetuneArgs) -> Result<()> {
    let cfg = args.run.config.load()?;
    let data = load_data(&cfg, args.run.data.as_deref(), args.run.seed)?;
    let file = fs::File::open(&args.checkpoint)
        .map_err(|e| config_err(format!("cannot open {}: {e}", args.checkpoint.display())))?;
    let model = MicroModel::read_checkpoint(std::io::BufReader::new(file))?;
    let stem = args
        .checkpoint
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| config_err("checkpoint file name is not valid UTF-8"))?;
    let ft_cfg = cfg.finetune.train_config(&cfg.train);
    let (model, mut record) = bislab_core::trainer::Trainer::new(ft_cfg)?
        .with_execution(Execution::best())
        .finetune_classifier(&model, &data, args.run.seed)?;
    record.run_id = finetune_id(stem);
    // Rows carry the sampler pair of the joint run being fine-tuned.
    let labels = RunLabels {
        labeled_sampler: cfg.train.labeled_sampler.to_string(),
        unlabeled_sampler: cfg.train.unlabeled_sampler.to_string(),
        schedule: crate::csvio::NONE.to_string(),
    };
    let o = RunOutput { record, labels, model };
    persist(out, std::slice::from_ref(&o), true)?;
    report_run(out, &o);
    Ok(())
}

fn cmd_bis(out: &OutDir, args: RunArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let data = load_data(&cfg, args.data.as_deref(), args.seed)?;
    let o = run_bis(&cfg.train, cfg.bis, &data, args.seed, Execution::best())?;
    persist(out, std::slice::from_ref(&o), true)?;
    report_run(out, &o);
    Ok(())
}

fn cmd_grid(out: &OutDir, args: GridArgs) -> Result<()> {
    let cfg = args.config.load()?;
    if args.jobs == 0 {
        return Err(config_err("--jobs must be >= 1"));
    }
    let outcome = run_grid(
        &cfg,
        out,
        GridOptions {
            jobs: args.jobs,
            resume: args.resume,
        },
    )?;
    println!(
        "completed {} runs, skipped {}, failed {}; results in {}",
        outcome.completed.len(),
        outcome.skipped.len(),
        outcome.failed.len(),
        out.summary().display()
    );
    if outcome.failed.is_empty() {
        Ok(())
    } else {
        for f in &outcome.failed {
            eprintln!("{}: {} ({})", f.run_id, f.status, f.message);
        }
        Err(CliError::Runtime(format!(
            "{} runs failed; see {}",
            outcome.failed.len(),
            out.failures().display()
        )))
    }
}

fn cmd_report(out: &OutDir, args: ReportArgs) -> Result<()> {
    let input = args.input.unwrap_or_else(|| out.summary());
    let rows = load_and_aggregate(&input)?;
    let dir = input
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    write_csv(&dir.join("report.csv"), &rows)?;
    let text = render_text(&rows);
    fs::write(dir.join("report.txt"), &text)?;
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

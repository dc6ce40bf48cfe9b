use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use augsearch::experiment::{cmd_report, Baseline, Experiment, ExperimentConfig, RunRecord, SweepAxis, SweepTable};
use augsearch::policy::{AugPolicy, Temperature};

#[derive(Parser)]
#[command(name = "augsearch", version, about = "Augmentation-policy search for semi-supervised classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// PNG folder (one subdirectory per class) or `synthetic:<spec>`.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Seed of the data split and the first run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of runs per row.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Policy JSON; defaults to the per-seed search results under `--out`.
    #[arg(long, global = true)]
    policy: Option<PathBuf>,
    /// Sharpening temperature: a positive float, `inf` or `orig`.
    #[arg(long = "T", global = true)]
    t: Option<Temperature>,
    /// Sub-policies applied per image.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Experiment config JSON; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn policy weights inside FixMatch.
    Search,
    /// Follow-up FixMatch training under a policy.
    Train,
    /// Reference training runs.
    Baseline {
        /// weak-supervised, randaug-supervised, fixmatch-original,
        /// fixmatch-random-policy or all.
        #[arg(long, default_value = "all")]
        mode: String,
    },
    /// Follow-up training over temperatures or sub-policy counts.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; defaults to the full axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// FixMatch with one operation as the strong view, per operation.
    AblateOps,
    /// Summarize the runs and policies under `--out`.
    Report,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let c = &cli.common;
    if let Command::Report = cli.command {
        let report = cmd_report(&c.out)?;
        println!("{}", report.to_markdown());
        return Ok(());
    }
    let exp = open(c)?;
    let policy = c.policy.as_deref().map(load_policy).transpose()?;
    match cli.command {
        Command::Search => {
            for (seed, outcome) in exp.cmd_search()? {
                println!(
                    "seed {seed}: {} log lines, policy at {}",
                    outcome.log.len(),
                    exp.search_policy_path(seed).display()
                );
            }
        }
        Command::Train => {
            let train = &exp.config.train;
            print_records(&exp.cmd_train(policy.as_ref(), train.temperature, train.n)?);
        }
        Command::Baseline { mode } => {
            let modes = if mode == "all" {
                Baseline::ALL.to_vec()
            } else {
                vec![mode.parse()?]
            };
            for m in modes {
                print_records(&exp.cmd_baseline(m)?);
            }
        }
        Command::Sweep { axis, values } => {
            let values = if values.is_empty() { axis.default_values() } else { values };
            print_table(&exp.cmd_sweep(axis, &values, policy.as_ref())?);
        }
        Command::AblateOps => print_table(&exp.cmd_single_op_ablation()?),
        Command::Report => unreachable!(),
    }
    Ok(())
}

fn open(c: &Common) -> Result<Experiment> {
    let Some(dataset) = c.dataset.as_deref() else {
        bail!("--dataset is required");
    };
    let mut config = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    if let Some(seeds) = c.seeds {
        config.seeds = seeds;
    }
    if let Some(t) = c.t {
        config.train.temperature = t;
    }
    if let Some(n) = c.n {
        config.train.n = n;
    }
    Ok(Experiment::open(dataset, config, &c.out)?)
}

fn load_policy(path: &Path) -> Result<AugPolicy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(AugPolicy::from_json(&text)?)
}

fn print_records(records: &[RunRecord]) {
    for r in records {
        println!("{}\t{:.4}", r.run_id, r.accuracy);
    }
}

fn print_table(table: &SweepTable) {
    print!("{}", table.to_summary_csv());
}

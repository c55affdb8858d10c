use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fewshot_da::bench::{
    emit_report, grid_configs, load_results, run_experiment, run_grid, synthesize_domains, write_dataset_csv, ExperimentConfig, Method, SyntheticDomainSpec,
};

#[derive(Parser)]
#[command(name = "fewshot-da", version, about = "Few-shot domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic source/target pair as CSV files.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an accuracy table from a directory of result files.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every source-to-target row over dataset1/, dataset2/ and dataset3/.
    Grid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base config for shared settings; paths and method are replaced.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "lr,adaboost,ss,dnn,lstm,ours")]
        methods: Vec<Method>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::from_json_file(&config).with_context(|| format!("reading {}", config.display()))?;
            if out.is_some() {
                cfg.output = out;
            }
            if cfg.source.is_empty() || cfg.target.is_empty() {
                bail!("config needs at least one source and one target path");
            }
            let r = run_experiment(&cfg)?;
            for c in &r.cells {
                println!("{} -> {}: {:.2}%", c.source, c.target, 100.0 * c.mean);
            }
            println!("{} [{}] mean accuracy {:.2}% ({:.1}s)", r.name, r.method, 100.0 * r.overall_mean, r.wall_clock_secs);
            if r.config.output.is_none() {
                println!("{}", serde_json::to_string_pretty(&r)?);
            }
        }
        Command::Synth { spec, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text)?
                }
                None => SyntheticDomainSpec::default(),
            };
            let (s, t) = synthesize_domains(&spec)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_dataset_csv(&s, out.join("source.csv"))?;
            write_dataset_csv(&t, out.join("target.csv"))?;
            println!("wrote {} and {} frames to {}", s.len(), t.len(), out.display());
        }
        Command::Report { input, out } => {
            let results = load_results(&input)?;
            if results.is_empty() {
                bail!("no result files in {}", input.display());
            }
            let json = emit_report(&results, &out)?;
            print!("{}", std::fs::read_to_string(&out)?);
            println!("results: {}", json.display());
        }
        Command::Grid { data, out, config, methods } => {
            let base = match config {
                Some(p) => ExperimentConfig::from_json_file(&p)?,
                None => ExperimentConfig::default(),
            };
            let configs = grid_configs(&data, &base, &methods)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let results = run_grid(&configs, &out)?;
            let table = out.join("table.md");
            emit_report(&results, &table)?;
            print!("{}", std::fs::read_to_string(&table)?);
        }
    }
    Ok(())
}

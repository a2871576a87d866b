use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lmmd_align::harness::{
    analyze, gen_data, load_config, run_gradcheck_suite, run_sweep, stain_normalize_command, train_da_command,
    train_dg_command, train_mil_command, write_summary, DataConfig, GradcheckOptions, ImbalanceConfig, RunConfig,
    StainMethod, TrainDaConfig, TrainDgConfig, TrainMilConfig,
};
use lmmd_align::stain::MacenkoConfig;
use lmmd_align::synth::BENCHMARK_DOMAINS;
use lmmd_align::{Error, Result};

const LOG_ENV: &str = "LMMD_ALIGN_LOG";

#[derive(Parser)]
#[command(name = "lmmd-align", version, about = "Kernel-discrepancy alignment experiments")]
struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel sweep workers.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Reinhard,
    Macenko,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark: domain CSVs, bag JSONL, manifest.
    GenData {
        /// Filter every domain except 0 to this class-0 share.
        #[arg(long)]
        imbalance: Option<f64>,
    },
    /// Adapt to an unlabeled target domain.
    TrainDa,
    /// Train on several sources, score unseen domains.
    TrainDg,
    /// Train attention pooling over frozen embeddings.
    TrainMil,
    /// Color-normalize PNG images to a reference image.
    StainNormalize {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        reference: PathBuf,
        /// Image or directory of PNGs; repeatable.
        #[arg(long = "input")]
        input: Vec<PathBuf>,
        /// Destination directory (defaults to `--out`, then `normalized`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Further images or directories.
        inputs: Vec<PathBuf>,
    },
    /// Run every source × target × arm × seed cell of a run config.
    Sweep,
    /// Inertia, robustness index and PCA plots from recorded runs.
    Analyze {
        /// Directory holding run records.
        records: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        /// Corrupt analytic gradients so every check must fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Rebuild summary tables from recorded runs.
    Report {
        /// Directory holding run records.
        records: PathBuf,
    },
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Config { field: "--config".into(), message: "this command needs a config file".into() })
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenData { imbalance } => {
            let mut cfg: DataConfig = match &cli.config {
                Some(p) => load_config(p)?,
                None => DataConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(ratio) = imbalance {
                cfg.imbalance = Some(ImbalanceConfig { ratio: *ratio, domains: (1..BENCHMARK_DOMAINS).collect() });
            }
            let out = out_dir(cli, "data");
            let manifest = gen_data(&cfg, &out)?;
            for d in &manifest.domains {
                println!("domain {}: {} samples {:?}, {} bags", d.domain_id, d.samples, d.class_counts, d.num_bags);
            }
            println!("wrote {}", out.display());
        }
        Command::TrainDa => {
            let cfg: TrainDaConfig = load_config(require_config(cli)?)?;
            print_json(&train_da_command(&cfg, cli.seed, &out_dir(cli, "train-da"))?)?;
        }
        Command::TrainDg => {
            let cfg: TrainDgConfig = load_config(require_config(cli)?)?;
            print_json(&train_dg_command(&cfg, cli.seed, &out_dir(cli, "train-dg"))?)?;
        }
        Command::TrainMil => {
            let cfg: TrainMilConfig = load_config(require_config(cli)?)?;
            print_json(&train_mil_command(&cfg, cli.seed, &out_dir(cli, "train-mil"))?)?;
        }
        Command::StainNormalize { method, reference, input, output, inputs } => {
            let macenko: MacenkoConfig = match &cli.config {
                Some(p) => load_config(p)?,
                None => MacenkoConfig::default(),
            };
            let method = match method {
                Method::Reinhard => StainMethod::Reinhard,
                Method::Macenko => StainMethod::Macenko,
            };
            let all: Vec<PathBuf> = input.iter().chain(inputs).cloned().collect();
            let dest = output.clone().unwrap_or_else(|| out_dir(cli, "normalized"));
            for p in stain_normalize_command(method, reference, &all, &macenko, &dest)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep => {
            let mut cfg: RunConfig = load_config(require_config(cli)?)?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = &cli.out {
                cfg.output_dir = o.clone();
            }
            let outcome = run_sweep(&cfg, cli.jobs)?;
            print!("{}", outcome.summary.to_csv());
            println!(
                "{} cells: {} ran, {} already recorded, {} failed; results in {}",
                outcome.records.len(),
                outcome.ran,
                outcome.skipped,
                outcome.failed,
                outcome.experiment_dir.display()
            );
        }
        Command::Analyze { records } => {
            let out = cli.out.clone().unwrap_or_else(|| records.join("analysis"));
            let bundle = analyze(records, &out)?;
            for a in &bundle.aggregates {
                println!(
                    "{}: {} comparisons, inertia {:.4} -> {:.4}, inertia lower in {}, RI higher in {}",
                    a.arm.name(),
                    a.comparisons,
                    a.mean_inertia_before,
                    a.mean_inertia_after,
                    a.inertia_decreased,
                    a.ri_increased
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Gradcheck { inject_fault } => {
            let suite =
                run_gradcheck_suite(&GradcheckOptions { seed: cli.seed.unwrap_or(0), inject_fault: *inject_fault })?;
            println!("{suite}");
            return Ok(suite.passed);
        }
        Command::Report { records } => {
            print!("{}", write_summary(records)?.to_csv());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

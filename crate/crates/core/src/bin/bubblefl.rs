use std::path::PathBuf;
use std::process::ExitCode;

use bubblefl::evaluation::Method;
use bubblefl::experiment::{read_config, run_experiment};
use bubblefl::privacy::PrivacyBudget;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Clustered federated learning experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config; flags override config fields.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Privacy budget: a positive number or high, moderate, low.
        #[arg(long)]
        epsilon: Option<PrivacyBudget>,
        /// Cut the dendrogram at this many bubbles instead of the DBI minimum.
        #[arg(long)]
        k_override: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of local, pooled, pa_cfl.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Also write pre-noise importance vectors (debugging only).
        #[arg(long)]
        export_clean_importance: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run { config, epsilon, k_override, seed, out, methods, export_clean_importance } =
        Cli::parse().command;
    let mut cfg = match read_config(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error [config]: {e}");
            return ExitCode::from(2);
        }
    };
    if epsilon.is_some() {
        cfg.epsilon = epsilon;
    }
    if k_override.is_some() {
        cfg.k_override = k_override;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(m) = methods {
        cfg.methods = m;
    }
    cfg.export_clean_importance |= export_clean_importance;

    match run_experiment(&cfg) {
        Ok(report) => {
            for s in &report.summary {
                println!(
                    "{:<7} clients {:>3}  rmse {:.4}  mae {:.4}  r2 {}",
                    s.method.as_str(),
                    s.clients,
                    s.mean_rmse,
                    s.mean_mae,
                    s.mean_r2.map_or("undefined".into(), |r| format!("{:.2}%", r * 100.0)),
                );
            }
            println!("artifacts in {}", cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

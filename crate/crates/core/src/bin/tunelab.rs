use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tunelab::harness::{self, Overrides};
use tunelab::workload::DriftKind;

#[derive(Parser)]
#[command(name = "tunelab", version, about = "Online index tuning experiments over a simulated optimizer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config (TOML, or JSON by extension).
    Run {
        config: PathBuf,
        /// Run a single replication with this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_kind)]
        schedule: Option<DriftKind>,
        /// Worker threads for concurrent replications.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Recompute a manifest and verify every artifact checksum.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write the recomputed artifacts here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize run directories and write per-method plot TSVs.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<DriftKind, String> {
    s.parse().map_err(|e: tunelab::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, seed, out, schedule, jobs } => {
            harness::load_config(&config, &Overrides { seed, out, schedule }).and_then(|cfg| {
                let run = harness::run_experiment(&cfg, jobs)?;
                let rows: Vec<_> = run.manifest.summary.iter().map(|m| (cfg.out_dir.display().to_string(), m.clone())).collect();
                print!("{}", harness::summary_table(&rows));
                println!("wrote {} artifacts and {}", run.files.len(), cfg.out_dir.join(harness::MANIFEST_NAME).display());
                Ok(ExitCode::SUCCESS)
            })
        }
        Cmd::Replay { manifest, jobs, out } => harness::replay(&manifest, jobs, out.as_deref()).map(|r| {
            for p in &r.mismatched {
                println!("MISMATCH {p}");
            }
            if !r.config_hash_ok {
                println!("MISMATCH config hash");
            }
            println!("{} artifacts reproduced, {} mismatched", r.matched, r.mismatched.len());
            if r.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }),
        Cmd::Compare { dirs, out } => harness::compare(&dirs, &out).map(|table| {
            print!("{table}");
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(harness::exit_code(&e))
    })
}

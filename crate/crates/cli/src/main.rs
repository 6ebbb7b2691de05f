use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedprompt::runner::{dry_run, output_dir, run_experiment, RunOptions};
use fedprompt::{parse_config, report};

#[derive(Parser)]
#[command(name = "fedprompt", version, about = "Federated prompt-learning experiments on a frozen vision-language surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario x method x seed cell of a config.
    Run {
        config: PathBuf,
        /// Print the cell plan and write nothing.
        #[arg(long)]
        dry_run: bool,
        /// Worker threads (results do not depend on it).
        #[arg(long)]
        jobs: Option<usize>,
        /// Added to every configured seed.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Tabulate a results directory.
    Report { dir: PathBuf },
    /// Parse and validate a config.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Validate { config } => match parse_config(&config) {
            Ok(cfg) => {
                println!("{}: ok ({} cells)", config.display(), cfg.scenarios.len() * cfg.methods.len() * cfg.seeds.len());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Run { config, dry_run: true, seed_offset, .. } => {
            let result = parse_config(&config).and_then(|cfg| dry_run(&cfg, seed_offset, &mut std::io::stdout()));
            result.map_or_else(fail, |_| ExitCode::SUCCESS)
        }
        Command::Run { config, dry_run: false, jobs, seed_offset } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let opts = RunOptions { out_dir: output_dir(&cfg), jobs, seed_offset };
            match run_experiment(&cfg, &opts) {
                Ok(summary) if summary.failures.is_empty() => {
                    println!("{} cells completed; results in {}", summary.cells, opts.out_dir.display());
                    ExitCode::SUCCESS
                }
                Ok(summary) => {
                    eprintln!(
                        "{} of {} cells failed; see {}",
                        summary.failures.len(),
                        summary.cells,
                        opts.out_dir.join(fedprompt::runner::FAILURES).display()
                    );
                    ExitCode::from(1)
                }
                Err(e) => fail(e),
            }
        }
        Command::Report { dir } => match report::write_report(&dir) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}

fn fail(e: fedprompt::CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

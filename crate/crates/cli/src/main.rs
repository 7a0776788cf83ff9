use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fragctl_cli::{run_path, Overrides};

#[derive(Parser)]
#[command(name = "fragctl", version, about = "Distributed Lyapunov/Riccati design from fragmented data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Dotted `key=value` override, e.g. `flow.horizon=10`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, seed, out, gamma, set } = Cli::parse().command;
    let overrides = Overrides { seed, out, gamma, set };
    match run_path(&config, &overrides) {
        Ok(summary) => {
            println!(
                "{} finished in {:.3} s, outputs in {}",
                summary.config.experiment.as_str(),
                summary.wall_time,
                summary.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

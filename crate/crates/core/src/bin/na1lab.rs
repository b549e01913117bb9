use clap::Parser;
use na1lab::cli::{run, Command, RunConfig};
use std::path::PathBuf;

/// Arbitrage, numeraire and hedging reports for finite markets.
#[derive(Parser)]
#[command(name = "na1lab", version)]
struct Args {
    /// analyze, numeraire, hedge, factor or tree
    #[arg(long)]
    command: Command,
    #[arg(long)]
    input: PathBuf,
    /// Report file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    tol_lp: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol_opt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NA1LAB_LOG", "error")).init();
    let a = Args::parse();
    let config = RunConfig { command: a.command, input: a.input, output: a.output, tol_lp: a.tol_lp, tol_opt: a.tol_opt, seed: a.seed };
    std::process::exit(run(&config));
}

//! Command-line front end for the pricing and training experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prince_core::baselines::PolicyKind;
use prince_core::harness::{
    generate_scenario, simulate, solve, sweep, verify, write_manifest, write_solution,
    write_sweep, write_verify, Config,
};
use prince_core::Error;

#[derive(Parser)]
#[command(name = "prince", version, about = "Multi-tenant split federated learning with participation pricing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the pricing game only.
    Solve(Common),
    /// Solve, then train every tenant under the resulting participation.
    Simulate(Common),
    /// Run the invariant suite; exits 3 on any failed check.
    Verify(Common),
    /// Grid over tenant counts, device counts and policies.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::NonConvergence { .. } => 4,
        Error::Io(_) => 1,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let (name, c) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Verify(c) => ("verify", c),
        Command::Sweep(c) => ("sweep", c),
    };
    let mut config = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    if let Some(p) = c.policy {
        config.policy = p;
    }
    write_manifest(&c.out, name, &config, config.seed)?;
    match &cli.command {
        Command::Solve(_) => {
            let s = generate_scenario(&config, config.seed)?;
            let sol = solve(&s, config.policy)?;
            write_solution(&c.out, &s, &sol, None)?;
            println!("policy {} potential {}", sol.policy, sol.potential.value());
            Ok(true)
        }
        Command::Simulate(_) => {
            let s = generate_scenario(&config, config.seed)?;
            let sol = solve(&s, config.policy)?;
            let runs = simulate(&s, &sol, config.seed)?;
            write_solution(&c.out, &s, &sol, Some(&runs))?;
            for (i, r) in runs.iter().enumerate() {
                match &r.result {
                    Some(res) => println!(
                        "tenant {} final loss {} cycles to target {}",
                        i + 1,
                        res.final_loss(),
                        r.cycles_to_target().map_or("-".into(), |k| k.to_string())
                    ),
                    None => println!("tenant {} not trained: a data-holding device never participates", i + 1),
                }
            }
            Ok(true)
        }
        Command::Verify(_) => {
            let s = generate_scenario(&config, config.seed)?;
            let report = verify(&s)?;
            write_verify(&c.out, &report)?;
            for ch in &report.checks {
                let verdict = match (ch.passed, ch.gating) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "WARN",
                };
                println!("{verdict} {}: {}", ch.name, ch.detail);
            }
            Ok(report.passed)
        }
        Command::Sweep(_) => {
            let rows = sweep(&config, c.workers)?;
            write_sweep(&c.out, &rows)?;
            println!("{} rows", rows.len());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinbath::par::with_threads;
use spinbath::Execution;
use spinbath_cli::config::{self, ConfigError, EngineKind, Resolved};
use spinbath_cli::output::{ensure_dir, write_table};
use spinbath_cli::runner::{self, RunError};
use spinbath_cli::selftest;

#[derive(Parser)]
#[command(name = "spinbath", version, about = "Measurement-driven purification and pairing of a nuclear spin bath")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// dense, factored or montecarlo.
    #[arg(long, global = true)]
    engine: Option<EngineKind>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario.
    Run,
    /// Scan the ω–τ grid.
    Scan,
    /// Two-spin verification experiment.
    Verify,
    /// Central-spin coherence and spectroscopy.
    Sense,
    /// Run the acceptance criteria.
    Selftest {
        /// Only these criteria (1-9); repeatable.
        #[arg(long = "criterion")]
        criteria: Vec<u8>,
    },
}

const VERIFY_FALLBACK: &str = "[geometry]\nkind = \"chain\"\nspins = 2\n";

fn resolve(common: &Common, required: bool) -> Result<Resolved, ConfigError> {
    let (mut cfg, source) = match &common.config {
        Some(path) => config::load(path)?,
        None if !required => (config::parse(VERIFY_FALLBACK)?, VERIFY_FALLBACK.to_string()),
        None => return Err(ConfigError { issues: vec![config::Issue { line: None, message: "--config PATH is required".into() }] }),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(engine) = common.engine {
        cfg.engine = engine;
    }
    if let Some(out) = &common.out {
        cfg.out = out.display().to_string();
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    config::validate(&cfg, &source)
}

fn report(err: &RunError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Selftest { criteria } = &cli.command {
        let ids: Vec<u8> = if criteria.is_empty() { (1..=9).collect() } else { criteria.clone() };
        if let Some(bad) = ids.iter().find(|&&id| !(1..=9).contains(&id)) {
            eprintln!("error: no criterion {bad} (expected 1-9)");
            return ExitCode::from(2);
        }
        let outcomes = with_threads(cli.common.threads.unwrap_or(0), || {
            ids.iter()
                .map(|&id| {
                    let o = selftest::run_criterion(id, Execution::default());
                    println!("{}", o.line());
                    o
                })
                .collect::<Vec<_>>()
        });
        if let Some(out) = &cli.common.out {
            let rows: Vec<Vec<String>> = outcomes.iter().map(|o| vec![o.id.to_string(), o.name.to_string(), o.passed.to_string(), o.detail.clone()]).collect();
            if let Err(e) = ensure_dir(out).and_then(|_| write_table(&out.join("selftest.csv"), &["criterion", "name", "passed", "detail"], &rows)) {
                return report(&e.into());
            }
        }
        let passed = outcomes.iter().filter(|o| o.passed).count();
        println!("{passed}/{} criteria passed", outcomes.len());
        return if passed == outcomes.len() { ExitCode::SUCCESS } else { ExitCode::from(1) };
    }

    let required = !matches!(cli.command, Command::Verify);
    let res = match resolve(&cli.common, required) {
        Ok(r) => r,
        Err(e) => return report(&e.into()),
    };
    let out = PathBuf::from(&res.config.out);
    let exec = Execution::default();
    let result = with_threads(res.config.threads, || match cli.command {
        Command::Run => runner::run_command(&res, &out, exec).map(|r| {
            println!("{}: {} steps, final purity {:.6}, cumulative P_S {:.6e}", r.status_label(), r.records.len(), r.final_purity(), r.cumulative_probability());
        }),
        Command::Scan => runner::scan_command(&res, &out, exec),
        Command::Verify => runner::verify_command(&res, &out).map(|r| {
            println!("m* unpolarized {:?}, m* singlet {:?}", r.unpolarized, r.singlet);
        }),
        Command::Sense => runner::sense_command(&res, &out).map(|(_, sp)| {
            println!("spectroscopy: paired resolves {}, unpolarized resolves {}", sp.paired_resolves(), sp.unpolarized_resolves());
        }),
        Command::Selftest { .. } => unreachable!(),
    });
    match result {
        Ok(()) => {
            println!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

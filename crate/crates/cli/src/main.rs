//! `tunnel`: run tunnel-asymptotics scenarios from TOML configs.
//!
//! Exit status is 0 when every check passes, 1 when a check fails and 2 on
//! any error (bad config, failed precondition, I/O).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tunnel_core::scenario::{self, Scenario, Summary, SweepParam};

#[derive(Parser)]
#[command(name = "tunnel", version, about = "Global-in-time tunnel asymptotics: scenarios, checks and artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config without running it.
    Validate { config: String },
    /// Run a scenario and write its artifacts and summary.json.
    Run {
        config: String,
        /// Output directory (default: the config's `output`, else `out/<name>`).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run one scenario per parameter value and tabulate the metrics.
    Sweep {
        config: String,
        /// One of eps, beta, label_spacing, dt.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    ListBuiltins {
        /// Print the TOML source of one built-in.
        #[arg(long)]
        show: Option<String>,
    },
}

/// A path to a TOML file, or the name of a built-in.
fn load(config: &str) -> Result<Scenario, tunnel_core::Error> {
    let path = Path::new(config);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        return Scenario::from_toml(&text);
    }
    match scenario::builtin_source(config) {
        Some(text) => Scenario::from_toml(text),
        None => Err(tunnel_core::Error::Config(format!("'{config}' is neither a file nor a built-in scenario"))),
    }
}

fn out_dir(sc: &Scenario, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| sc.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&sc.name))
}

fn print_summary(s: &Summary, dir: &Path) {
    for c in &s.checks {
        let mark = if c.passed { "pass" } else { "FAIL" };
        println!("{mark}  {:<40} value = {:e}  bound = {:e}", c.name, c.value, c.bound);
        if !c.passed && !c.detail.is_empty() {
            println!("      {}", c.detail);
        }
    }
    let failed = s.failed().count();
    println!(
        "{}: {} checks, {} failed, {:.2} s -> {}",
        s.scenario,
        s.checks.len(),
        failed,
        s.runtime_s,
        dir.join("summary.json").display()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => load(&config).map(|sc| {
            println!("{}: valid ({} experiment, schema {})", sc.name, sc.experiment.kind(), sc.schema);
            true
        }),
        Command::Run { config, out } => load(&config).and_then(|sc| {
            let dir = out_dir(&sc, out);
            let s = scenario::run(&sc, &dir)?;
            print_summary(&s, &dir);
            Ok(s.passed)
        }),
        Command::Sweep { config, param, values, out } => load(&config).and_then(|sc| {
            let dir = out_dir(&sc, out).join(format!("sweep-{}", param.name()));
            let s = scenario::sweep(&sc, param, &values, &dir)?;
            for r in &s.rows {
                println!("{} = {:e}: {}", param.name(), r.value, if r.passed { "pass" } else { "FAIL" });
            }
            for (name, slope) in &s.slopes {
                println!("slope {name} = {slope:.4}");
            }
            println!("-> {}", dir.join("sweep.csv").display());
            Ok(s.passed)
        }),
        Command::ListBuiltins { show } => match show {
            Some(name) => match scenario::builtin_source(&name) {
                Some(text) => {
                    print!("{text}");
                    Ok(true)
                }
                None => Err(tunnel_core::Error::Config(format!("no built-in scenario named '{name}'"))),
            },
            None => {
                for (name, desc) in scenario::builtin_names() {
                    println!("{name:<24} {desc}");
                }
                Ok(true)
            }
        },
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(2)
        }
    }
}

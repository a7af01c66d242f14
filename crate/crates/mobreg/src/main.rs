use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mobreg::commands::{cmd_experiment, cmd_inspect, cmd_run, EXIT_ERROR, EXIT_INVARIANT, EXIT_OK};
use mobreg_core::registry::Query;

/// Mobile web-service registry simulator.
#[derive(Parser)]
#[command(name = "mobreg", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and check protocol invariants.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the taxonomy named in the scenario file.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Run one of: reg-latency, discovery-scale, registry-growth, presence-fn, failover.
    Experiment {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Query a registry snapshot file.
    Inspect {
        #[arg(long)]
        snapshot: PathBuf,
        #[command(flatten)]
        query: QueryArgs,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct QueryArgs {
    #[arg(long)]
    by_id: Option<String>,
    /// Case-insensitive match on name and description.
    #[arg(long)]
    by_name: Option<String>,
    #[arg(long)]
    by_group: Option<String>,
}

impl QueryArgs {
    fn query(self) -> Query {
        match (self.by_id, self.by_name, self.by_group) {
            (Some(id), _, _) => Query::ById(id),
            (_, Some(text), _) => Query::ByNameSubstring(text),
            (_, _, Some(g)) => Query::ByGroup(g),
            _ => unreachable!("clap requires one query flag"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            taxonomy,
        } => cmd_run(&scenario, seed, taxonomy.as_deref(), &out).map(|verdicts| {
            let failed: Vec<_> = verdicts.iter().filter(|v| !v.passed).collect();
            for v in &failed {
                eprintln!("{v}");
            }
            if failed.is_empty() {
                EXIT_OK
            } else {
                EXIT_INVARIANT
            }
        }),
        Cmd::Experiment { name, seed, out } => cmd_experiment(&name, seed, &out).map(|p| {
            println!("{}", p.display());
            EXIT_OK
        }),
        Cmd::Inspect { snapshot, query } => {
            cmd_inspect(&snapshot, &query.query(), &mut std::io::stdout().lock()).map(|_| EXIT_OK)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mobreg: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

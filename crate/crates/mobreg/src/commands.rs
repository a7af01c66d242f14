//! The three CLI commands, callable without a process.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mobreg_core::registry::{Entry, GroupEntry, Query, RegistryError, RegistryStore, ServiceEntry};
use mobreg_core::simnet::{assert_invariants, run, ScenarioError, Verdict};

use crate::experiments::{self, Experiment, UnknownExperiment};
use crate::scenario_file::{self, LoadError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVARIANT: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    UnknownExperiment(#[from] UnknownExperiment),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Snapshot { path: PathBuf, source: RegistryError },
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|source| CliError::Write { path, source })
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.into(),
        source,
    })
}

/// Runs a scenario file and writes `metrics.csv`, `traffic.log`,
/// `verdicts.txt` and one snapshot per registry node under `out`.
pub fn cmd_run(scenario: &Path, seed: Option<u64>, taxonomy: Option<&Path>, out: &Path) -> Result<Vec<Verdict>, CliError> {
    let sc = scenario_file::load(scenario, taxonomy, seed)?;
    let result = run(&sc)?;
    let verdicts = assert_invariants(&result.log, &result.final_state);
    mkdir(out)?;
    write(out.join("metrics.csv"), result.metrics.to_csv())?;
    write(out.join("traffic.log"), result.log.to_text())?;
    let text: String = verdicts.iter().map(|v| format!("{v}\n")).collect();
    write(out.join("verdicts.txt"), text)?;
    let snaps = out.join("snapshots");
    mkdir(&snaps)?;
    for (node, state) in &result.final_state.nodes {
        for (group, g) in state.groups.iter().filter(|(_, g)| g.is_registry && state.up) {
            write(snaps.join(format!("{group}-{node}.snap")), g.store.snapshot())?;
        }
    }
    Ok(verdicts)
}

/// Writes `<out>/<name>.csv` and returns its path.
pub fn cmd_experiment(name: &str, seed: u64, out: &Path) -> Result<PathBuf, CliError> {
    let e: Experiment = name.parse()?;
    mkdir(out)?;
    let path = out.join(format!("{}.csv", e.name()));
    write(path.clone(), experiments::csv(e, seed))?;
    Ok(path)
}

/// Prints matching entries of a service or group snapshot, one canonical
/// element per line. Returns the number printed.
pub fn cmd_inspect(snapshot: &Path, query: &Query, w: &mut impl io::Write) -> Result<usize, CliError> {
    let bytes = fs::read(snapshot).map_err(|source| CliError::Read {
        path: snapshot.into(),
        source,
    })?;
    let corrupt = |source| CliError::Snapshot {
        path: snapshot.into(),
        source,
    };
    let lines: Vec<String> = match RegistryStore::<ServiceEntry>::restore(&bytes) {
        Ok(store) => render(&store, query),
        Err(first) => match RegistryStore::<GroupEntry>::restore(&bytes) {
            Ok(store) => render(&store, query),
            Err(_) => return Err(corrupt(first)),
        },
    };
    for l in &lines {
        writeln!(w, "{l}").map_err(|source| CliError::Write {
            path: "<stdout>".into(),
            source,
        })?;
    }
    Ok(lines.len())
}

fn render<E: Entry>(store: &RegistryStore<E>, query: &Query) -> Vec<String> {
    store
        .lookup(query)
        .iter()
        .map(|e| {
            let mut s = String::new();
            e.to_element().write(&mut s);
            s
        })
        .collect()
}

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use scc_core::Error;

/// Failure of a subcommand, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Solver(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::SolverFailure { theta, gamma, reason } => {
                Failure::Solver(format!("solver failed at theta = {theta}, gamma = {gamma}: {reason}"))
            }
            Error::InfeasibleStart | Error::AllReplicatesFailed(_) => Failure::Solver(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn input_error(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Provenance record written next to every result payload.
pub struct Manifest {
    command: &'static str,
    inputs: Vec<(String, String)>,
    options: Value,
    seed: Option<u64>,
    started: u128,
}

impl Manifest {
    pub fn start<O: Serialize>(command: &'static str, options: &O, seed: Option<u64>) -> Self {
        Self {
            command,
            inputs: Vec::new(),
            options: serde_json::to_value(options).unwrap_or(Value::Null),
            seed,
            started: unix_ms(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path)?;
        self.inputs.push((path.display().to_string(), digest));
        Ok(())
    }

    /// Records a resolved option that was not given on the command line.
    pub fn resolved(&mut self, key: &str, value: Value) {
        if let Value::Object(map) = &mut self.options {
            map.insert(key.to_string(), value);
        }
    }

    pub fn to_json(&self) -> Value {
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|(p, d)| json!({"path": p, "sha256": d}))
            .collect();
        json!({
            "command": self.command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "inputs": inputs,
            "options": self.options,
            "seed": self.seed,
            "started_unix_ms": self.started as u64,
            "finished_unix_ms": unix_ms() as u64,
        })
    }
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

/// Creates `dir` if needed and returns the path of `name` inside it.
pub fn out_file(dir: &Path, name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| input_error(format!("{}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

/// JSON number, `null` when not finite.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

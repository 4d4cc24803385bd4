//! Batch front end for `misclass-core`.
//!
//! Exit codes: 0 success, 1 input/I/O/schema error, 2 mathematical or
//! identification failure.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod montecarlo;

use std::io::Write;

use serde::Serialize;

pub use commands::{cmd_effects, cmd_estimate, cmd_identify, cmd_simulate, Output};
pub use config::{Cli, CommandKind, RunConfig};
pub use error::{CliError, CliResult};
pub use montecarlo::cmd_montecarlo;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct ErrorInfo {
    pub name: String,
    pub message: String,
    pub exit_code: i32,
}

/// Envelope around every JSON result.
#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub schema_version: u32,
    pub command: CommandKind,
    pub status: &'static str,
    pub config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

pub fn dispatch(cfg: &RunConfig) -> CliResult<Output> {
    match cfg.command {
        CommandKind::Identify => cmd_identify(cfg),
        CommandKind::Estimate => cmd_estimate(cfg),
        CommandKind::Simulate => cmd_simulate(cfg),
        CommandKind::Montecarlo => cmd_montecarlo(cfg),
        CommandKind::Effects => cmd_effects(cfg),
    }
}

fn render(report: &Report) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

/// Runs the command and returns `(exit code, bytes for the output, bytes for stderr)`.
pub fn execute(cfg: &RunConfig) -> (i32, Vec<u8>, Vec<u8>) {
    let outcome = dispatch(cfg);
    let envelope = |result: Option<serde_json::Value>, error: Option<ErrorInfo>| Report {
        schema_version: REPORT_SCHEMA_VERSION,
        command: cfg.command,
        status: if error.is_some() { "error" } else { "ok" },
        config: cfg,
        result,
        error,
    };
    match outcome {
        Ok(Output::Csv(bytes)) => (0, bytes, Vec::new()),
        Ok(Output::Json(value)) => (0, render(&envelope(Some(value), None)), Vec::new()),
        Err(e) => {
            let code = e.exit_code();
            let info = ErrorInfo { name: e.name().to_owned(), message: e.to_string(), exit_code: code };
            let report = render(&envelope(None, Some(info)));
            let note = format!("error [{}]: {e}\n", e.name()).into_bytes();
            if cfg.command == CommandKind::Simulate {
                let mut err = note;
                err.extend(report);
                (code, Vec::new(), err)
            } else {
                (code, report, note)
            }
        }
    }
}

/// Executes and writes to `--output` (or stdout); returns the exit code.
pub fn run(cfg: &RunConfig) -> i32 {
    let (mut code, out, err) = execute(cfg);
    if !err.is_empty() {
        let _ = std::io::stderr().write_all(&err);
    }
    if out.is_empty() {
        return code;
    }
    let written = match &cfg.output {
        Some(path) => std::fs::write(path, &out).map_err(|e| CliError::io(path, e)),
        None => std::io::stdout().write_all(&out).map_err(|e| CliError::io("<stdout>", e)),
    };
    if let Err(e) = written {
        eprintln!("error [{}]: {e}", e.name());
        code = e.exit_code();
    }
    code
}

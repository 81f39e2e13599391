//! Predictors run as external programs.
//!
//! Protocol: the selected columns are written to the program's standard
//! input as CSV with a header row (missing values as `NA`); the program
//! writes one decimal prediction per line to standard output and exits with
//! status 0. Blank lines are ignored.

use std::io::{Read, Write};
use std::process::{Child, Command as Process, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use cfsim_core::fairness::{ExprPredictor, PredictError, Predictor};
use cfsim_core::ParticleTable;

use crate::formats::{Command, PredictorEntry, DEFAULT_PREDICTOR_TIMEOUT};
use crate::table;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalPredictor {
    command: Command,
    inputs: Vec<String>,
    timeout: Duration,
}

impl ExternalPredictor {
    pub fn new(command: Command, inputs: Vec<String>) -> Self {
        ExternalPredictor {
            command,
            inputs,
            timeout: DEFAULT_PREDICTOR_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn spawn(&self) -> Result<Child, PredictError> {
        let mut p = match &self.command {
            Command::Shell(line) => {
                let mut p = Process::new("sh");
                p.arg("-c").arg(line);
                p
            }
            Command::Argv(argv) => {
                let mut p = Process::new(&argv[0]);
                p.args(&argv[1..]);
                p
            }
        };
        p.stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| PredictError::new(format!("cannot start predictor {}: {e}", self.describe())))
    }

    fn describe(&self) -> String {
        match &self.command {
            Command::Shell(line) => format!("`{line}`"),
            Command::Argv(argv) => format!("`{}`", argv.join(" ")),
        }
    }
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> Result<std::process::ExitStatus, PredictError> {
    let start = Instant::now();
    let mut pause = Duration::from_millis(1);
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Ok(status),
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(PredictError::new(format!(
                    "predictor timed out after {:.1} s",
                    timeout.as_secs_f64()
                )));
            }
            Ok(None) => {
                thread::sleep(pause);
                pause = (pause * 2).min(Duration::from_millis(50));
            }
            Err(e) => return Err(PredictError::new(format!("waiting for predictor: {e}"))),
        }
    }
}

/// Parses one prediction per non-blank line.
pub fn parse_predictions(out: &str, expected: usize) -> Result<Vec<f64>, PredictError> {
    let values = out
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<f64>()
                .ok()
                .filter(|x| !x.is_nan())
                .ok_or_else(|| PredictError::new(format!("line {}: `{l}` is not a number", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(PredictError::new(format!(
            "predictor returned {} values for {expected} rows",
            values.len()
        )));
    }
    Ok(values)
}

impl Predictor for ExternalPredictor {
    fn inputs(&self) -> Vec<String> {
        self.inputs.clone()
    }

    fn predict(&self, t: &ParticleTable) -> Result<Vec<f64>, PredictError> {
        let cols = t.select_columns(&self.inputs);
        if cols.n_columns() != self.inputs.len() {
            let missing: Vec<&str> = self
                .inputs
                .iter()
                .filter(|c| t.column_index(c).is_none())
                .map(String::as_str)
                .collect();
            return Err(PredictError::new(format!(
                "columns not in table: {}",
                missing.join(", ")
            )));
        }
        let mut input = Vec::new();
        table::write_csv(&cols, &mut input).map_err(|e| PredictError::new(e.to_string()))?;

        let mut child = self.spawn()?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let mut stderr = child.stderr.take().expect("stderr is piped");
        // A program may exit without reading its input; a broken pipe is then not an error.
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&input);
        });
        let reader = thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let err_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let status = wait_with_timeout(&mut child, self.timeout)?;
        let _ = writer.join();
        let out = reader
            .join()
            .expect("reader thread")
            .map_err(|e| PredictError::new(format!("reading predictor output: {e}")))?;
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            let detail = err.lines().last().unwrap_or("").trim();
            return Err(PredictError::new(format!(
                "predictor {} failed with {status}{}{detail}",
                self.describe(),
                if detail.is_empty() { "" } else { ": " }
            )));
        }
        parse_predictions(&out, t.n_rows())
    }
}

/// Builds the predictor a fairness file describes. `observed` is the list of
/// observed variables, used when a command predictor declares no inputs.
pub fn from_entry(p: &PredictorEntry, observed: &[String]) -> Result<Box<dyn Predictor>, String> {
    crate::formats::validate_predictor(p)?;
    if let Some(src) = &p.expr {
        return ExprPredictor::parse(src)
            .map(|e| Box::new(e) as Box<dyn Predictor>)
            .map_err(|e| format!("predictor expression: {e}"));
    }
    let command = p.command.clone().expect("validated");
    let inputs = p.inputs.clone().unwrap_or_else(|| observed.to_vec());
    let mut ext = ExternalPredictor::new(command, inputs);
    if let Some(t) = p.timeout_secs {
        ext = ext.with_timeout(Duration::from_secs_f64(t));
    }
    Ok(Box::new(ext))
}

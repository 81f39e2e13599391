//! The `cfsim` command line.
//!
//! Exit codes: 0 success, 2 input or model error, 3 infeasible evidence,
//! 4 predictor protocol error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use cfsim_core::counterfactual::SUMMARY_PROBS;
use cfsim_core::fairness::{self, check_deterministic, CaseReport, FairnessError};
use cfsim_core::{
    simulate_counterfactual, summarize, ConditionError, QueryError, ResampleScheme, RngKey, SamplerConfig, Scm,
};

use crate::bench::{run_timed, TimedRow};
use crate::formats::{self, Command, FairnessJob, FormatError, LoadedModel, PredictorEntry};
use crate::predictor;
use crate::table::{self, fixed, fmt_opt, fmt_value};

/// Seed used when neither the command line nor any input file gives one.
pub const DEFAULT_SEED: u64 = 1;
pub const ENV_THREADS: &str = "CFSIM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "cfsim",
    version,
    about = "Counterfactual simulation and fairness auditing for structural causal models"
)]
pub struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = ENV_THREADS)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Forward-simulate a model and write every column as CSV.
    Simulate(SimulateArgs),
    /// Sample a counterfactual distribution described by a query file.
    Counterfactual(CounterfactualArgs),
    /// Audit a predictor for counterfactual fairness.
    Fairness(FairnessArgs),
    /// Run the linear-Gaussian benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Table,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write the CSV here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long, value_parser = parse_scheme, default_value = "multinomial")]
    pub resampling: ResampleScheme,
    /// Absolute root-finding tolerance (default 1e-9 * max(1, |c|)).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Simulate the full model instead of the ancestral part.
    #[arg(long)]
    pub no_prune: bool,
}

fn parse_scheme(s: &str) -> Result<ResampleScheme, String> {
    s.parse()
}

impl SamplerArgs {
    fn config(&self) -> Result<SamplerConfig, Failure> {
        let mut cfg = SamplerConfig {
            scheme: self.resampling,
            prune: !self.no_prune,
            ..SamplerConfig::default()
        };
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Failure::Input("--tol must be positive".into()));
            }
            cfg.root.tolerance = Some(t);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    #[arg(long)]
    pub query: PathBuf,
    /// Overrides the model named in the query file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rows to draw (default: the query's `n`, else 10000).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct FairnessArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rows per sensitive-value cell (default: the file's `n`, else 1000).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Predictor expression; overrides the case file.
    #[arg(long, conflicts_with = "predictor_command")]
    pub predictor_expr: Option<String>,
    /// External predictor run with `sh -c`; overrides the case file.
    #[arg(long)]
    pub predictor_command: Option<String>,
    /// Timeout for an external predictor, in seconds.
    #[arg(long)]
    pub predictor_timeout: Option<f64>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// A preset (A to E) or a case file; repeatable.
    #[arg(long, required = true)]
    pub case: Vec<String>,
    /// Sample sizes, replacing each case's grid; repeatable.
    #[arg(long)]
    pub n: Vec<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// A failed run with its exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Predictor(String),
    /// The reader of standard output went away; not reported.
    #[error("output closed")]
    Closed,
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Predictor(_) => 4,
            Failure::Closed => 0,
        }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            return Failure::Closed;
        }
        Failure::Input(format!("write failed: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(e) => e.into(),
            other => Failure::Input(format!("write failed: {other:?}")),
        }
    }
}

impl From<QueryError> for Failure {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::Condition(ConditionError::Infeasible(i)) => Failure::Infeasible(i.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<FairnessError> for Failure {
    fn from(e: FairnessError) -> Self {
        match e {
            FairnessError::Predictor(p) => Failure::Predictor(p.to_string()),
            FairnessError::Query(q) => q.into(),
            other => Failure::Input(other.to_string()),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(t) = cli.threads {
        // Only the first configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let stdout = io::stdout();
    let stderr = io::stderr();
    match execute(&cli.command, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) | Err(Failure::Closed) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

/// Runs a parsed command. `console` receives human-readable output for the
/// table format; `log` receives summaries that accompany CSV output.
pub fn execute(cmd: &Cmd, console: &mut dyn Write, log: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Cmd::Simulate(a) => simulate(a, console),
        Cmd::Counterfactual(a) => counterfactual(a, console, log),
        Cmd::Fairness(a) => fairness(a, console, log),
        Cmd::Bench(a) => bench(a, console),
    }
}

fn open_output<'a>(path: Option<&Path>, console: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, Failure> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Failure::Input(format!("cannot create `{}`: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(console)),
    }
}

fn model_for(explicit: Option<&Path>, from_file: Option<&Path>) -> Result<LoadedModel, Failure> {
    let path = explicit
        .or(from_file)
        .ok_or_else(|| Failure::Input("no model given (use --model or a `model` key)".into()))?;
    Ok(formats::load_model(path)?)
}

fn simulate(a: &SimulateArgs, console: &mut dyn Write) -> Result<(), Failure> {
    let m = formats::load_model(&a.model)?;
    let seed = a.seed.or(m.seed).unwrap_or(DEFAULT_SEED);
    let t = m
        .scm
        .simulate(a.n, None, RngKey::new(seed))
        .map_err(|e| Failure::Input(e.to_string()))?;
    let mut out = open_output(a.out.output.as_deref(), console)?;
    match a.out.format {
        Format::Csv => table::write_csv(&t, &mut out)?,
        Format::Table => {
            let header: Vec<&str> = t.names().iter().map(String::as_str).collect();
            let rows: Vec<Vec<String>> = (0..t.n_rows())
                .map(|i| t.row(i).into_iter().map(|x| fixed(x, 4)).collect())
                .collect();
            table::write_text(&header, &rows, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn counterfactual(a: &CounterfactualArgs, console: &mut dyn Write, log: &mut dyn Write) -> Result<(), Failure> {
    let q = formats::load_query(&a.query)?;
    let m = model_for(a.model.as_deref(), q.model.as_deref())?;
    let n = a.n.or(q.file.n).unwrap_or(10_000);
    let seed = a.seed.or(q.file.seed).or(m.seed).unwrap_or(DEFAULT_SEED);
    let cfg = a.sampler.config()?;
    let t = match simulate_counterfactual(&m.scm, &q.to_query(n, seed), &cfg) {
        Ok(t) => t,
        Err(e) => {
            if let QueryError::Condition(ConditionError::Infeasible(_)) = &e {
                writeln!(log, "conditioning diagnostics: {e}")?;
            }
            return Err(e.into());
        }
    };
    let summary_text = {
        let mut s = Vec::new();
        write_summary(&t, &q.file.targets, &mut s)?;
        s
    };
    match a.out.format {
        Format::Csv => {
            let mut out = open_output(a.out.output.as_deref(), console)?;
            table::write_csv(&t, &mut out)?;
            out.flush()?;
            log.write_all(&summary_text)?;
        }
        Format::Table => {
            if let Some(p) = &a.out.output {
                let mut out = open_output(Some(p), console)?;
                table::write_csv(&t, &mut out)?;
                out.flush()?;
            }
            console.write_all(&summary_text)?;
        }
    }
    Ok(())
}

fn write_summary(t: &cfsim_core::ParticleTable, targets: &[String], out: &mut dyn Write) -> Result<(), Failure> {
    let s = summarize(t, targets);
    writeln!(
        out,
        "n {}  unique {:.1}%  ESS {:.1}",
        s.n,
        100.0 * s.unique_fraction,
        s.ess
    )?;
    let probs: Vec<String> = SUMMARY_PROBS.iter().map(|p| format!("q{}", p * 100.0)).collect();
    let mut header = vec!["target", "mean", "variance"];
    header.extend(probs.iter().map(String::as_str));
    header.push("missing");
    let rows: Vec<Vec<String>> = s
        .columns
        .iter()
        .map(|c| {
            let mut r = vec![c.name.clone(), fixed(c.mean, 4), fixed(c.variance, 4)];
            r.extend(c.quantiles.iter().map(|&q| fixed(q, 4)));
            r.push(c.missing.to_string());
            r
        })
        .collect();
    table::write_text(&header, &rows, &mut *out)?;
    let diag = t.diagnostics();
    if !diag.is_empty() {
        writeln!(out, "conditioning steps")?;
        let rows: Vec<Vec<String>> = diag
            .iter()
            .map(|d| {
                vec![
                    (d.condition_index + 1).to_string(),
                    d.variable.clone(),
                    fmt_value(d.value),
                    if d.discrete { "discrete" } else { "continuous" }.into(),
                    d.positive.to_string(),
                    d.na_roots.to_string(),
                    fixed(d.ess, 1),
                    d.unique_ancestors.to_string(),
                ]
            })
            .collect();
        table::write_text(
            &[
                "step", "variable", "value", "kind", "positive", "na_roots", "ess", "unique",
            ],
            &rows,
            &mut *out,
        )?;
    }
    Ok(())
}

fn predictor_entry(a: &FairnessArgs, from_file: Option<&PredictorEntry>) -> Result<PredictorEntry, Failure> {
    let mut p = if let Some(e) = &a.predictor_expr {
        PredictorEntry {
            expr: Some(e.clone()),
            command: None,
            inputs: None,
            timeout_secs: None,
        }
    } else if let Some(c) = &a.predictor_command {
        PredictorEntry {
            expr: None,
            command: Some(Command::Shell(c.clone())),
            inputs: from_file.and_then(|p| p.inputs.clone()),
            timeout_secs: from_file.and_then(|p| p.timeout_secs),
        }
    } else {
        from_file
            .cloned()
            .ok_or_else(|| Failure::Input("no predictor (use a `[predictor]` table or --predictor-expr)".into()))?
    };
    if let Some(t) = a.predictor_timeout {
        p.timeout_secs = Some(t);
    }
    formats::validate_predictor(&p).map_err(Failure::Input)?;
    Ok(p)
}

/// Rows from the model used to check that a predictor is deterministic.
fn probe_table(m: &Scm, seed: u64) -> Result<cfsim_core::ParticleTable, Failure> {
    let t = m
        .simulate(32, None, RngKey::new(seed).derive_name("probe"))
        .map_err(|e| Failure::Input(e.to_string()))?;
    Ok(t.select_columns(m.observed_names()))
}

fn fairness(a: &FairnessArgs, console: &mut dyn Write, log: &mut dyn Write) -> Result<(), Failure> {
    let f = formats::load_fairness(&a.case)?;
    let m = model_for(a.model.as_deref(), f.model.as_deref())?;
    let n = a.n.or(f.file.n).unwrap_or(1000);
    let seed = a.seed.or(f.file.seed).or(m.seed).unwrap_or(DEFAULT_SEED);
    let cfg = a.sampler.config()?;
    let entry = predictor_entry(a, f.file.predictor.as_ref())?;
    let pred = predictor::from_entry(&entry, m.scm.observed_names()).map_err(Failure::Input)?;
    check_deterministic(pred.as_ref(), &probe_table(&m.scm, seed)?).map_err(|e| Failure::Predictor(e.to_string()))?;
    let mode = f.file.mode.into();

    let sensitive: Vec<&str> = f.file.sensitive.iter().map(|s| s.name.as_str()).collect();
    let (reports, single) = match f.job(n, seed) {
        FairnessJob::Single(case) => (
            vec![fairness::evaluate_fairness(pred.as_ref(), &m.scm, &case, mode, &cfg)?],
            true,
        ),
        FairnessJob::Batch(spec) => {
            let b = fairness::evaluate_fairness_batch(pred.as_ref(), &m.scm, &spec, mode, &cfg)?;
            (b.reports, false)
        }
    };

    let mut header = vec!["case"];
    header.extend(&sensitive);
    header.extend(["mean", "difference", "status"]);
    let rows = cell_rows(&reports);
    let agg = fairness::aggregate(&reports);
    let agg_rows = vec![
        vec!["Cases".into(), agg.cases.to_string()],
        vec!["Completed cases".into(), agg.completed.to_string()],
        vec![
            "Zero difference (%)".into(),
            agg.zero_percent.map_or("NA".into(), |x| fixed(x, 1)),
        ],
        vec![
            "Difference < 0.01 (%)".into(),
            agg.below_001_percent.map_or("NA".into(), |x| fixed(x, 1)),
        ],
        vec![
            "Median difference".into(),
            agg.median.map_or("NA".into(), |x| fixed(x, 5)),
        ],
        vec![
            "Maximum difference".into(),
            agg.max.map_or("NA".into(), |x| fixed(x, 5)),
        ],
    ];
    match a.out.format {
        Format::Csv => {
            let mut out = open_output(a.out.output.as_deref(), console)?;
            table::write_rows(&header, &rows, &mut out)?;
            out.flush()?;
            table::write_text(&["measure", "value"], &agg_rows, &mut *log)?;
        }
        Format::Table => {
            if let Some(p) = &a.out.output {
                let mut out = open_output(Some(p), console)?;
                table::write_rows(&header, &rows, &mut out)?;
                out.flush()?;
            }
            let per_case: Vec<Vec<String>> = reports
                .iter()
                .enumerate()
                .map(|(i, r)| vec![(i + 1).to_string(), fmt_opt(r.difference), r.failed_cells.to_string()])
                .collect();
            if single {
                table::write_text(&header, &rows, &mut *console)?;
            } else {
                table::write_text(&["case", "difference", "failed_cells"], &per_case, &mut *console)?;
            }
            writeln!(console)?;
            table::write_text(&["measure", "value"], &agg_rows, &mut *console)?;
        }
    }
    if single && reports[0].difference.is_none() {
        let why = reports[0]
            .cells
            .iter()
            .filter_map(|c| c.failure.clone())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Failure::Infeasible(format!("no cell could be evaluated: {why}")));
    }
    Ok(())
}

fn cell_rows(reports: &[CaseReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        for c in &r.cells {
            let mut row = vec![(i + 1).to_string()];
            row.extend(c.values.iter().map(|&v| fmt_value(v)));
            row.push(fmt_opt(c.mean));
            row.push(fmt_opt(r.difference));
            row.push(
                c.failure
                    .clone()
                    .map_or_else(|| "ok".into(), |f| format!("infeasible: {f}")),
            );
            rows.push(row);
        }
    }
    rows
}

fn bench_cases(a: &BenchArgs) -> Result<Vec<cfsim_core::bench::BenchCase>, Failure> {
    let mut cases = Vec::new();
    for c in &a.case {
        match cfsim_core::bench::BenchCase::preset(c) {
            Some(p) => cases.push(p),
            None => cases.extend(formats::load_bench(Path::new(c))?),
        }
    }
    for c in &mut cases {
        if !a.n.is_empty() {
            c.n_grid = a.n.clone();
        }
        if let Some(r) = a.rounds {
            c.rounds = r;
        }
        if let Some(s) = a.seed {
            c.seed = s;
        }
        c.validate().map_err(|e| Failure::Input(e.to_string()))?;
    }
    Ok(cases)
}

pub const BENCH_HEADER: [&str; 14] = [
    "case",
    "n",
    "rounds",
    "infeasible",
    "unique_pct",
    "z_mean",
    "z_min",
    "z_max",
    "sz_mean",
    "sz_min",
    "sz_max",
    "ks",
    "cor_diff",
    "seconds_per_round",
];

fn bench_row(t: &TimedRow) -> Vec<String> {
    let r = &t.row;
    vec![
        r.case.clone(),
        r.n.to_string(),
        r.rounds.to_string(),
        r.infeasible.to_string(),
        fixed(r.unique_percent, 1),
        fixed(r.z_mean, 3),
        fixed(r.z_min, 3),
        fixed(r.z_max, 3),
        fixed(r.sz_mean, 3),
        fixed(r.sz_min, 3),
        fixed(r.sz_max, 3),
        fixed(r.ks_mean, 4),
        r.cor_diff_mean.map_or("NA".into(), |x| fixed(x, 4)),
        fixed(t.seconds_per_round, 4),
    ]
}

fn bench(a: &BenchArgs, console: &mut dyn Write) -> Result<(), Failure> {
    let cases = bench_cases(a)?;
    let cfg = a.sampler.config()?;
    let mut rows = Vec::new();
    for c in &cases {
        for &n in &c.n_grid {
            let t = run_timed(c, n, &cfg).map_err(|e| Failure::Input(e.to_string()))?;
            rows.push(bench_row(&t));
        }
    }
    let mut out = open_output(a.out.output.as_deref(), console)?;
    match a.out.format {
        Format::Csv => table::write_rows(&BENCH_HEADER, &rows, &mut out)?,
        Format::Table => table::write_text(&BENCH_HEADER, &rows, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

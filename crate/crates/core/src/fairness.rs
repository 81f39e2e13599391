//! Counterfactual fairness audits of predictors.
//!
//! For an outcome `Y`, sensitive variables `S` and the remaining parents
//! `W = Pa(Y) \ S`, a case fixes evidence on `W` and on other observed
//! variables. For each sensitive value combination `s` the audit samples the
//! counterfactual world `do(S = s, W = w)` given the evidence, applies the
//! predictor and records its mean. The counterfactual difference of the case
//! is the largest minus the smallest of these means. In [`FairnessMode::ConditionParents`]
//! only `S` is intervened on.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::conditioning::{ConditionError, ConditionSet, SamplerConfig};
use crate::counterfactual::{simulate_counterfactual, CounterfactualQuery, QueryError};
use crate::expr::{self, Expr, ParseError};
use crate::rng::{derive_seed, RngKey};
use crate::scm::{Intervention, ParticleTable, Scm, ScmError};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FairnessMode {
    /// Intervene on the sensitive variables and on `W`.
    #[default]
    FixParents,
    /// Intervene on the sensitive variables only.
    ConditionParents,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("predictor failed: {message}")]
pub struct PredictError {
    pub message: String,
}

impl PredictError {
    pub fn new(message: impl Into<String>) -> Self {
        PredictError {
            message: message.into(),
        }
    }
}

/// A black-box prediction model.
pub trait Predictor {
    /// Observed columns the predictor reads.
    fn inputs(&self) -> Vec<String>;

    /// One prediction per row of `t`.
    fn predict(&self, t: &ParticleTable) -> Result<Vec<f64>, PredictError>;
}

/// A predictor given by an expression over observed variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprPredictor {
    expr: Expr,
}

impl ExprPredictor {
    pub fn new(expr: Expr) -> Self {
        ExprPredictor { expr }
    }

    pub fn parse(src: &str) -> Result<Self, ParseError> {
        Ok(ExprPredictor::new(expr::parse(src)?))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

impl Predictor for ExprPredictor {
    fn inputs(&self) -> Vec<String> {
        self.expr.free_vars().into_iter().collect()
    }

    fn predict(&self, t: &ParticleTable) -> Result<Vec<f64>, PredictError> {
        let compiled = self.expr.try_map_vars(&mut |name: &String| {
            t.column_index(name)
                .ok_or_else(|| PredictError::new(alloc::format!("column `{name}` not in table")))
        })?;
        (0..t.n_rows())
            .map(|i| {
                expr::eval(&compiled, &|&c: &usize| Some(t.column_at(c)[i]))
                    .map_err(|e| PredictError::new(alloc::format!("row {i}: {e}")))
            })
            .collect()
    }
}

/// Calls the predictor twice on `t` and fails unless the outputs agree bit for bit.
pub fn check_deterministic(pred: &dyn Predictor, t: &ParticleTable) -> Result<(), PredictError> {
    let a = pred.predict(t)?;
    let b = pred.predict(t)?;
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) {
        return Err(PredictError::new("predictor is not deterministic on the probe table"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessCase {
    pub outcome: String,
    /// Sensitive variables with the values to compare.
    pub sensitive: Vec<(String, Vec<f64>)>,
    /// Evidence on `Pa(outcome) \ S`.
    pub w_conditions: ConditionSet,
    /// Other evidence.
    pub c_conditions: ConditionSet,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FairnessError {
    #[error("invalid fairness case: {0}")]
    InvalidCase(String),
    #[error(transparent)]
    Predictor(#[from] PredictError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

impl From<ScmError> for FairnessError {
    fn from(e: ScmError) -> Self {
        FairnessError::Query(e.into())
    }
}

/// Result for one sensitive value combination.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub values: Vec<f64>,
    pub mean: Option<f64>,
    /// Why the cell could not be evaluated (infeasible evidence).
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub cells: Vec<CellResult>,
    /// Max minus min of the cell means over the cells that succeeded.
    pub difference: Option<f64>,
    pub failed_cells: usize,
}

impl CaseReport {
    pub fn is_complete(&self) -> bool {
        self.failed_cells == 0 && self.difference.is_some()
    }
}

/// `W = Pa(outcome) \ S` in model order.
pub fn w_variables<S: AsRef<str>>(m: &Scm, outcome: &str, sensitive: &[S]) -> Result<Vec<String>, FairnessError> {
    let y = m
        .var_index(outcome)
        .ok_or_else(|| FairnessError::InvalidCase(alloc::format!("unknown outcome `{outcome}`")))?;
    let s: BTreeSet<&str> = sensitive.iter().map(AsRef::as_ref).collect();
    Ok(m.variable(y)
        .parents()
        .iter()
        .map(|&p| m.variable(p).name())
        .filter(|n| !s.contains(n))
        .map(ToString::to_string)
        .collect())
}

fn validate(m: &Scm, case: &FairnessCase) -> Result<(), FairnessError> {
    let bad = |msg: String| Err(FairnessError::InvalidCase(msg));
    if case.sensitive.is_empty() {
        return bad("no sensitive variables".into());
    }
    for (name, grid) in &case.sensitive {
        if m.var_index(name).is_none() {
            return bad(alloc::format!("unknown sensitive variable `{name}`"));
        }
        if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) {
            return bad(alloc::format!("value grid of `{name}` must be finite and nonempty"));
        }
    }
    let names: Vec<&str> = case.sensitive.iter().map(|(n, _)| n.as_str()).collect();
    let expected: BTreeSet<String> = w_variables(m, &case.outcome, &names)?.into_iter().collect();
    let given: BTreeSet<String> = case.w_conditions.variables().map(Into::into).collect();
    if expected != given {
        return bad(alloc::format!(
            "W-conditions must cover exactly the parents of `{}` outside S: expected {:?}, got {:?}",
            case.outcome,
            expected,
            given
        ));
    }
    if case.c_conditions.variables().any(|v| given.contains(v)) {
        return bad("a variable appears in both W- and C-conditions".into());
    }
    Ok(())
}

/// Cartesian product of the value grids, first variable varying slowest.
fn grid(sensitive: &[(String, Vec<f64>)]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = alloc::vec![Vec::new()];
    for (_, values) in sensitive {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Audits one case. Cells with infeasible evidence are recorded and skipped.
pub fn evaluate_fairness(
    pred: &dyn Predictor,
    m: &Scm,
    case: &FairnessCase,
    mode: FairnessMode,
    cfg: &SamplerConfig,
) -> Result<CaseReport, FairnessError> {
    validate(m, case)?;
    let mut conditions = case.w_conditions.clone();
    conditions.extend(&case.c_conditions);
    let inputs = pred.inputs();
    for name in &inputs {
        if m.var_index(name).is_none() {
            return Err(FairnessError::InvalidCase(alloc::format!(
                "predictor input `{name}` is not an observed variable"
            )));
        }
    }
    let mut cells = Vec::new();
    for (j, values) in grid(&case.sensitive).into_iter().enumerate() {
        let mut iv = Intervention::new();
        for ((name, _), &v) in case.sensitive.iter().zip(&values) {
            iv.insert(name, v);
        }
        if mode == FairnessMode::FixParents {
            for c in case.w_conditions.iter() {
                iv.insert(&c.variable, c.value);
            }
        }
        let q = CounterfactualQuery {
            conditions: conditions.clone(),
            targets: inputs.iter().filter(|t| !iv.contains(t)).cloned().collect(),
            intervention: iv,
            n: case.n,
            seed: derive_seed(case.seed, j as u64),
        };
        match simulate_counterfactual(m, &q, cfg) {
            Ok(t) => {
                let p = pred.predict(&t)?;
                if p.len() != t.n_rows() {
                    return Err(PredictError::new(alloc::format!(
                        "expected {} predictions, got {}",
                        t.n_rows(),
                        p.len()
                    ))
                    .into());
                }
                cells.push(CellResult {
                    values,
                    mean: Some(stats::mean(&p)),
                    failure: None,
                });
            }
            Err(QueryError::Condition(ConditionError::Infeasible(e))) => cells.push(CellResult {
                values,
                mean: None,
                failure: Some(e.to_string()),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    let means: Vec<f64> = cells.iter().filter_map(|c| c.mean).collect();
    let difference = (!means.is_empty()).then(|| {
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    });
    let failed_cells = cells.iter().filter(|c| c.mean.is_none()).count();
    Ok(CaseReport {
        cells,
        difference,
        failed_cells,
    })
}

/// Settings for auditing many cases sampled from the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub outcome: String,
    pub sensitive: Vec<(String, Vec<f64>)>,
    pub cases: usize,
    pub n_per_case: usize,
    pub seed: u64,
}

/// Draws `spec.cases` rows from the model and turns each into a case: the
/// values of `Pa(outcome) \ S` become W-conditions and every other observed
/// value except the outcome becomes a C-condition.
pub fn sample_cases(m: &Scm, spec: &BatchSpec) -> Result<Vec<FairnessCase>, FairnessError> {
    let names: Vec<&str> = spec.sensitive.iter().map(|(n, _)| n.as_str()).collect();
    let w: BTreeSet<String> = w_variables(m, &spec.outcome, &names)?.into_iter().collect();
    let rows = m.simulate(spec.cases, None, RngKey::new(spec.seed).derive_name("cases"))?;
    Ok((0..spec.cases)
        .map(|i| {
            let mut w_conditions = ConditionSet::new();
            let mut c_conditions = ConditionSet::new();
            for (k, v) in m.variables().iter().enumerate() {
                let value = rows.column_at(m.observed_column(k))[i];
                if v.name() == spec.outcome {
                    continue;
                }
                if w.contains(v.name()) {
                    w_conditions = w_conditions.with(v.name(), value);
                } else {
                    c_conditions = c_conditions.with(v.name(), value);
                }
            }
            FairnessCase {
                outcome: spec.outcome.clone(),
                sensitive: spec.sensitive.clone(),
                w_conditions,
                c_conditions,
                n: spec.n_per_case,
                seed: derive_seed(spec.seed, i as u64),
            }
        })
        .collect())
}

/// Aggregate over completed cases; all fields are `None` when there are none.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FairnessAggregate {
    pub cases: usize,
    pub completed: usize,
    pub zero_percent: Option<f64>,
    pub below_001_percent: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
}

pub fn aggregate(reports: &[CaseReport]) -> FairnessAggregate {
    let diffs: Vec<f64> = reports
        .iter()
        .filter(|r| r.is_complete())
        .filter_map(|r| r.difference)
        .collect();
    let k = diffs.len();
    let pct = |pred: &dyn Fn(f64) -> bool| {
        (k > 0).then(|| 100.0 * diffs.iter().filter(|&&d| pred(d)).count() as f64 / k as f64)
    };
    FairnessAggregate {
        cases: reports.len(),
        completed: k,
        zero_percent: pct(&|d| d == 0.0),
        below_001_percent: pct(&|d| d < 0.01),
        median: (k > 0).then(|| stats::median(&diffs)),
        max: diffs.iter().copied().reduce(f64::max),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub cases: Vec<FairnessCase>,
    pub reports: Vec<CaseReport>,
    pub aggregate: FairnessAggregate,
}

pub fn evaluate_fairness_batch(
    pred: &dyn Predictor,
    m: &Scm,
    spec: &BatchSpec,
    mode: FairnessMode,
    cfg: &SamplerConfig,
) -> Result<BatchReport, FairnessError> {
    let cases = sample_cases(m, spec)?;
    let reports = cases
        .iter()
        .map(|c| evaluate_fairness(pred, m, c, mode, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = aggregate(&reports);
    Ok(BatchReport {
        cases,
        reports,
        aggregate,
    })
}

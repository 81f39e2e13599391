//! Sampling from a model conditioned on evidence.
//!
//! A condition on a continuous variable `C = c` is handled by solving each
//! row's dedicated error from `f_C(u, parents) = c`, weighting the solution by
//! the error density divided by the derivative of `f_C` in `u`, resampling,
//! and re-simulating everything from the updated background columns. A
//! condition on a discrete variable keeps the rows that satisfy it and
//! resamples among them. Several conditions are processed one at a time in
//! topological order; before each step the variables already conditioned on
//! and all their ancestors are held fixed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::expr::EvalError;
use crate::par;
use crate::rng::RngKey;
use crate::scm::{Monotonicity, ParticleTable, Scm, ScmError, VariableKind};
use crate::stats;

/// `variable = value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub variable: String,
    pub value: f64,
}

impl Condition {
    pub fn new(variable: &str, value: f64) -> Self {
        Condition {
            variable: variable.into(),
            value,
        }
    }
}

/// Evidence `C = c`. Conditions may be given in any order; they are sorted
/// topologically when resolved against a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditionSet {
    conditions: Vec<Condition>,
}

impl ConditionSet {
    pub fn new() -> Self {
        ConditionSet::default()
    }

    pub fn with(mut self, variable: &str, value: f64) -> Self {
        self.push(Condition::new(variable, value));
        self
    }

    pub fn push(&mut self, c: Condition) {
        self.conditions.push(c);
    }

    pub fn extend(&mut self, other: &ConditionSet) {
        self.conditions.extend(other.conditions.iter().cloned());
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter()
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.conditions.iter().map(|c| c.variable.as_str())
    }

    /// The conditions in the model's topological order.
    pub fn sorted(&self, m: &Scm) -> Result<Vec<Condition>, ConditionError> {
        Ok(self
            .resolve(m)?
            .into_iter()
            .map(|r| Condition::new(m.variable(r.var).name(), r.value))
            .collect())
    }

    fn resolve(&self, m: &Scm) -> Result<Vec<Resolved>, ConditionError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(self.conditions.len());
        for c in &self.conditions {
            let var = m
                .var_index(&c.variable)
                .ok_or_else(|| ConditionError::UnknownVariable(c.variable.clone()))?;
            if !seen.insert(var) {
                return Err(ConditionError::Duplicate(c.variable.clone()));
            }
            if !c.value.is_finite() {
                return Err(ConditionError::NonFinite(c.variable.clone()));
            }
            out.push(resolve_one(m, var, c.value)?);
        }
        out.sort_by_key(|r| r.var);
        Ok(out)
    }
}

impl FromIterator<Condition> for ConditionSet {
    fn from_iter<I: IntoIterator<Item = Condition>>(iter: I) -> Self {
        ConditionSet {
            conditions: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Resolved {
    var: usize,
    value: f64,
    discrete: bool,
}

fn resolve_one(m: &Scm, var: usize, value: f64) -> Result<Resolved, ConditionError> {
    let v = m.variable(var);
    let discrete = v.kind() == VariableKind::Discrete || v.intervened().is_some();
    if !discrete && (v.monotonicity() == Monotonicity::None || !v.uses_error()) {
        return Err(ConditionError::NotInvertible(v.name().into()));
    }
    Ok(Resolved { var, value, discrete })
}

/// Bisection settings for solving a dedicated error from a condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootFindConfig {
    /// Error-distribution quantiles of the initial bracket.
    pub bracket: (f64, f64),
    /// Absolute tolerance on `|f(u) - c|`; `None` uses `1e-9 * max(1, |c|)`.
    pub tolerance: Option<f64>,
    pub max_iterations: usize,
    pub max_doublings: usize,
}

impl Default for RootFindConfig {
    fn default() -> Self {
        RootFindConfig {
            bracket: (1e-9, 1.0 - 1e-9),
            tolerance: None,
            max_iterations: 200,
            max_doublings: 64,
        }
    }
}

impl RootFindConfig {
    pub fn tolerance_at(&self, c: f64) -> f64 {
        self.tolerance.unwrap_or(1e-9 * libm::fabs(c).max(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResampleScheme {
    #[default]
    Multinomial,
    Systematic,
}

impl FromStr for ResampleScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multinomial" => Ok(ResampleScheme::Multinomial),
            "systematic" => Ok(ResampleScheme::Systematic),
            other => Err(alloc::format!(
                "unknown resampling scheme `{other}` (expected multinomial or systematic)"
            )),
        }
    }
}

impl fmt::Display for ResampleScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResampleScheme::Multinomial => "multinomial",
            ResampleScheme::Systematic => "systematic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub root: RootFindConfig,
    pub scheme: ResampleScheme,
    /// Restrict counterfactual queries to the ancestors of the variables involved.
    pub prune: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            root: RootFindConfig::default(),
            scheme: ResampleScheme::Multinomial,
            prune: true,
        }
    }
}

/// Summary of one conditioning step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub condition_index: usize,
    pub variable: String,
    pub value: f64,
    pub discrete: bool,
    /// Particles simulated before weighting or filtering.
    pub pool: usize,
    /// Particles with positive weight (matching rows for a discrete condition).
    pub positive: usize,
    pub na_roots: usize,
    pub ess: f64,
    /// Distinct pool rows that survived resampling.
    pub unique_ancestors: usize,
}

/// No particle is compatible with a condition.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleEvidence {
    pub condition_index: Option<usize>,
    pub variable: Option<String>,
    pub value: Option<f64>,
    pub pool: usize,
    /// Rows where the dedicated error could not be solved for.
    pub na_roots: usize,
    /// Range of the simulated variable over the pool.
    pub observed_range: Option<(f64, f64)>,
    /// Most frequent simulated values with their counts (discrete conditions).
    pub marginal: Vec<(f64, usize)>,
}

impl fmt::Display for InfeasibleEvidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.variable, self.value) {
            (Some(v), Some(c)) => write!(f, "infeasible evidence {v} = {c}")?,
            _ => write!(f, "infeasible evidence: all weights are zero")?,
        }
        if let Some(i) = self.condition_index {
            write!(f, " (condition {})", i + 1)?;
        }
        write!(f, "; pool {}", self.pool)?;
        if self.na_roots > 0 {
            write!(f, ", unsolvable rows {}", self.na_roots)?;
        }
        if let Some((lo, hi)) = self.observed_range {
            write!(f, ", simulated range [{lo}, {hi}]")?;
        }
        if !self.marginal.is_empty() {
            f.write_str(", simulated values")?;
            for (v, c) in &self.marginal {
                write!(f, " {v}:{c}")?;
            }
        }
        Ok(())
    }
}

impl core::error::Error for InfeasibleEvidence {}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConditionError {
    #[error("unknown variable `{0}` in condition")]
    UnknownVariable(String),
    #[error("more than one condition on `{0}`")]
    Duplicate(String),
    #[error("condition value for `{0}` is not finite")]
    NonFinite(String),
    #[error("cannot condition on continuous `{0}`: its equation is not declared monotonic in its error term")]
    NotInvertible(String),
    #[error("`{variable}` is not increasing in its error term (row {row}); check its monotonicity declaration")]
    NonMonotone { variable: String, row: usize },
    #[error("evaluating `{variable}` at row {row}: {source}")]
    Eval {
        variable: String,
        row: usize,
        source: EvalError,
    },
    #[error(transparent)]
    Model(#[from] ScmError),
    #[error("{0}")]
    Infeasible(#[from] InfeasibleEvidence),
}

fn eval_err(m: &Scm, var: usize, row: usize) -> impl FnOnce(EvalError) -> ConditionError + '_ {
    move |source| ConditionError::Eval {
        variable: m.variable(var).name().into(),
        row,
        source,
    }
}

fn row_of(t: &ParticleTable, i: usize) -> impl Fn(usize) -> f64 + '_ {
    move |c| t.column_at(c)[i]
}

fn parents_missing(m: &Scm, var: usize, row: &impl Fn(usize) -> f64) -> bool {
    let err = m.error_column(var);
    m.has_missing_input(var, &|c| if c == err { 0.0 } else { row(c) })
}

fn root_at(
    m: &Scm,
    var: usize,
    row: &impl Fn(usize) -> f64,
    i: usize,
    c: f64,
    cfg: &RootFindConfig,
) -> Result<Option<f64>, ConditionError> {
    if parents_missing(m, var, row) {
        return Ok(None);
    }
    let v = m.variable(var);
    let f = |u: f64| m.eval_with_error(var, row, u);
    if v.monotonicity() == Monotonicity::Additive {
        return Ok(Some(c - f(0.0).map_err(eval_err(m, var, i))?));
    }
    let tol = cfg.tolerance_at(c);
    let dist = v.error();
    let mut lo = dist.quantile(cfg.bracket.0);
    let mut hi = dist.quantile(cfg.bracket.1);
    let mut flo = f(lo).map_err(eval_err(m, var, i))?;
    let mut fhi = f(hi).map_err(eval_err(m, var, i))?;
    if flo > fhi {
        return Err(ConditionError::NonMonotone {
            variable: v.name().into(),
            row: i,
        });
    }
    let mut step = (hi - lo).max(1.0);
    for _ in 0..cfg.max_doublings {
        if flo <= c {
            break;
        }
        lo -= step;
        step *= 2.0;
        match f(lo) {
            Ok(x) => flo = x,
            Err(_) => return Ok(None),
        }
    }
    let mut step = (hi - lo).max(1.0);
    for _ in 0..cfg.max_doublings {
        if fhi >= c {
            break;
        }
        hi += step;
        step *= 2.0;
        match f(hi) {
            Ok(x) => fhi = x,
            Err(_) => return Ok(None),
        }
    }
    if flo > c || fhi < c {
        return Ok(None);
    }
    if libm::fabs(flo - c) <= tol {
        return Ok(Some(lo));
    }
    if libm::fabs(fhi - c) <= tol {
        return Ok(Some(hi));
    }
    for _ in 0..cfg.max_iterations {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid).map_err(eval_err(m, var, i))?;
        if libm::fabs(fm - c) <= tol {
            return Ok(Some(mid));
        }
        if fm < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(None)
}

fn weight_at(
    m: &Scm,
    var: usize,
    row: &impl Fn(usize) -> f64,
    i: usize,
    root: Option<f64>,
) -> Result<f64, ConditionError> {
    let Some(u) = root else { return Ok(0.0) };
    let v = m.variable(var);
    let density = v.error().pdf(u);
    if density == 0.0 {
        return Ok(0.0);
    }
    if v.monotonicity() == Monotonicity::Additive {
        return Ok(density);
    }
    let h = (1e-6 * libm::fabs(u)).max(1e-6);
    let f = |x: f64| m.eval_with_error(var, row, x);
    let slope = match (f(u + h), f(u - h)) {
        (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
        (Ok(a), Err(_)) => (a - f(u).map_err(eval_err(m, var, i))?) / h,
        (Err(_), Ok(b)) => (f(u).map_err(eval_err(m, var, i))? - b) / h,
        (Err(e), Err(_)) => return Err(eval_err(m, var, i)(e)),
    };
    if !(slope > 0.0) {
        return Err(ConditionError::NonMonotone {
            variable: v.name().into(),
            row: i,
        });
    }
    Ok(density / slope)
}

/// Solves the dedicated error of `variable` so that it takes the value `c`
/// on a row given in the model's column order.
///
/// Returns `None` when no solution exists within the expanded bracket.
pub fn find_root(
    m: &Scm,
    row: &[f64],
    variable: &str,
    c: f64,
    cfg: &RootFindConfig,
) -> Result<Option<f64>, ConditionError> {
    let var = m.var_index_or_err(variable)?;
    resolve_one(m, var, c)?;
    root_at(m, var, &|col| row[col], 0, c, cfg)
}

/// Importance weight of a solved error value: the error density at the root
/// divided by the derivative of the equation in the error. Zero when the root
/// is missing.
pub fn weight(m: &Scm, row: &[f64], variable: &str, root: Option<f64>) -> Result<f64, ConditionError> {
    let var = m.var_index_or_err(variable)?;
    weight_at(m, var, &|col| row[col], 0, root)
}

/// Ancestor indices drawn in proportion to `w`; `None` if no weight is positive.
///
/// Multinomial draws are independent; systematic resampling uses one
/// uniform offset for a stratified grid. Both give row `i` an expected
/// `n * w_i / sum(w)` copies.
pub fn resample_indices(w: &[f64], n: usize, scheme: ResampleScheme, key: RngKey) -> Option<Vec<usize>> {
    let mut cum = Vec::with_capacity(w.len());
    let mut total = 0.0;
    let mut last_positive = None;
    for (i, &x) in w.iter().enumerate() {
        if x > 0.0 {
            total += x;
            last_positive = Some(i);
        }
        cum.push(total);
    }
    let last = last_positive?;
    let pick = |target: f64| cum.partition_point(|&s| s <= target).min(last);
    let mut s = key.stream(0);
    Some(match scheme {
        ResampleScheme::Multinomial => (0..n).map(|_| pick(s.next_open01() * total)).collect(),
        ResampleScheme::Systematic => {
            let offset = s.next_open01();
            let step = total / n as f64;
            (0..n).map(|i| pick((offset + i as f64) * step)).collect()
        }
    })
}

/// Draws `n` rows of `t` with replacement according to `w`.
pub fn resample(
    t: &ParticleTable,
    w: &[f64],
    n: usize,
    scheme: ResampleScheme,
    key: RngKey,
) -> Result<ParticleTable, InfeasibleEvidence> {
    assert_eq!(w.len(), t.n_rows(), "one weight per row");
    let idx = resample_indices(w, n, scheme, key).ok_or_else(|| InfeasibleEvidence {
        condition_index: None,
        variable: None,
        value: None,
        pool: t.n_rows(),
        na_roots: 0,
        observed_range: None,
        marginal: Vec::new(),
    })?;
    Ok(t.select_rows(&idx))
}

fn distinct(idx: &[usize]) -> usize {
    idx.iter().collect::<BTreeSet<_>>().len()
}

fn range_of(xs: &[f64]) -> Option<(f64, f64)> {
    xs.iter().filter(|x| !x.is_nan()).fold(None, |acc, &x| match acc {
        None => Some((x, x)),
        Some((lo, hi)) => Some((f64::min(lo, x), f64::max(hi, x))),
    })
}

#[allow(clippy::too_many_arguments)]
fn continuous_step(
    m: &Scm,
    n: usize,
    cond: Resolved,
    index: usize,
    d0: Option<&ParticleTable>,
    key: RngKey,
    cfg: &SamplerConfig,
    weighted: bool,
) -> Result<ParticleTable, ConditionError> {
    let var = cond.var;
    let mut d = m.simulate(n, d0, key.derive(0))?;
    let solved = {
        let d = &d;
        par::try_map_rows(n, |i| {
            let row = row_of(d, i);
            let root = root_at(m, var, &row, i, cond.value, &cfg.root)?;
            let w = weight_at(m, var, &row, i, root)?;
            Ok::<_, ConditionError>((root, w))
        })?
    };
    let na_roots = solved.iter().filter(|(r, _)| r.is_none()).count();
    let weights: Vec<f64> = solved.iter().map(|&(_, w)| w).collect();
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    let infeasible = |d: &ParticleTable| InfeasibleEvidence {
        condition_index: Some(index),
        variable: Some(m.variable(var).name().into()),
        value: Some(cond.value),
        pool: n,
        na_roots,
        observed_range: range_of(d.column_at(m.observed_column(var))),
        marginal: Vec::new(),
    };
    if positive == 0 {
        return Err(infeasible(&d).into());
    }
    let err_col = m.error_column(var);
    for (slot, (root, _)) in d.column_mut(err_col).iter_mut().zip(&solved) {
        *slot = root.unwrap_or(f64::NAN);
    }
    let mut diag = StepDiagnostics {
        condition_index: index,
        variable: m.variable(var).name().into(),
        value: cond.value,
        discrete: false,
        pool: n,
        positive,
        na_roots,
        ess: stats::ess(&weights),
        unique_ancestors: positive,
    };
    let background = d.select_columns(m.background_names());
    let mut out = if weighted {
        let mut out = m.simulate(n, Some(&background), key.derive(1))?;
        out.set_weights(weights);
        out
    } else {
        let idx = resample_indices(&weights, n, cfg.scheme, key.derive(2)).ok_or_else(|| infeasible(&d))?;
        diag.unique_ancestors = distinct(&idx);
        m.simulate(n, Some(&background.select_rows(&idx)), key.derive(1))?
    };
    let mut history = d0.map(|t| t.diagnostics().to_vec()).unwrap_or_default();
    history.push(diag);
    out.set_diagnostics(history);
    Ok(out)
}

fn discrete_step(
    m: &Scm,
    n: usize,
    cond: Resolved,
    index: usize,
    d0: Option<&ParticleTable>,
    key: RngKey,
    cfg: &SamplerConfig,
) -> Result<ParticleTable, ConditionError> {
    let var = cond.var;
    let d = m.simulate(n, d0, key.derive(0))?;
    let column = d.column_at(m.observed_column(var));
    let weights: Vec<f64> = column
        .iter()
        .map(|&x| if x == cond.value { 1.0 } else { 0.0 })
        .collect();
    let matched = weights.iter().filter(|&&w| w > 0.0).count();
    let Some(idx) = resample_indices(&weights, n, cfg.scheme, key.derive(2)) else {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for x in column.iter().filter(|x| !x.is_nan()) {
            *counts.entry(x.to_bits()).or_default() += 1;
        }
        let mut marginal: Vec<(f64, usize)> = counts.into_iter().map(|(b, c)| (f64::from_bits(b), c)).collect();
        marginal.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
        marginal.truncate(10);
        return Err(InfeasibleEvidence {
            condition_index: Some(index),
            variable: Some(m.variable(var).name().into()),
            value: Some(cond.value),
            pool: n,
            na_roots: 0,
            observed_range: range_of(column),
            marginal,
        }
        .into());
    };
    let diag = StepDiagnostics {
        condition_index: index,
        variable: m.variable(var).name().into(),
        value: cond.value,
        discrete: true,
        pool: n,
        positive: matched,
        na_roots: 0,
        ess: matched as f64,
        unique_ancestors: distinct(&idx),
    };
    let mut out = d.select_rows(&idx);
    out.clear_weights();
    let mut history = d0.map(|t| t.diagnostics().to_vec()).unwrap_or_default();
    history.push(diag);
    out.set_diagnostics(history);
    Ok(out)
}

/// Samples `n` rows given one condition on a continuous variable.
///
/// With `weighted` the resampling step is skipped and the table carries
/// normalized importance weights instead; rows whose error could not be
/// solved keep weight zero and missing values downstream.
pub fn simulate_continuous_condition(
    m: &Scm,
    n: usize,
    cond: &Condition,
    d0: Option<&ParticleTable>,
    key: RngKey,
    cfg: &SamplerConfig,
    weighted: bool,
) -> Result<ParticleTable, ConditionError> {
    let r = ConditionSet::new().with(&cond.variable, cond.value).resolve(m)?[0];
    if r.discrete {
        return Err(ConditionError::NotInvertible(cond.variable.clone()));
    }
    continuous_step(m, n, r, 0, d0, key, cfg, weighted)
}

/// Samples `n` rows given one condition on a discrete variable by filtering
/// and resampling. Continuous variables are accepted too, but an exact match
/// then has probability zero.
pub fn simulate_discrete_condition(
    m: &Scm,
    n: usize,
    cond: &Condition,
    d0: Option<&ParticleTable>,
    key: RngKey,
    cfg: &SamplerConfig,
) -> Result<ParticleTable, ConditionError> {
    let var = m
        .var_index(&cond.variable)
        .ok_or_else(|| ConditionError::UnknownVariable(cond.variable.clone()))?;
    let r = Resolved {
        var,
        value: cond.value,
        discrete: true,
    };
    discrete_step(m, n, r, 0, d0, key, cfg)
}

/// Samples `n` rows given all conditions in `cs`.
///
/// An empty set reduces to plain simulation.
pub fn simulate_multiple_conditions(
    m: &Scm,
    n: usize,
    cs: &ConditionSet,
    key: RngKey,
    cfg: &SamplerConfig,
) -> Result<ParticleTable, ConditionError> {
    let conds = cs.resolve(m)?;
    if conds.is_empty() {
        return Ok(m.simulate(n, None, key)?);
    }
    let mut fixed: BTreeSet<usize> = BTreeSet::new();
    let mut current: Option<ParticleTable> = None;
    for (j, cond) in conds.iter().enumerate() {
        let d0 = current.as_ref().map(|t| {
            let names: Vec<&str> = fixed.iter().map(|&c| m.columns()[c].as_str()).collect();
            t.select_columns(&names)
        });
        let step_key = key.derive(j as u64 + 1);
        let next = if cond.discrete {
            discrete_step(m, n, *cond, j, d0.as_ref(), step_key, cfg)?
        } else {
            continuous_step(m, n, *cond, j, d0.as_ref(), step_key, cfg, false)?
        };
        fixed.extend(m.ancestral_columns(&[cond.var]));
        current = Some(next);
    }
    Ok(current.unwrap())
}

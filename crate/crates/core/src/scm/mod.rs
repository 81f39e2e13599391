//! Structural causal models.
//!
//! A model has observed variables `V`, each with exactly one dedicated error
//! term, plus optional global background variables shared between several
//! observed variables. Columns of a [`ParticleTable`] follow the model's
//! topological order: global background variables (declaration order), then
//! dedicated errors (named `u_<variable>`), then observed variables. Ties in
//! the order are broken by declaration order.

mod table;

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::dist::Dist;
use crate::expr::{self, EvalError, Expr, ParseError, Program, ERROR_SYMBOL};
use crate::par;
use crate::rng::{stream_id, RngKey};

pub use table::ParticleTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableKind {
    Continuous,
    Discrete,
}

/// How the dedicated error enters a variable's equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    /// `g(parents) + u`.
    Additive,
    /// Strictly increasing and differentiable in `u`.
    MonotonicGeneral,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    pub error: Option<Dist>,
    pub expr: Expr,
    /// `None` infers `Additive` when the expression has the additive shape
    /// and `None` otherwise.
    pub monotonicity: Option<Monotonicity>,
}

impl VariableSpec {
    pub fn new(name: &str, kind: VariableKind, error: Dist, expr: &str) -> Result<Self, ParseError> {
        Ok(VariableSpec {
            name: name.into(),
            kind,
            error: Some(error),
            expr: expr::parse(expr)?,
            monotonicity: None,
        })
    }

    pub fn continuous(name: &str, error: Dist, expr: &str) -> Result<Self, ParseError> {
        VariableSpec::new(name, VariableKind::Continuous, error, expr)
    }

    pub fn discrete(name: &str, error: Dist, expr: &str) -> Result<Self, ParseError> {
        VariableSpec::new(name, VariableKind::Discrete, error, expr)
    }

    pub fn with_monotonicity(mut self, m: Monotonicity) -> Self {
        self.monotonicity = Some(m);
        self
    }
}

/// A global background variable.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSpec {
    pub name: String,
    pub dist: Dist,
}

impl BackgroundSpec {
    pub fn new(name: &str, dist: Dist) -> Self {
        BackgroundSpec {
            name: name.into(),
            dist,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSpec {
    pub background: Vec<BackgroundSpec>,
    pub variables: Vec<VariableSpec>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScmError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("`{0}` is a reserved name")]
    ReservedName(String),
    #[error("variable `{0}` has no error distribution")]
    MissingError(String),
    #[error("variable `{variable}` references unknown identifier `{name}`")]
    UnknownIdentifier { variable: String, name: String },
    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("background variable `{0}` is not referenced by any variable")]
    UnusedBackground(String),
    #[error("variable `{0}` is declared additive but its expression is not of the form g(...) + u")]
    NotAdditive(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("intervention value {value} for `{variable}` is not finite")]
    NonFiniteIntervention { variable: String, value: f64 },
    #[error("evaluating `{variable}` at row {row}: {source}")]
    Eval {
        variable: String,
        row: usize,
        source: EvalError,
    },
    #[error("initial table has {found} rows, expected {expected}")]
    RowMismatch { expected: usize, found: usize },
    #[error("initial table column `{0}` is not in the model")]
    UnknownColumn(String),
    #[error("initial table fixes `{column}` but not its parent `{parent}`")]
    NotAncestral { column: String, parent: String },
    #[error("row {row}: `{variable}` holds {found} but its equation gives {expected}")]
    Inconsistent {
        variable: String,
        row: usize,
        expected: f64,
        found: f64,
    },
}

/// `do(X = x)`: observed variable names mapped to constants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Intervention {
    values: BTreeMap<String, f64>,
}

impl Intervention {
    pub fn new() -> Self {
        Intervention::default()
    }

    pub fn set(mut self, variable: &str, value: f64) -> Self {
        self.values.insert(variable.into(), value);
        self
    }

    pub fn insert(&mut self, variable: &str, value: f64) {
        self.values.insert(variable.into(), value);
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, variable: &str) -> Option<f64> {
        self.values.get(variable).copied()
    }

    pub fn contains(&self, variable: &str) -> bool {
        self.values.contains_key(variable)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl<S: AsRef<str>> FromIterator<(S, f64)> for Intervention {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Intervention {
            values: iter.into_iter().map(|(k, v)| (k.as_ref().into(), v)).collect(),
        }
    }
}

/// An observed variable of a built model.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    name: String,
    kind: VariableKind,
    error: Dist,
    monotonicity: Monotonicity,
    expr: Expr,
    compiled: Expr<usize>,
    program: Program,
    intervened: Option<f64>,
    parents: Vec<usize>,
    globals: Vec<usize>,
    inputs: Vec<usize>,
    uses_error: bool,
}

impl Variable {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> VariableKind {
        self.kind
    }

    pub fn error(&self) -> Dist {
        self.error
    }

    pub fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }

    /// Current equation: the declared one, or the constant under an intervention.
    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn intervened(&self) -> Option<f64> {
        self.intervened
    }

    /// Observed parents as variable indices.
    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    /// Global background parents as background indices.
    pub fn global_parents(&self) -> &[usize] {
        &self.globals
    }

    pub fn uses_error(&self) -> bool {
        self.uses_error
    }
}

/// A validated model with its topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scm {
    globals: Vec<BackgroundSpec>,
    vars: Vec<Variable>,
    columns: Vec<String>,
    index: BTreeMap<String, usize>,
}

pub fn error_column_name(variable: &str) -> String {
    format!("u_{variable}")
}

impl Scm {
    pub fn build(spec: &ModelSpec) -> Result<Scm, ScmError> {
        let mut seen = BTreeSet::new();
        let mut claim = |name: &str| {
            if name == ERROR_SYMBOL {
                return Err(ScmError::ReservedName(name.into()));
            }
            if !seen.insert(name.to_string()) {
                return Err(ScmError::DuplicateName(name.into()));
            }
            Ok(())
        };
        for g in &spec.background {
            claim(&g.name)?;
        }
        for v in &spec.variables {
            claim(&v.name)?;
        }
        for v in &spec.variables {
            claim(&error_column_name(&v.name))?;
        }

        let var_pos: BTreeMap<&str, usize> = spec
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), i))
            .collect();
        let global_names: BTreeSet<&str> = spec.background.iter().map(|g| g.name.as_str()).collect();
        let mut used_globals = BTreeSet::new();
        let mut parents: Vec<Vec<usize>> = Vec::with_capacity(spec.variables.len());
        for v in &spec.variables {
            if v.error.is_none() {
                return Err(ScmError::MissingError(v.name.clone()));
            }
            if v.monotonicity == Some(Monotonicity::Additive) && !v.expr.is_additive_in_error() {
                return Err(ScmError::NotAdditive(v.name.clone()));
            }
            let mut ps = Vec::new();
            for name in v.expr.free_vars() {
                if name == ERROR_SYMBOL {
                    continue;
                }
                if let Some(&p) = var_pos.get(name.as_str()) {
                    ps.push(p);
                } else if global_names.contains(name.as_str()) {
                    used_globals.insert(name);
                } else {
                    return Err(ScmError::UnknownIdentifier {
                        variable: v.name.clone(),
                        name,
                    });
                }
            }
            parents.push(ps);
        }
        if let Some(g) = spec.background.iter().find(|g| !used_globals.contains(&g.name)) {
            return Err(ScmError::UnusedBackground(g.name.clone()));
        }

        let order = topological_order(&parents)
            .map_err(|cycle| ScmError::Cycle(cycle.into_iter().map(|i| spec.variables[i].name.clone()).collect()))?;

        let vars = order
            .into_iter()
            .map(|i| {
                let v = &spec.variables[i];
                let monotonicity = v.monotonicity.unwrap_or(if v.expr.is_additive_in_error() {
                    Monotonicity::Additive
                } else {
                    Monotonicity::None
                });
                Variable {
                    name: v.name.clone(),
                    kind: v.kind,
                    error: v.error.unwrap(),
                    monotonicity,
                    expr: v.expr.clone(),
                    compiled: Expr::Num(0.0),
                    program: Program::default(),
                    intervened: None,
                    parents: Vec::new(),
                    globals: Vec::new(),
                    inputs: Vec::new(),
                    uses_error: false,
                }
            })
            .collect();
        Ok(Scm::assemble(spec.background.clone(), vars))
    }

    /// Lays out columns and compiles equations; `vars` must already be in
    /// topological order and every identifier must resolve.
    fn assemble(globals: Vec<BackgroundSpec>, mut vars: Vec<Variable>) -> Scm {
        let (g, j) = (globals.len(), vars.len());
        let mut columns: Vec<String> = globals.iter().map(|b| b.name.clone()).collect();
        columns.extend(vars.iter().map(|v| error_column_name(&v.name)));
        columns.extend(vars.iter().map(|v| v.name.clone()));
        let index: BTreeMap<String, usize> = columns.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        for (k, v) in vars.iter_mut().enumerate() {
            let error_col = g + k;
            let compiled = v
                .expr
                .try_map_vars(&mut |name: &String| {
                    if name == ERROR_SYMBOL {
                        Ok(error_col)
                    } else {
                        index.get(name).copied().ok_or(())
                    }
                })
                .expect("identifiers resolved during build");
            let mut inputs = BTreeSet::new();
            compiled.for_each_var(&mut |&c| {
                inputs.insert(c);
            });
            v.uses_error = inputs.contains(&error_col);
            v.parents = inputs.iter().filter(|&&c| c >= g + j).map(|&c| c - g - j).collect();
            v.globals = inputs.iter().filter(|&&c| c < g).copied().collect();
            v.inputs = inputs.into_iter().collect();
            v.program = Program::compile(&compiled);
            v.compiled = compiled;
        }
        Scm {
            globals,
            vars,
            columns,
            index,
        }
    }

    pub fn n_variables(&self) -> usize {
        self.vars.len()
    }

    pub fn n_globals(&self) -> usize {
        self.globals.len()
    }

    /// Observed variables in topological order.
    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn variable(&self, k: usize) -> &Variable {
        &self.vars[k]
    }

    pub fn globals(&self) -> &[BackgroundSpec] {
        &self.globals
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn var_index_or_err(&self, name: &str) -> Result<usize, ScmError> {
        self.var_index(name)
            .ok_or_else(|| ScmError::UnknownVariable(name.into()))
    }

    /// All column names in table order.
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Number of background columns (globals plus dedicated errors).
    pub fn n_background(&self) -> usize {
        self.globals.len() + self.vars.len()
    }

    pub fn is_background_column(&self, col: usize) -> bool {
        col < self.n_background()
    }

    pub fn background_names(&self) -> &[String] {
        &self.columns[..self.n_background()]
    }

    pub fn observed_names(&self) -> &[String] {
        &self.columns[self.n_background()..]
    }

    pub fn error_column(&self, k: usize) -> usize {
        self.globals.len() + k
    }

    pub fn observed_column(&self, k: usize) -> usize {
        self.n_background() + k
    }

    /// Observed ancestors of `targets`, including the targets themselves.
    pub fn ancestors_inclusive(&self, targets: &[usize]) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = targets.iter().copied().collect();
        let mut stack: Vec<usize> = targets.to_vec();
        while let Some(k) = stack.pop() {
            for &p in &self.vars[k].parents {
                if out.insert(p) {
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Columns of `targets` and all their ancestors, background included.
    pub fn ancestral_columns(&self, targets: &[usize]) -> BTreeSet<usize> {
        let mut cols = BTreeSet::new();
        for k in self.ancestors_inclusive(targets) {
            cols.insert(self.observed_column(k));
            cols.insert(self.error_column(k));
            cols.extend(self.vars[k].globals.iter().copied());
        }
        cols
    }

    /// Restriction to the targets and their ancestors.
    ///
    /// Surviving variables keep their relative order; global background
    /// variables without a surviving child are dropped.
    pub fn ancestral_prune<S: AsRef<str>>(&self, targets: &[S]) -> Result<Scm, ScmError> {
        let idx = targets
            .iter()
            .map(|t| self.var_index_or_err(t.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let keep = self.ancestors_inclusive(&idx);
        let vars: Vec<Variable> = keep.iter().map(|&k| self.vars[k].clone()).collect();
        let used: BTreeSet<usize> = vars.iter().flat_map(|v| v.globals.iter().copied()).collect();
        let globals = used.iter().map(|&g| self.globals[g].clone()).collect();
        Ok(Scm::assemble(globals, vars))
    }

    /// The submodel `M_do(X=x)`. Intervened variables keep their (now unused)
    /// error columns.
    pub fn intervene(&self, iv: &Intervention) -> Result<Scm, ScmError> {
        let mut vars = self.vars.clone();
        for (name, value) in iv.iter() {
            let k = self.var_index_or_err(name)?;
            if !value.is_finite() {
                return Err(ScmError::NonFiniteIntervention {
                    variable: name.into(),
                    value,
                });
            }
            vars[k].expr = Expr::Num(value);
            vars[k].intervened = Some(value);
        }
        Ok(Scm::assemble(self.globals.clone(), vars))
    }

    fn background_dist(&self, col: usize) -> Dist {
        let g = self.globals.len();
        if col < g {
            self.globals[col].dist
        } else {
            self.vars[col - g].error
        }
    }

    /// Evaluates variable `k` on a row, with its dedicated error replaced by `u`.
    pub fn eval_with_error(&self, k: usize, row: &impl Fn(usize) -> f64, u: f64) -> Result<f64, EvalError> {
        let error_col = self.error_column(k);
        let load = |c: usize| if c == error_col { u } else { row(c) };
        self.eval_row(k, &load)
    }

    fn eval_row(&self, k: usize, row: &impl Fn(usize) -> f64) -> Result<f64, EvalError> {
        let v = &self.vars[k];
        match v.program.run(row) {
            Some(x) => Ok(x),
            None => expr::eval(&v.compiled, &|&c: &usize| Some(row(c))),
        }
    }

    /// Whether any input of variable `k` (error included) is missing in the row.
    pub fn has_missing_input(&self, k: usize, row: &impl Fn(usize) -> f64) -> bool {
        self.vars[k].inputs.iter().any(|&c| row(c).is_nan())
    }

    /// Forward simulation of `n` rows.
    ///
    /// Columns present in `d0` are copied unchanged; other background columns
    /// are drawn from their distributions using the stream named after the
    /// column, so a column's draws do not depend on the rest of the model.
    /// Observed columns are computed in topological order; a row with a
    /// missing input gets a missing value.
    pub fn simulate(&self, n: usize, d0: Option<&ParticleTable>, key: RngKey) -> Result<ParticleTable, ScmError> {
        let mut fixed: Vec<Option<usize>> = vec![None; self.columns.len()];
        if let Some(d0) = d0 {
            if d0.n_rows() != n {
                return Err(ScmError::RowMismatch {
                    expected: n,
                    found: d0.n_rows(),
                });
            }
            for (i, name) in d0.names().iter().enumerate() {
                let c = self
                    .column_index(name)
                    .ok_or_else(|| ScmError::UnknownColumn(name.clone()))?;
                fixed[c] = Some(i);
            }
            for (k, v) in self.vars.iter().enumerate() {
                let col = self.observed_column(k);
                if fixed[col].is_none() || v.intervened.is_some() {
                    continue;
                }
                if let Some(&p) = v.inputs.iter().find(|&&p| fixed[p].is_none()) {
                    return Err(ScmError::NotAncestral {
                        column: self.columns[col].clone(),
                        parent: self.columns[p].clone(),
                    });
                }
            }
        }

        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); self.columns.len()];
        for (c, name) in self.columns.iter().enumerate() {
            if let (Some(i), Some(d0)) = (fixed[c], d0) {
                cols[c] = d0.column_at(i).to_vec();
            } else if self.is_background_column(c) {
                cols[c] = draw_column(self.background_dist(c), key, stream_id(name), n);
            }
        }
        for (k, v) in self.vars.iter().enumerate() {
            let col = self.observed_column(k);
            if fixed[col].is_some() {
                continue;
            }
            let values = if let Some(x) = v.intervened {
                vec![x; n]
            } else {
                self.eval_column(k, &cols, n)?
            };
            cols[col] = values;
        }
        Ok(ParticleTable::with_rows(self.columns.clone(), cols, n))
    }

    /// Variable `k` on every row, in blocks; a block that cannot be
    /// evaluated in one pass is redone row by row.
    fn eval_column(&self, k: usize, cols: &[Vec<f64>], n: usize) -> Result<Vec<f64>, ScmError> {
        const BLOCK: usize = 512;
        let v = &self.vars[k];
        let straight = v.program.is_straight();
        let blocks = par::try_map_coarse(n.div_ceil(BLOCK), |j| {
            let (start, end) = (j * BLOCK, ((j + 1) * BLOCK).min(n));
            let mut out = vec![0.0; end - start];
            if straight && v.program.run_block(|c| &cols[c][start..end], &mut out, &mut Vec::new()) {
                return Ok(out);
            }
            for (i, slot) in (start..end).zip(&mut out) {
                let row = |c: usize| cols[c][i];
                *slot = if self.has_missing_input(k, &row) {
                    f64::NAN
                } else {
                    self.eval_row(k, &row).map_err(|source| ScmError::Eval {
                        variable: v.name.clone(),
                        row: i,
                        source,
                    })?
                };
            }
            Ok(out)
        })?;
        Ok(blocks.concat())
    }

    /// Re-evaluates every non-intervened observed value from its equation and
    /// reports the first mismatch. Rows with a missing value in the variable
    /// or any of its inputs are skipped.
    pub fn check_consistency(&self, t: &ParticleTable) -> Result<(), ScmError> {
        let map: Vec<Option<usize>> = self.columns.iter().map(|c| t.column_index(c)).collect();
        for (k, v) in self.vars.iter().enumerate() {
            let Some(tc) = map[self.observed_column(k)] else {
                continue;
            };
            if v.inputs.iter().any(|&c| map[c].is_none()) {
                continue;
            }
            for i in 0..t.n_rows() {
                let row = |c: usize| t.column_at(map[c].unwrap())[i];
                let found = t.column_at(tc)[i];
                if found.is_nan() || self.has_missing_input(k, &row) {
                    continue;
                }
                let expected = match v.intervened {
                    Some(x) => x,
                    None => self.eval_row(k, &row).map_err(|source| ScmError::Eval {
                        variable: v.name.clone(),
                        row: i,
                        source,
                    })?,
                };
                if expected.to_bits() != found.to_bits() {
                    return Err(ScmError::Inconsistent {
                        variable: v.name.clone(),
                        row: i,
                        expected,
                        found,
                    });
                }
            }
        }
        Ok(())
    }
}

const DRAW_CHUNK: usize = 4096;

fn draw_column(dist: Dist, key: RngKey, stream: u64, n: usize) -> Vec<f64> {
    let chunks = n.div_ceil(DRAW_CHUNK);
    let parts = par::map_rows(chunks, |c| {
        let start = c * DRAW_CHUNK;
        let end = (start + DRAW_CHUNK).min(n);
        let mut s = key.stream(stream);
        s.seek(start as u64);
        (start..end)
            .map(|_| dist.quantile(s.next_open01()))
            .collect::<Vec<f64>>()
    });
    parts.concat()
}

/// Kahn's algorithm, smallest declaration index first. On failure returns
/// one cycle as a list of indices.
fn topological_order(parents: &[Vec<usize>]) -> Result<Vec<usize>, Vec<usize>> {
    let n = parents.len();
    let mut children = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for (k, ps) in parents.iter().enumerate() {
        indegree[k] = ps.len();
        for &p in ps {
            children[p].push(k);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&k| indegree[k] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(k)) = ready.pop() {
        order.push(k);
        for &c in &children[k] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Every unplaced node has an unplaced parent; walk parents until one repeats.
    let placed: BTreeSet<usize> = order.into_iter().collect();
    let mut at = (0..n).find(|k| !placed.contains(k)).unwrap();
    let mut path = Vec::new();
    let mut pos = BTreeMap::new();
    loop {
        if let Some(&start) = pos.get(&at) {
            let mut cycle: Vec<usize> = path[start..].to_vec();
            cycle.reverse();
            cycle.push(cycle[0]);
            return Err(cycle);
        }
        pos.insert(at, path.len());
        path.push(at);
        at = *parents[at].iter().find(|p| !placed.contains(p)).unwrap();
    }
}

//! TOML file formats for models, queries, fairness cases and benchmark cases.
//!
//! Every file carries `format_version = 1`. Unknown keys are rejected so that
//! typos surface as errors instead of silently ignored settings. Relative
//! model paths inside query and case files are resolved against the
//! directory of the file that mentions them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use cfsim_core::bench::BenchCase;
use cfsim_core::fairness::{BatchSpec, FairnessCase, FairnessMode};
use cfsim_core::{
    BackgroundSpec, ConditionSet, CounterfactualQuery, Dist, ModelSpec, Monotonicity, Scm, VariableKind, VariableSpec,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("`{path}`: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("`{path}`: unsupported format_version {found} (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("`{path}`: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn invalid(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.into(),
        source,
    })?;
    parse_toml(&text, path)
}

fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, FormatError> {
    #[derive(Deserialize)]
    struct Version {
        format_version: Option<u32>,
    }
    let syntax = |e: toml::de::Error| FormatError::Syntax {
        path: path.into(),
        message: e.to_string().trim_end().to_string(),
    };
    let v: Version = toml::from_str::<toml::Table>(text)
        .map_err(syntax)
        .and_then(|t| t.try_into().map_err(syntax))?;
    match v.format_version {
        Some(FORMAT_VERSION) => {}
        Some(found) => {
            return Err(FormatError::Version {
                path: path.into(),
                found,
            })
        }
        None => return Err(invalid(path, "missing `format_version`")),
    }
    toml::from_str(text).map_err(syntax)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.into()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

// ---- models ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(default)]
    pub options: ModelOptions,
    #[serde(default)]
    pub background: Vec<BackgroundEntry>,
    pub variables: Vec<VariableEntry>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundEntry {
    pub name: String,
    /// `normal(mean, sd)` or `uniform(low, high)`.
    pub dist: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableEntry {
    pub name: String,
    #[serde(default)]
    pub kind: Kind,
    pub error: String,
    pub expr: String,
    pub monotonic: Option<Monotonic>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    #[default]
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Monotonic {
    Additive,
    MonotonicGeneral,
    None,
}

/// A built model and the default seed from its `options` table.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub scm: Scm,
    pub seed: Option<u64>,
    pub path: PathBuf,
}

impl ModelFile {
    pub fn to_spec(&self, path: &Path) -> Result<ModelSpec, FormatError> {
        let mut spec = ModelSpec::default();
        for b in &self.background {
            let dist: Dist = b
                .dist
                .parse()
                .map_err(|e| invalid(path, format!("background `{}`: {e}", b.name)))?;
            spec.background.push(BackgroundSpec::new(&b.name, dist));
        }
        for v in &self.variables {
            let error: Dist = v
                .error
                .parse()
                .map_err(|e| invalid(path, format!("variable `{}`: {e}", v.name)))?;
            let kind = match v.kind {
                Kind::Continuous => VariableKind::Continuous,
                Kind::Discrete => VariableKind::Discrete,
            };
            let mut var = VariableSpec::new(&v.name, kind, error, &v.expr)
                .map_err(|e| invalid(path, format!("variable `{}`: {e}", v.name)))?;
            if let Some(m) = v.monotonic {
                var = var.with_monotonicity(match m {
                    Monotonic::Additive => Monotonicity::Additive,
                    Monotonic::MonotonicGeneral => Monotonicity::MonotonicGeneral,
                    Monotonic::None => Monotonicity::None,
                });
            }
            spec.variables.push(var);
        }
        Ok(spec)
    }
}

pub fn parse_model(text: &str, path: &Path) -> Result<LoadedModel, FormatError> {
    let file: ModelFile = parse_toml(text, path)?;
    let scm = Scm::build(&file.to_spec(path)?).map_err(|e| invalid(path, e.to_string()))?;
    Ok(LoadedModel {
        scm,
        seed: file.options.seed,
        path: path.into(),
    })
}

pub fn load_model(path: &Path) -> Result<LoadedModel, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.into(),
        source,
    })?;
    parse_model(&text, path)
}

// ---- counterfactual queries ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryFile {
    pub format_version: u32,
    pub model: Option<PathBuf>,
    pub targets: Vec<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub given: BTreeMap<String, f64>,
    #[serde(default, rename = "do")]
    pub intervention: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct LoadedQuery {
    pub file: QueryFile,
    /// The model path resolved against the query file's directory.
    pub model: Option<PathBuf>,
}

impl LoadedQuery {
    pub fn to_query(&self, n: usize, seed: u64) -> CounterfactualQuery {
        let targets: Vec<&str> = self.file.targets.iter().map(String::as_str).collect();
        let mut q = CounterfactualQuery::new(&targets, n, seed);
        for (k, &v) in &self.file.given {
            q = q.given(k, v);
        }
        for (k, &v) in &self.file.intervention {
            q = q.intervene(k, v);
        }
        q
    }
}

pub fn load_query(path: &Path) -> Result<LoadedQuery, FormatError> {
    let file: QueryFile = read_toml(path)?;
    if file.targets.is_empty() {
        return Err(invalid(path, "`targets` must name at least one variable"));
    }
    let model = file.model.as_deref().map(|p| resolve(path, p));
    Ok(LoadedQuery { file, model })
}

// ---- fairness cases ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessFile {
    pub format_version: u32,
    pub model: Option<PathBuf>,
    pub outcome: String,
    #[serde(default)]
    pub mode: Mode,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub sensitive: Vec<SensitiveEntry>,
    pub predictor: Option<PredictorEntry>,
    /// Evidence on `Pa(outcome) \ S` for a single case.
    #[serde(default)]
    pub w: BTreeMap<String, f64>,
    /// Other evidence for a single case.
    #[serde(default)]
    pub c: BTreeMap<String, f64>,
    pub batch: Option<BatchEntry>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    FixParents,
    ConditionParents,
}

impl From<Mode> for FairnessMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::FixParents => FairnessMode::FixParents,
            Mode::ConditionParents => FairnessMode::ConditionParents,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveEntry {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PredictorEntry {
    /// An expression over observed variables.
    pub expr: Option<String>,
    /// An external program: a shell command line or an argument vector.
    pub command: Option<Command>,
    /// Columns sent to an external program; all observed variables if absent.
    pub inputs: Option<Vec<String>>,
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Command {
    Shell(String),
    Argv(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchEntry {
    pub cases: usize,
    pub n_per_case: Option<usize>,
    pub seed: Option<u64>,
}

/// What a fairness file asks for, with `n` and `seed` settled.
#[derive(Debug, Clone)]
pub enum FairnessJob {
    Single(FairnessCase),
    Batch(BatchSpec),
}

#[derive(Debug, Clone)]
pub struct LoadedFairness {
    pub file: FairnessFile,
    pub model: Option<PathBuf>,
}

pub const DEFAULT_PREDICTOR_TIMEOUT: Duration = Duration::from_secs(60);

impl LoadedFairness {
    pub fn job(&self, n: usize, seed: u64) -> FairnessJob {
        let f = &self.file;
        let sensitive: Vec<(String, Vec<f64>)> =
            f.sensitive.iter().map(|s| (s.name.clone(), s.values.clone())).collect();
        match &f.batch {
            Some(b) => FairnessJob::Batch(BatchSpec {
                outcome: f.outcome.clone(),
                sensitive,
                cases: b.cases,
                n_per_case: b.n_per_case.unwrap_or(n),
                seed: b.seed.unwrap_or(seed),
            }),
            None => {
                let set = |m: &BTreeMap<String, f64>| m.iter().fold(ConditionSet::new(), |cs, (k, &v)| cs.with(k, v));
                FairnessJob::Single(FairnessCase {
                    outcome: f.outcome.clone(),
                    sensitive,
                    w_conditions: set(&f.w),
                    c_conditions: set(&f.c),
                    n,
                    seed,
                })
            }
        }
    }
}

pub fn load_fairness(path: &Path) -> Result<LoadedFairness, FormatError> {
    let file: FairnessFile = read_toml(path)?;
    if file.batch.is_some() && !(file.w.is_empty() && file.c.is_empty()) {
        return Err(invalid(path, "a batch case file cannot also give `w` or `c` evidence"));
    }
    if let Some(p) = &file.predictor {
        validate_predictor(p).map_err(|m| invalid(path, m))?;
    }
    let model = file.model.as_deref().map(|p| resolve(path, p));
    Ok(LoadedFairness { file, model })
}

pub fn validate_predictor(p: &PredictorEntry) -> Result<(), String> {
    match (&p.expr, &p.command) {
        (Some(_), Some(_)) => return Err("predictor needs exactly one of `expr` and `command`".into()),
        (None, None) => return Err("predictor needs `expr` or `command`".into()),
        (Some(_), None) if p.inputs.is_some() || p.timeout_secs.is_some() => {
            return Err("`inputs` and `timeout_secs` apply to command predictors only".into())
        }
        _ => {}
    }
    if let Some(t) = p.timeout_secs {
        if !(t > 0.0 && t.is_finite()) {
            return Err("`timeout_secs` must be positive".into());
        }
    }
    if let Some(Command::Argv(v)) = &p.command {
        if v.is_empty() {
            return Err("predictor command is empty".into());
        }
    }
    Ok(())
}

// ---- benchmark cases ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    pub format_version: u32,
    #[serde(rename = "case")]
    pub cases: Vec<CaseEntry>,
}

/// A benchmark case: either fully specified or a preset with overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub name: String,
    pub preset: Option<String>,
    pub variables: Option<usize>,
    pub conditions: Option<usize>,
    pub degree: Option<f64>,
    pub globals_per_variable: Option<f64>,
    pub coef_min: Option<f64>,
    pub coef_max: Option<f64>,
    pub rounds: Option<usize>,
    pub n: Option<Vec<usize>>,
    pub seed: Option<u64>,
}

impl CaseEntry {
    pub fn to_case(&self) -> Result<BenchCase, String> {
        let base = match &self.preset {
            Some(p) => BenchCase::preset(p).ok_or_else(|| format!("unknown preset `{p}` (expected A to E)"))?,
            None => {
                let need = |field: &str| format!("case `{}` needs `{field}` or a `preset`", self.name);
                BenchCase {
                    name: self.name.clone(),
                    variables: self.variables.ok_or_else(|| need("variables"))?,
                    conditions: self.conditions.ok_or_else(|| need("conditions"))?,
                    degree: self.degree.ok_or_else(|| need("degree"))?,
                    globals_per_variable: self.globals_per_variable.unwrap_or(0.0),
                    ..BenchCase::preset("A").expect("preset A exists")
                }
            }
        };
        let case = BenchCase {
            name: self.name.clone(),
            variables: self.variables.unwrap_or(base.variables),
            conditions: self.conditions.unwrap_or(base.conditions),
            degree: self.degree.unwrap_or(base.degree),
            globals_per_variable: self.globals_per_variable.unwrap_or(base.globals_per_variable),
            coef_min: self.coef_min.unwrap_or(base.coef_min),
            coef_max: self.coef_max.unwrap_or(base.coef_max),
            rounds: self.rounds.unwrap_or(base.rounds),
            n_grid: self.n.clone().unwrap_or(base.n_grid),
            seed: self.seed.unwrap_or(base.seed),
        };
        case.validate().map_err(|e| e.to_string())?;
        Ok(case)
    }
}

pub fn load_bench(path: &Path) -> Result<Vec<BenchCase>, FormatError> {
    let file: BenchFile = read_toml(path)?;
    if file.cases.is_empty() {
        return Err(invalid(path, "no `[[case]]` entries"));
    }
    file.cases
        .iter()
        .map(|c| c.to_case().map_err(|m| invalid(path, m)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"
format_version = 1
[options]
seed = 7
[[variables]]
name = "z"
error = "normal(0, 1)"
expr = "u"
[[variables]]
name = "x"
error = "normal(0, 1)"
expr = "z + u"
[[variables]]
name = "y"
error = "normal(0, 1)"
expr = "x + z + u"
monotonic = "additive"
"#;

    #[test]
    fn model_round_trip() {
        let m = parse_model(CHAIN, Path::new("chain.toml")).unwrap();
        assert_eq!(m.seed, Some(7));
        assert_eq!(m.scm.observed_names(), ["z", "x", "y"]);
    }

    #[test]
    fn version_and_unknown_keys_are_checked() {
        let p = Path::new("m.toml");
        let v2 = CHAIN.replace("format_version = 1", "format_version = 2");
        assert!(matches!(
            parse_model(&v2, p),
            Err(FormatError::Version { found: 2, .. })
        ));
        let none = CHAIN.replace("format_version = 1", "");
        assert!(matches!(parse_model(&none, p), Err(FormatError::Invalid { .. })));
        let typo = CHAIN.replace("monotonic =", "monotone =");
        assert!(matches!(parse_model(&typo, p), Err(FormatError::Syntax { .. })));
        let bad = CHAIN.replace("\"x + z + u\"", "\"x + \"");
        assert!(matches!(parse_model(&bad, p), Err(FormatError::Invalid { .. })));
    }

    #[test]
    fn case_entry_overrides_preset() {
        let e = CaseEntry {
            name: "B0".into(),
            preset: Some("B".into()),
            degree: Some(0.0),
            rounds: Some(3),
            ..Default::default()
        };
        let c = e.to_case().unwrap();
        assert_eq!((c.variables, c.conditions, c.degree, c.rounds), (10, 4, 0.0, 3));
        let missing = CaseEntry {
            name: "X".into(),
            ..Default::default()
        };
        assert!(missing.to_case().unwrap_err().contains("variables"));
    }

    #[test]
    fn predictor_entries() {
        let ok = PredictorEntry {
            expr: Some("x".into()),
            command: None,
            inputs: None,
            timeout_secs: None,
        };
        assert!(validate_predictor(&ok).is_ok());
        let both = PredictorEntry {
            command: Some(Command::Shell("cat".into())),
            ..ok.clone()
        };
        assert!(validate_predictor(&both).is_err());
    }
}

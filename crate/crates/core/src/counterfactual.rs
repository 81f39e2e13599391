//! Counterfactual queries `p(W_do(X=x) | C = c)`.
//!
//! The evidence updates the background distribution (conditioning on the
//! factual model), the intervention replaces the intervened equations by
//! constants, and the submodel is then simulated from the updated background
//! columns. By default the model is first restricted to the ancestors of the
//! targets, the intervened variables and the conditioned variables.

use alloc::string::String;
use alloc::vec::Vec;

use crate::conditioning::{simulate_multiple_conditions, ConditionError, ConditionSet, SamplerConfig};
use crate::rng::RngKey;
use crate::scm::{Intervention, ParticleTable, Scm, ScmError};
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualQuery {
    pub conditions: ConditionSet,
    pub intervention: Intervention,
    pub targets: Vec<String>,
    pub n: usize,
    pub seed: u64,
}

impl CounterfactualQuery {
    pub fn new(targets: &[&str], n: usize, seed: u64) -> Self {
        CounterfactualQuery {
            conditions: ConditionSet::new(),
            intervention: Intervention::new(),
            targets: targets.iter().map(|&t| t.into()).collect(),
            n,
            seed,
        }
    }

    pub fn given(mut self, variable: &str, value: f64) -> Self {
        self.conditions = self.conditions.with(variable, value);
        self
    }

    pub fn intervene(mut self, variable: &str, value: f64) -> Self {
        self.intervention.insert(variable, value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("target `{0}` is also intervened on")]
    TargetIntervened(String),
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

impl From<ScmError> for QueryError {
    fn from(e: ScmError) -> Self {
        QueryError::Condition(e.into())
    }
}

/// Runs a counterfactual query.
///
/// The output holds the background columns of the conditioned factual
/// sample, bit for bit, and the observed columns of the submodel computed
/// from them. Intervened columns are constant.
pub fn simulate_counterfactual(
    m: &Scm,
    q: &CounterfactualQuery,
    cfg: &SamplerConfig,
) -> Result<ParticleTable, QueryError> {
    for t in &q.targets {
        m.var_index_or_err(t)?;
        if q.intervention.contains(t) {
            return Err(QueryError::TargetIntervened(t.clone()));
        }
    }
    let pruned;
    let model = if cfg.prune {
        let mut keep: Vec<&str> = q.targets.iter().map(String::as_str).collect();
        keep.extend(q.intervention.iter().map(|(k, _)| k));
        keep.extend(q.conditions.variables());
        pruned = m.ancestral_prune(&keep)?;
        &pruned
    } else {
        m
    };
    let key = RngKey::new(q.seed);
    let factual = simulate_multiple_conditions(model, q.n, &q.conditions, key.derive(1), cfg)?;
    let sub = model.intervene(&q.intervention)?;
    let background = factual.select_columns(model.background_names());
    let mut out = sub.simulate(q.n, Some(&background), key.derive(2))?;
    out.set_diagnostics(factual.diagnostics().to_vec());
    Ok(out)
}

pub const SUMMARY_PROBS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    /// Quantiles at [`SUMMARY_PROBS`].
    pub quantiles: [f64; 7],
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub unique_fraction: f64,
    pub ess: f64,
    pub columns: Vec<ColumnSummary>,
}

/// Per-column mean, variance and quantiles for the targets, plus the
/// fraction of distinct rows and the effective sample size of the table.
///
/// Missing values are skipped. Unknown target names are ignored. Weighted
/// tables use weighted moments and weighted quantiles.
pub fn summarize<S: AsRef<str>>(t: &ParticleTable, targets: &[S]) -> Summary {
    let columns = targets
        .iter()
        .filter_map(|name| {
            let col = t.column(name.as_ref())?;
            Some(summarize_column(name.as_ref(), col, t.weights()))
        })
        .collect();
    Summary {
        n: t.n_rows(),
        unique_fraction: t.unique_fraction(&[]),
        ess: t.ess(),
        columns,
    }
}

fn summarize_column(name: &str, col: &[f64], weights: Option<&[f64]>) -> ColumnSummary {
    let mut pairs: Vec<(f64, f64)> = col
        .iter()
        .enumerate()
        .filter(|(_, x)| !x.is_nan())
        .map(|(i, &x)| (x, weights.map_or(1.0, |w| w[i])))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let missing = col.iter().filter(|x| x.is_nan()).count();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mean, variance, quantiles) = match weights {
        None => {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let q = SUMMARY_PROBS.map(|p| stats::quantile_sorted(&xs, p));
            (stats::mean(&xs), stats::variance(&xs), q)
        }
        Some(_) => weighted_moments(&pairs),
    };
    ColumnSummary {
        name: name.into(),
        mean,
        variance,
        quantiles,
        missing,
    }
}

fn weighted_moments(sorted: &[(f64, f64)]) -> (f64, f64, [f64; 7]) {
    let total: f64 = sorted.iter().map(|p| p.1).sum();
    if sorted.is_empty() || total <= 0.0 {
        return (f64::NAN, 0.0, [f64::NAN; 7]);
    }
    let mean = sorted.iter().map(|(x, w)| x * w).sum::<f64>() / total;
    let variance = sorted.iter().map(|(x, w)| w * (x - mean) * (x - mean)).sum::<f64>() / total;
    let quantiles = SUMMARY_PROBS.map(|p| {
        let target = p * total;
        let mut acc = 0.0;
        for &(x, w) in sorted {
            acc += w;
            if acc >= target {
                return x;
            }
        }
        sorted[sorted.len() - 1].0
    });
    (mean, variance, quantiles)
}

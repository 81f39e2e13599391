//! Random linear-Gaussian benchmark for the conditional sampler.
//!
//! Each round draws a random model, conditions on values drawn from the
//! model's own joint distribution, and compares the sample of one free
//! variable with its exact conditional law.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::conditioning::{simulate_multiple_conditions, ConditionError, ConditionSet, SamplerConfig};
use crate::gaussian::{GaussianError, GaussianScm};
use crate::par;
use crate::rng::{RngKey, UniformStream};
use crate::special::pnorm;
use crate::stats;

pub use crate::stats::ks_statistic;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCase {
    pub name: String,
    pub variables: usize,
    pub conditions: usize,
    /// Expected number of neighbours of a variable in the random DAG.
    pub degree: f64,
    /// Expected number of global background variables per observed variable.
    pub globals_per_variable: f64,
    /// Coefficients are uniform on `[-max, -min] ∪ [min, max]`.
    pub coef_min: f64,
    pub coef_max: f64,
    pub rounds: usize,
    pub n_grid: Vec<usize>,
    pub seed: u64,
}

impl BenchCase {
    /// Presets `A` to `E`.
    pub fn preset(name: &str) -> Option<BenchCase> {
        let (variables, conditions, degree, globals) = match name {
            "A" => (5, 1, 3.0, 0.0),
            "B" => (10, 4, 5.0, 1.0),
            "C" => (10, 9, 5.0, 1.0),
            "D" => (50, 2, 5.0, 1.0),
            "E" => (50, 9, 7.0, 1.0),
            _ => return None,
        };
        Some(BenchCase {
            name: name.into(),
            variables,
            conditions,
            degree,
            globals_per_variable: globals,
            coef_min: 0.1,
            coef_max: 1.0,
            rounds: 100,
            n_grid: alloc::vec![1000, 10_000, 100_000],
            seed: 2024,
        })
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidCase(m.into()));
        if self.variables == 0 {
            return bad("at least one variable is required");
        }
        if self.conditions > self.variables {
            return bad("more conditions than variables");
        }
        if !(self.degree >= 0.0) || (self.variables > 1 && self.degree > (self.variables - 1) as f64) {
            return bad("degree must lie in [0, variables - 1]");
        }
        if !(self.globals_per_variable >= 0.0) || !self.globals_per_variable.is_finite() {
            return bad("globals per variable must be nonnegative");
        }
        if self.globals_per_variable > 0.0 && self.variables < 2 {
            return bad("global background variables need at least two variables");
        }
        if !(self.coef_min > 0.0 && self.coef_min <= self.coef_max && self.coef_max.is_finite()) {
            return bad("coefficient bounds must satisfy 0 < min <= max");
        }
        if self.rounds == 0 {
            return bad("at least one round is required");
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("sample sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark case: {0}")]
    InvalidCase(String),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

fn coefficient(s: &mut UniformStream, case: &BenchCase) -> f64 {
    let mag = case.coef_min + (case.coef_max - case.coef_min) * s.next_open01();
    if s.below(2) == 0 {
        -mag
    } else {
        mag
    }
}

/// A random model: edges `k -> r` (k < r) with probability
/// `degree / (variables - 1)`, `round(globals_per_variable * variables)`
/// global background variables each loading on a uniformly chosen pair, and
/// a unit dedicated error for every variable.
pub fn random_gaussian_scm(case: &BenchCase, key: RngKey) -> GaussianScm {
    let j = case.variables;
    let globals = libm::round(case.globals_per_variable * j as f64) as usize;
    let p = if j > 1 { case.degree / (j - 1) as f64 } else { 0.0 };
    let mut s = key.stream(0);
    let b0 = DVector::from_fn(j, |_, _| coefficient(&mut s, case));
    let mut b1 = DMatrix::zeros(j, j);
    for r in 0..j {
        for k in 0..r {
            if s.next_open01() < p {
                b1[(r, k)] = coefficient(&mut s, case);
            }
        }
    }
    let mut b2 = DMatrix::zeros(j, j + globals);
    b2.view_mut((0, 0), (j, j)).fill_with_identity();
    for g in 0..globals {
        let a = s.below(j as u64) as usize;
        let mut b = s.below(j as u64 - 1) as usize;
        if b >= a {
            b += 1;
        }
        b2[(a, j + g)] = coefficient(&mut s, case);
        b2[(b, j + g)] = coefficient(&mut s, case);
    }
    let names = (1..=j).map(|i| alloc::format!("v{i}")).collect();
    GaussianScm::new(names, b0, b1, b2).expect("generated model is well formed")
}

/// Measures from one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub unique_fraction: f64,
    pub z_mean: f64,
    pub z_sd: f64,
    pub ks: f64,
    /// Sample minus exact conditional correlation of a pair of free
    /// variables; `None` with fewer than two free variables.
    pub cor_diff: Option<f64>,
}

/// One round at sample size `n`. The model, the conditioning design and the
/// evidence depend only on `(case.seed, round)`. Returns `Ok(None)` when the
/// evidence was infeasible for the sampler.
pub fn run_round(
    case: &BenchCase,
    n: usize,
    round: usize,
    cfg: &SamplerConfig,
) -> Result<Option<RoundResult>, BenchError> {
    let key = RngKey::new(case.seed).derive(round as u64);
    let g = random_gaussian_scm(case, key.derive_name("model"));
    let m = g.to_scm()?;
    let j = case.variables;

    let mut order: Vec<usize> = (0..j).collect();
    let mut s = key.derive_name("design").stream(0);
    for i in (1..j).rev() {
        let k = s.below(i as u64 + 1) as usize;
        order.swap(i, k);
    }
    let (conditioned, free) = order.split_at(case.conditions);
    let names = g.names();

    let evidence = m
        .simulate(1, None, key.derive_name("evidence"))
        .map_err(ConditionError::from)?;
    let fixed: Vec<(&str, f64)> = conditioned
        .iter()
        .map(|&k| {
            let name = names[k].as_str();
            (name, evidence.column(name).unwrap()[0])
        })
        .collect();
    let cs: ConditionSet = fixed.iter().map(|&(v, x)| crate::Condition::new(v, x)).collect();

    let sample = match simulate_multiple_conditions(&m, n, &cs, key.derive_name("sampler").derive(n as u64), cfg) {
        Ok(t) => t,
        Err(ConditionError::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let oracle = g.condition(&fixed)?;
    let background: Vec<usize> = (0..m.n_background()).collect();
    let unique_fraction = sample.unique_fraction(&background);

    let Some(&eval) = free.first() else {
        return Ok(Some(RoundResult {
            unique_fraction,
            z_mean: f64::NAN,
            z_sd: f64::NAN,
            ks: f64::NAN,
            cor_diff: None,
        }));
    };
    let (mu, sd) = oracle.component(&names[eval]).unwrap();
    let z: Vec<f64> = sample
        .column(&names[eval])
        .unwrap()
        .iter()
        .map(|x| (x - mu) / sd)
        .collect();
    let cor_diff = (free.len() >= 2).then(|| {
        let (a, b) = (&names[free[0]], &names[free[1]]);
        stats::correlation(sample.column(a).unwrap(), sample.column(b).unwrap()) - oracle.correlation(a, b).unwrap()
    });
    Ok(Some(RoundResult {
        unique_fraction,
        z_mean: stats::mean(&z),
        z_sd: stats::sd(&z),
        ks: ks_statistic(&z, pnorm).unwrap_or(f64::NAN),
        cor_diff,
    }))
}

/// One line of the benchmark report: a case at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub case: String,
    pub n: usize,
    pub rounds: usize,
    pub infeasible: usize,
    pub unique_percent: f64,
    pub z_mean: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub sz_mean: f64,
    pub sz_min: f64,
    pub sz_max: f64,
    pub ks_mean: f64,
    pub cor_diff_mean: Option<f64>,
}

pub fn aggregate(case: &str, n: usize, results: &[Option<RoundResult>]) -> BenchRow {
    let ok: Vec<&RoundResult> = results.iter().flatten().collect();
    let col = |f: &dyn Fn(&RoundResult) -> f64| ok.iter().map(|r| f(r)).filter(|x| !x.is_nan()).collect::<Vec<f64>>();
    let min = |xs: &[f64]| xs.iter().copied().reduce(f64::min).unwrap_or(f64::NAN);
    let max = |xs: &[f64]| xs.iter().copied().reduce(f64::max).unwrap_or(f64::NAN);
    let z = col(&|r| r.z_mean);
    let sz = col(&|r| r.z_sd);
    let cors: Vec<f64> = ok.iter().filter_map(|r| r.cor_diff).collect();
    BenchRow {
        case: case.into(),
        n,
        rounds: ok.len(),
        infeasible: results.len() - ok.len(),
        unique_percent: 100.0 * stats::mean(&col(&|r| r.unique_fraction)),
        z_mean: stats::mean(&z),
        z_min: min(&z),
        z_max: max(&z),
        sz_mean: stats::mean(&sz),
        sz_min: min(&sz),
        sz_max: max(&sz),
        ks_mean: stats::mean(&col(&|r| r.ks)),
        cor_diff_mean: (!cors.is_empty()).then(|| stats::mean(&cors)),
    }
}

/// All rounds at one sample size.
pub fn run_rounds(case: &BenchCase, n: usize, cfg: &SamplerConfig) -> Result<BenchRow, BenchError> {
    case.validate()?;
    let results = par::try_map_coarse(case.rounds, |r| run_round(case, n, r, cfg))?;
    Ok(aggregate(&case.name, n, &results))
}

/// Every sample size of the case's grid.
pub fn run_case(case: &BenchCase, cfg: &SamplerConfig) -> Result<Vec<BenchRow>, BenchError> {
    case.validate()?;
    case.n_grid.iter().map(|&n| run_rounds(case, n, cfg)).collect()
}

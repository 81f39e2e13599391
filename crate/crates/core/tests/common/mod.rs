#![allow(dead_code)]

use cfsim_core::scm::{ModelSpec, Scm, VariableSpec};
use cfsim_core::Dist;

/// Z = u, X = z + u, Y = x + z + u with standard normal errors.
pub fn three_node() -> Scm {
    Scm::build(&ModelSpec {
        background: vec![],
        variables: vec![
            VariableSpec::continuous("z", Dist::STANDARD_NORMAL, "u").unwrap(),
            VariableSpec::continuous("x", Dist::STANDARD_NORMAL, "z + u").unwrap(),
            VariableSpec::continuous("y", Dist::STANDARD_NORMAL, "x + z + u").unwrap(),
        ],
    })
    .unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

/// Two-sample Kolmogorov-Smirnov statistic, written independently of the crate.
pub fn ks2(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = x.iter().chain(&y).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let ecdf = |s: &[f64], t: f64| s.partition_point(|&v| v <= t) as f64 / s.len() as f64;
    all.iter()
        .map(|&t| (ecdf(&x, t) - ecdf(&y, t)).abs())
        .fold(0.0, f64::max)
}

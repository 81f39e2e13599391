//! Distributions of background variables and dedicated error terms.

use core::fmt;
use core::str::FromStr;

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::special::{dnorm, pnorm, qnorm};

/// A univariate continuous distribution with an everywhere-evaluable density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid distribution `{text}`: {reason}")]
pub struct DistError {
    pub text: String,
    pub reason: String,
}

impl Dist {
    pub const STANDARD_NORMAL: Dist = Dist::Normal { mean: 0.0, sd: 1.0 };
    pub const STANDARD_UNIFORM: Dist = Dist::Uniform { low: 0.0, high: 1.0 };

    pub fn normal(mean: f64, sd: f64) -> Result<Self, DistError> {
        let d = Dist::Normal { mean, sd };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(low: f64, high: f64) -> Result<Self, DistError> {
        let d = Dist::Uniform { low, high };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<(), DistError> {
        let bad = |reason: &str| DistError {
            text: self.to_string(),
            reason: reason.into(),
        };
        match *self {
            Dist::Normal { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || sd <= 0.0 {
                    return Err(bad("normal needs a finite mean and a positive finite sd"));
                }
            }
            Dist::Uniform { low, high } => {
                if !low.is_finite() || !high.is_finite() || high <= low {
                    return Err(bad("uniform needs finite bounds with low < high"));
                }
            }
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Dist::Normal { mean, sd } => dnorm((x - mean) / sd) / sd,
            Dist::Uniform { low, high } => {
                if (low..=high).contains(&x) {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Dist::Normal { mean, sd } => pnorm((x - mean) / sd),
            Dist::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Dist::Normal { mean, sd } => mean + sd * qnorm(p),
            Dist::Uniform { low, high } => low + (high - low) * p,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Normal { mean, .. } => mean,
            Dist::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Dist::Normal { sd, .. } => sd * sd,
            Dist::Uniform { low, high } => (high - low) * (high - low) / 12.0,
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Normal { mean, sd } => write!(f, "normal({mean}, {sd})"),
            Dist::Uniform { low, high } => write!(f, "uniform({low}, {high})"),
        }
    }
}

/// Parses `normal(mean, sd)` or `uniform(low, high)`.
impl FromStr for Dist {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| DistError {
            text: s.into(),
            reason: reason.into(),
        };
        let t = s.trim();
        let open = t.find('(').ok_or_else(|| err("expected `name(a, b)`"))?;
        if !t.ends_with(')') {
            return Err(err("missing closing parenthesis"));
        }
        let name = t[..open].trim();
        let args: Vec<f64> = t[open + 1..t.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err("arguments must be numbers"))?;
        if args.len() != 2 {
            return Err(err("expected exactly two parameters"));
        }
        match name {
            "normal" => Dist::normal(args[0], args[1]),
            "uniform" => Dist::uniform(args[0], args[1]),
            _ => Err(err("unknown distribution (expected normal or uniform)")),
        }
    }
}

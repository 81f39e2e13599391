use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use core::fmt;

use super::{BinOp, Builtin, CmpOp, Expr};
use crate::special::{logistic, pnorm, qnorm};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
}

fn domain(op: &'static str, detail: impl Into<String>) -> EvalError {
    EvalError::Domain {
        op,
        detail: detail.into(),
    }
}

/// Evaluates `e` with variable values supplied by `lookup`.
///
/// Returns an error instead of NaN: any operation whose IEEE result would be
/// NaN, plus division by zero and `log` of a non-positive argument, is a
/// domain error.
pub fn eval<V: fmt::Display>(e: &Expr<V>, lookup: &impl Fn(&V) -> Option<f64>) -> Result<f64, EvalError> {
    let r = match e {
        Expr::Num(x) => *x,
        Expr::Var(v) => lookup(v).ok_or_else(|| EvalError::Unbound(v.to_string()))?,
        Expr::Neg(a) => -eval(a, lookup)?,
        Expr::Binary(op, a, b) => {
            let x = eval(a, lookup)?;
            let y = eval(b, lookup)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        return Err(domain("/", "division by zero"));
                    }
                    x / y
                }
                BinOp::Pow => libm::pow(x, y),
            }
        }
        Expr::Compare(op, a, b) => {
            let x = eval(a, lookup)?;
            let y = eval(b, lookup)?;
            let t = match op {
                CmpOp::Lt => x < y,
                CmpOp::Le => x <= y,
                CmpOp::Eq => x == y,
                CmpOp::Ne => x != y,
                CmpOp::Ge => x >= y,
                CmpOp::Gt => x > y,
            };
            f64::from(u8::from(t))
        }
        Expr::If(c, a, b) => {
            if eval(c, lookup)? != 0.0 {
                eval(a, lookup)?
            } else {
                eval(b, lookup)?
            }
        }
        Expr::Call(fun, args) => {
            let mut vals = [0.0; 8];
            let mut heap = alloc::vec::Vec::new();
            let xs: &[f64] = if args.len() <= vals.len() {
                for (slot, a) in vals.iter_mut().zip(args) {
                    *slot = eval(a, lookup)?;
                }
                &vals[..args.len()]
            } else {
                for a in args {
                    heap.push(eval(a, lookup)?);
                }
                &heap
            };
            call(*fun, xs)?
        }
    };
    if r.is_nan() {
        return Err(domain("evaluation", alloc::format!("`{e}` is not a number")));
    }
    Ok(r)
}

fn unit_interval(op: &'static str, u: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(domain(op, alloc::format!("driving uniform {u} outside [0, 1]")))
    }
}

pub(super) fn call(fun: Builtin, xs: &[f64]) -> Result<f64, EvalError> {
    let x = xs[0];
    Ok(match fun {
        Builtin::Exp => libm::exp(x),
        Builtin::Log => {
            if x <= 0.0 {
                return Err(domain("log", alloc::format!("non-positive argument {x}")));
            }
            libm::log(x)
        }
        Builtin::Sqrt => {
            if x < 0.0 {
                return Err(domain("sqrt", alloc::format!("negative argument {x}")));
            }
            libm::sqrt(x)
        }
        Builtin::Abs => libm::fabs(x),
        Builtin::Floor => libm::floor(x),
        Builtin::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
        Builtin::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Builtin::Logistic => logistic(x),
        Builtin::Pnorm => pnorm(x),
        Builtin::Qnorm => {
            if !(x > 0.0 && x < 1.0) {
                return Err(domain("qnorm", alloc::format!("probability {x} outside (0, 1)")));
            }
            qnorm(x)
        }
        Builtin::Categorical => categorical(x, &xs[1..])?,
        Builtin::Bernoulli => {
            let p = xs[1];
            if !(0.0..=1.0).contains(&p) {
                return Err(domain("bernoulli", alloc::format!("probability {p} outside [0, 1]")));
            }
            unit_interval("bernoulli", x)?;
            if p == 0.0 {
                0.0
            } else if p == 1.0 || x >= 1.0 - p {
                1.0
            } else {
                0.0
            }
        }
        Builtin::PoissonInv => poisson_inv(x, xs[1])?,
    })
}

fn categorical(u: f64, probs: &[f64]) -> Result<f64, EvalError> {
    unit_interval("categorical", u)?;
    let mut total = 0.0;
    for &p in probs {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(domain("categorical", alloc::format!("invalid probability {p}")));
        }
        total += p;
    }
    if libm::fabs(total - 1.0) > 1e-9 {
        return Err(domain(
            "categorical",
            alloc::format!("probabilities sum to {total}, expected 1"),
        ));
    }
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
        }
        cum += p;
        if u < cum {
            return Ok((k + 1) as f64);
        }
    }
    Ok((last_positive + 1) as f64)
}

fn poisson_inv(u: f64, lambda: f64) -> Result<f64, EvalError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain("poisson_inv", alloc::format!("invalid rate {lambda}")));
    }
    unit_interval("poisson_inv", u)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    if u >= 1.0 {
        return Err(domain("poisson_inv", "quantile at probability 1 is unbounded"));
    }
    let ln_lambda = libm::log(lambda);
    let mut log_pmf = -lambda;
    let mut cdf = libm::exp(log_pmf);
    let mut k = 0u64;
    // Summation can stall just below u when u is within rounding of 1.
    let cap = (lambda + 40.0 * libm::sqrt(lambda) + 100.0) as u64;
    while cdf < u && k < cap {
        k += 1;
        log_pmf += ln_lambda - libm::log(k as f64);
        cdf += libm::exp(log_pmf);
    }
    Ok(k as f64)
}

impl Expr<String> {
    /// Evaluates against a name-to-value map.
    pub fn eval(&self, env: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
        eval(self, &|v: &String| env.get(v).copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use alloc::vec;

    fn ev(src: &str, binds: &[(&str, f64)]) -> Result<f64, EvalError> {
        let env: BTreeMap<String, f64> = binds.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        parse(src).unwrap().eval(&env)
    }

    #[test]
    fn arithmetic() {
        let r = ev("x + z + u", &[("x", -1.0), ("z", 1.0 / 3.0), ("u", 1.0 / 6.0)]).unwrap();
        assert!((r + 0.5).abs() < 1e-15);
        assert_eq!(ev("logistic(0)", &[]).unwrap(), 0.5);
        assert_eq!(ev("2 ^ 3 ^ 2", &[]).unwrap(), 512.0);
        assert_eq!(ev("-2 ^ 2", &[]).unwrap(), -4.0);
        assert_eq!(ev("min(3, 1, 2) + max(4, 5)", &[]).unwrap(), 6.0);
        assert_eq!(ev("floor(-1.5)", &[]).unwrap(), -2.0);
        assert_eq!(ev("(1 < 2) + (2 <= 2) + (1 = 1) + (1 != 1)", &[]).unwrap(), 3.0);
    }

    #[test]
    fn if_is_lazy() {
        assert_eq!(ev("if(x > 0, log(x), 0)", &[("x", -1.0)]).unwrap(), 0.0);
        assert_eq!(ev("if(x > 0, log(x), 0)", &[("x", 1.0)]).unwrap(), 0.0);
    }

    #[test]
    fn errors_instead_of_nan() {
        assert!(matches!(ev("y + 1", &[]), Err(EvalError::Unbound(v)) if v == "y"));
        assert!(matches!(ev("1 / 0", &[]), Err(EvalError::Domain { op: "/", .. })));
        assert!(matches!(ev("log(0)", &[]), Err(EvalError::Domain { op: "log", .. })));
        assert!(matches!(ev("log(-1)", &[]), Err(EvalError::Domain { op: "log", .. })));
        assert!(ev("sqrt(-1)", &[]).is_err());
        assert!(ev("(-8) ^ 0.5", &[]).is_err());
        assert!(ev("qnorm(1)", &[]).is_err());
    }

    #[test]
    fn categorical_inverse_cdf() {
        let c = |u: f64| ev("categorical(u; 0.75, 0.15, 0.10)", &[("u", u)]).unwrap();
        assert_eq!(c(0.0), 1.0);
        assert_eq!(c(0.7499), 1.0);
        assert_eq!(c(0.75), 2.0);
        assert_eq!(c(0.8999), 2.0);
        assert_eq!(c(0.9), 3.0);
        assert_eq!(c(1.0), 3.0);
        assert!(ev("categorical(u; 0.5, 0.4)", &[("u", 0.1)]).is_err());
        assert!(ev("categorical(u; 0.5, 0.5)", &[("u", 1.5)]).is_err());
        assert_eq!(ev("categorical(u; 0.5, 0.5, 0)", &[("u", 1.0)]).unwrap(), 2.0);
    }

    #[test]
    fn bernoulli_edges() {
        let b = |u: f64, p: f64| ev("bernoulli(u; p)", &[("u", u), ("p", p)]).unwrap();
        assert_eq!(b(0.3, 0.5), 0.0);
        assert_eq!(b(0.5, 0.5), 1.0);
        assert_eq!(b(1.0, 0.0), 0.0);
        assert_eq!(b(0.0, 1.0), 1.0);
    }

    #[test]
    fn poisson_small_cases() {
        let q = |u: f64, l: f64| ev("poisson_inv(u, l)", &[("u", u), ("l", l)]).unwrap();
        assert_eq!(q(0.1, 2.0), 0.0); // P(0) = e^-2 = 0.135
        assert_eq!(q(0.2, 2.0), 1.0);
        assert_eq!(q(0.5, 0.0), 0.0);
        let vals: alloc::vec::Vec<f64> = vec![0.01, 0.3, 0.6, 0.9, 0.999];
        for w in vals.windows(2) {
            assert!(q(w[0], 7.5) <= q(w[1], 7.5));
        }
    }
}

//! Structural-equation expressions.
//!
//! Each observed variable is defined by one expression over its parents, the
//! global background variables it depends on, and the reserved symbol `u`,
//! which always denotes the variable's own dedicated error term.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = sum [ cmpop sum ] ;
//! cmpop   = "<" | "<=" | "==" | "=" | "!=" | ">=" | ">" ;
//! sum     = product { ("+" | "-") product } ;
//! product = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom [ "^" unary ] ;
//! atom    = number | ident | ident "(" args ")" | "(" expr ")" ;
//! args    = expr { ("," | ";") expr } ;
//! ```
//!
//! `^` binds tighter than unary minus (`-x^2` is `-(x^2)`) and is
//! right-associative. Comparisons evaluate to `1.0` or `0.0`. `if(c, a, b)`
//! evaluates only the branch it selects. For the distribution builtins the
//! error argument is separated from the parameters by `;`, e.g.
//! `categorical(u; 0.75, 0.15, 0.10)`; the parser accepts either separator.

mod eval;
mod parse;
mod program;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use eval::{eval, EvalError};
pub use parse::{parse, ParseError, ParseErrorKind};
pub use program::Program;

/// The identifier that denotes a variable's dedicated error term.
pub const ERROR_SYMBOL: &str = "u";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

/// Built-in functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
    Floor,
    Logistic,
    Pnorm,
    Qnorm,
    /// `categorical(u; p1, ..., pK)`: class `k` in `1..=K` by inverse CDF.
    Categorical,
    /// `bernoulli(u; p)`: 0 or 1 by inverse CDF.
    Bernoulli,
    /// `poisson_inv(u; lambda)`: Poisson quantile.
    PoissonInv,
}

impl Builtin {
    pub const ALL: [Builtin; 13] = [
        Builtin::Exp,
        Builtin::Log,
        Builtin::Sqrt,
        Builtin::Abs,
        Builtin::Min,
        Builtin::Max,
        Builtin::Floor,
        Builtin::Logistic,
        Builtin::Pnorm,
        Builtin::Qnorm,
        Builtin::Categorical,
        Builtin::Bernoulli,
        Builtin::PoissonInv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Exp => "exp",
            Builtin::Log => "log",
            Builtin::Sqrt => "sqrt",
            Builtin::Abs => "abs",
            Builtin::Min => "min",
            Builtin::Max => "max",
            Builtin::Floor => "floor",
            Builtin::Logistic => "logistic",
            Builtin::Pnorm => "pnorm",
            Builtin::Qnorm => "qnorm",
            Builtin::Categorical => "categorical",
            Builtin::Bernoulli => "bernoulli",
            Builtin::PoissonInv => "poisson_inv",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.iter().copied().find(|b| b.name() == name)
    }

    /// Minimum and maximum argument count (`None` = unbounded).
    pub fn arity(self) -> (usize, Option<usize>) {
        match self {
            Builtin::Min | Builtin::Max => (1, None),
            Builtin::Categorical => (2, None),
            Builtin::Bernoulli | Builtin::PoissonInv => (2, Some(2)),
            _ => (1, Some(1)),
        }
    }

    /// Builtins whose first argument is a uniform driving an inverse CDF.
    pub fn is_inverse_cdf(self) -> bool {
        matches!(self, Builtin::Categorical | Builtin::Bernoulli | Builtin::PoissonInv)
    }
}

/// Expression tree, generic over how variables are referenced: names after
/// parsing, column indices once compiled against a model.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr<V = String> {
    Num(f64),
    Var(V),
    Neg(Box<Expr<V>>),
    Binary(BinOp, Box<Expr<V>>, Box<Expr<V>>),
    Compare(CmpOp, Box<Expr<V>>, Box<Expr<V>>),
    If(Box<Expr<V>>, Box<Expr<V>>, Box<Expr<V>>),
    Call(Builtin, Vec<Expr<V>>),
}

impl<V> Expr<V> {
    pub fn var(v: V) -> Self {
        Expr::Var(v)
    }

    pub fn binary(op: BinOp, a: Expr<V>, b: Expr<V>) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn plus(a: Expr<V>, b: Expr<V>) -> Self {
        Expr::binary(BinOp::Add, a, b)
    }

    pub fn times(a: Expr<V>, b: Expr<V>) -> Self {
        Expr::binary(BinOp::Mul, a, b)
    }

    /// Calls `f` on every variable reference, left to right.
    pub fn for_each_var<'a>(&'a self, f: &mut impl FnMut(&'a V)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(v),
            Expr::Neg(a) => a.for_each_var(f),
            Expr::Binary(_, a, b) | Expr::Compare(_, a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
            Expr::If(c, a, b) => {
                c.for_each_var(f);
                a.for_each_var(f);
                b.for_each_var(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.for_each_var(f)),
        }
    }

    pub fn mentions(&self, pred: &impl Fn(&V) -> bool) -> bool {
        let mut found = false;
        self.for_each_var(&mut |v| found |= pred(v));
        found
    }

    /// Rewrites variable references, failing on the first rejected one.
    pub fn try_map_vars<W, E>(&self, f: &mut impl FnMut(&V) -> Result<W, E>) -> Result<Expr<W>, E> {
        Ok(match self {
            Expr::Num(x) => Expr::Num(*x),
            Expr::Var(v) => Expr::Var(f(v)?),
            Expr::Neg(a) => Expr::Neg(Box::new(a.try_map_vars(f)?)),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.try_map_vars(f)?), Box::new(b.try_map_vars(f)?)),
            Expr::Compare(op, a, b) => Expr::Compare(*op, Box::new(a.try_map_vars(f)?), Box::new(b.try_map_vars(f)?)),
            Expr::If(c, a, b) => Expr::If(
                Box::new(c.try_map_vars(f)?),
                Box::new(a.try_map_vars(f)?),
                Box::new(b.try_map_vars(f)?),
            ),
            Expr::Call(fun, args) => {
                Expr::Call(*fun, args.iter().map(|a| a.try_map_vars(f)).collect::<Result<_, _>>()?)
            }
        })
    }

    /// Syntactic check for the shape `g(...) + u` with `u` absent from `g`.
    ///
    /// Sums and differences are searched so `a + u + b` and `u + a - b` also
    /// qualify. The check is conservative: `true` guarantees that changing the
    /// error by `d` changes the value by exactly `d`.
    pub fn is_additive_in(&self, is_error: &impl Fn(&V) -> bool) -> bool {
        match self {
            Expr::Var(v) => is_error(v),
            Expr::Binary(BinOp::Add, a, b) => {
                (a.is_additive_in(is_error) && !b.mentions(is_error))
                    || (b.is_additive_in(is_error) && !a.mentions(is_error))
            }
            Expr::Binary(BinOp::Sub, a, b) => a.is_additive_in(is_error) && !b.mentions(is_error),
            _ => false,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Compare(..) => 1,
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 2,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 3,
            Expr::Neg(_) => 4,
            Expr::Binary(BinOp::Pow, ..) => 5,
            Expr::Num(x) if *x < 0.0 || (*x == 0.0 && x.is_sign_negative()) => 4,
            _ => 6,
        }
    }
}

impl Expr<String> {
    /// Identifiers referenced by the expression, including `u` if present.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.for_each_var(&mut |v| {
            out.insert(v.clone());
        });
        out
    }

    pub fn is_additive_in_error(&self) -> bool {
        self.is_additive_in(&|v: &String| v == ERROR_SYMBOL)
    }
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        })
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        })
    }
}

struct Wrapped<'a, V>(&'a Expr<V>, bool);

impl<V: fmt::Display> fmt::Display for Wrapped<'_, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Prints with the minimal parentheses that re-parse to the same tree.
impl<V: fmt::Display> fmt::Display for Expr<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "-{}", Wrapped(a, a.precedence() < 4)),
            Expr::Binary(BinOp::Pow, a, b) => write!(
                f,
                "{} ^ {}",
                Wrapped(a, a.precedence() <= 5),
                Wrapped(b, b.precedence() < 4)
            ),
            Expr::Binary(op, a, b) => {
                let p = self.precedence();
                write!(
                    f,
                    "{} {op} {}",
                    Wrapped(a, a.precedence() < p),
                    Wrapped(b, b.precedence() <= p)
                )
            }
            Expr::Compare(op, a, b) => write!(
                f,
                "{} {op} {}",
                Wrapped(a, a.precedence() <= 1),
                Wrapped(b, b.precedence() <= 1)
            ),
            Expr::If(c, a, b) => write!(f, "if({c}, {a}, {b})"),
            Expr::Call(fun, args) => {
                write!(f, "{}(", fun.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i == 1 && fun.is_inverse_cdf() {
                        f.write_str("; ")?;
                    } else if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

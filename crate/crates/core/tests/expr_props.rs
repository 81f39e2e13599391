use std::collections::BTreeMap;

use cfsim_core::expr::{parse, BinOp, Builtin, CmpOp, Expr};
use proptest::prelude::*;

fn env(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Random expression source text drawn from the grammar.
fn source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0u32..1000).prop_map(|n| format!("{}", n as f64 / 8.0)),
        prop::sample::select(vec!["a", "b", "u", "x_1"]).prop_map(String::from),
    ];
    leaf.prop_recursive(5, 48, 4, |inner| {
        prop_oneof![
            (
                inner.clone(),
                prop::sample::select(vec!["+", "-", "*", "/", "^", "<", "<=", "==", "!=", ">=", ">"]),
                inner.clone()
            )
                .prop_map(|(a, op, b)| format!("({a}) {op} ({b})")),
            inner.clone().prop_map(|a| format!("-({a})")),
            inner.clone().prop_map(|a| format!("(-{a})")),
            inner.clone().prop_map(|a| format!("exp({a})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("max({a}, {b})")),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(c, a, b)| format!("if({c}, {a}, {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b}) * ({a})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("({a}) ^ ({b}) ^ 2")),
        ]
    })
}

/// Strictly increasing functions of `u` paired with their expected shape.
fn monotone_expr() -> impl Strategy<Value = String> {
    prop_oneof![
        (0.1f64..3.0, -2.0f64..2.0).prop_map(|(a, b)| format!("{a} * u + {b} * p")),
        (0.1f64..2.0).prop_map(|a| format!("exp({a} * u) + p")),
        (0.1f64..2.0, 0.5f64..5.0).prop_map(|(a, l)| format!("{l} * logistic({a} * u + p)")),
        (0.1f64..1.0).prop_map(|a| format!("u ^ 3 + {a} * u - p")),
    ]
}

fn free_vars_by_scan(src: &str) -> std::collections::BTreeSet<String> {
    let mut out = std::collections::BTreeSet::new();
    let mut cur = String::new();
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_alphanumeric() || c == '_' {
            if cur.is_empty() && c.is_ascii_digit() {
                while chars.peek().is_some_and(|d| d.is_ascii_digit() || *d == '.') {
                    chars.next();
                }
                continue;
            }
            cur.push(c);
        } else {
            if !cur.is_empty() {
                let is_call = c == '(';
                if !is_call {
                    out.insert(std::mem::take(&mut cur));
                } else {
                    cur.clear();
                }
            }
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_parse_round_trip(src in source()) {
        let e = parse(&src).unwrap();
        let printed = e.to_string();
        prop_assert_eq!(parse(&printed).unwrap(), e, "printed: {}", printed);
    }

    #[test]
    fn free_vars_match_source_identifiers(src in source()) {
        let e = parse(&src).unwrap();
        prop_assert_eq!(e.free_vars(), free_vars_by_scan(&src));
    }

    #[test]
    fn eval_is_pure(src in source(), a in -3.0f64..3.0, b in -3.0f64..3.0, u in -3.0f64..3.0) {
        let e = parse(&src).unwrap();
        let env = env(&[("a", a), ("b", b), ("u", u), ("x_1", a - b)]);
        let first = e.eval(&env);
        let handles: Vec<_> = (0..3).map(|_| {
            let (e, env) = (e.clone(), env.clone());
            std::thread::spawn(move || e.eval(&env))
        }).collect();
        for h in handles {
            let r = h.join().unwrap();
            match (&first, &r) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x.to_bits(), y.to_bits()),
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                _ => prop_assert!(false, "results differ"),
            }
        }
    }

    #[test]
    fn additive_shape_shifts_exactly(
        g in prop::sample::select(vec!["a * b", "exp(a) - b", "max(a, 0) + 3", "if(a < b, a, b)"]),
        form in 0usize..3,
        a in -2.0f64..2.0, b in -2.0f64..2.0,
        u1 in -4.0f64..4.0, u2 in -4.0f64..4.0,
    ) {
        let src = match form {
            0 => format!("{g} + u"),
            1 => format!("u + ({g})"),
            _ => format!("5000 + max(0, {g}) + u"),
        };
        let e = parse(&src).unwrap();
        prop_assert!(e.is_additive_in_error());
        let f = |u: f64| e.eval(&env(&[("a", a), ("b", b), ("u", u)])).unwrap();
        // Exact up to one rounding of the final addition.
        let diff = f(u1) - f(u2);
        prop_assert!((diff - (u1 - u2)).abs() <= 1e-9 * (1.0 + f(u1).abs()));
    }

    #[test]
    fn inverse_cdf_builtins_are_monotone(u1 in 0.0f64..=1.0, u2 in 0.0f64..=1.0, p in 0.0f64..=1.0, l in 0.0f64..30.0,
                                         w in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        let total: f64 = w.iter().sum::<f64>() + 1e-3;
        let probs: Vec<String> = w.iter().chain(std::iter::once(&1e-3)).map(|x| format!("{:e}", x / total)).collect();
        let cat = parse(&format!("categorical(u; {})", probs.join(", "))).unwrap();
        let ber = parse("bernoulli(u; p)").unwrap();
        let poi = parse("poisson_inv(u; l)").unwrap();
        let at = |e: &Expr, u: f64| e.eval(&env(&[("u", u), ("p", p), ("l", l)]));
        if let (Ok(a), Ok(b)) = (at(&cat, lo), at(&cat, hi)) { prop_assert!(a <= b); }
        prop_assert!(at(&ber, lo).unwrap() <= at(&ber, hi).unwrap());
        if hi < 1.0 {
            prop_assert!(at(&poi, lo).unwrap() <= at(&poi, hi).unwrap());
        }
    }

    #[test]
    fn monotone_family_is_increasing(src in monotone_expr(), p in -1.0f64..1.0, u in -3.0f64..3.0, d in 1e-3f64..1.0) {
        let e = parse(&src).unwrap();
        let f = |u: f64| e.eval(&env(&[("u", u), ("p", p)])).unwrap();
        prop_assert!(f(u + d) > f(u));
    }
}

/// Poisson CDF by direct summation of `lambda^k e^-lambda / k!`.
fn poisson_quantile_oracle(u: f64, lambda: f64) -> u64 {
    let mut k = 0u64;
    let mut term = (-lambda).exp();
    let mut cdf = term;
    while cdf < u {
        k += 1;
        term *= lambda / k as f64;
        cdf += term;
    }
    k
}

#[test]
fn poisson_inverse_matches_summation() {
    let e = parse("poisson_inv(0.999999, 2.0)").unwrap();
    let got = e.eval(&BTreeMap::new()).unwrap();
    assert_eq!(got, poisson_quantile_oracle(0.999999, 2.0) as f64);
    let q = parse("poisson_inv(u; l)").unwrap();
    for &l in &[0.3, 1.0, 2.5, 7.0, 20.0] {
        for i in 1..50 {
            let u = i as f64 / 50.0;
            assert_eq!(
                q.eval(&env(&[("u", u), ("l", l)])).unwrap(),
                poisson_quantile_oracle(u, l) as f64,
                "u={u} l={l}"
            );
        }
    }
}

#[test]
fn parse_examples() {
    let v = |s: &str| Expr::Var(s.to_string());
    assert_eq!(
        parse("x + z + u").unwrap(),
        Expr::binary(BinOp::Add, Expr::binary(BinOp::Add, v("x"), v("z")), v("u"))
    );
    assert_eq!(
        parse("if(age < 45, 1, 0)").unwrap(),
        Expr::If(
            Box::new(Expr::Compare(CmpOp::Lt, Box::new(v("age")), Box::new(Expr::Num(45.0)))),
            Box::new(Expr::Num(1.0)),
            Box::new(Expr::Num(0.0))
        )
    );
    assert_eq!(
        parse("categorical(u; 0.75, 0.15, 0.10)").unwrap(),
        Expr::Call(
            Builtin::Categorical,
            vec![v("u"), Expr::Num(0.75), Expr::Num(0.15), Expr::Num(0.10)]
        )
    );
}

#[test]
fn eval_examples() {
    let r = parse("x + z + u")
        .unwrap()
        .eval(&env(&[("x", -1.0), ("z", 1.0 / 3.0), ("u", 1.0 / 6.0)]))
        .unwrap();
    assert!((r + 0.5).abs() < 1e-15);
    assert_eq!(parse("logistic(0)").unwrap().eval(&BTreeMap::new()).unwrap(), 0.5);
}

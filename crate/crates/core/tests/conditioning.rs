mod common;

use cfsim_core::conditioning::{
    find_root, resample_indices, simulate_continuous_condition, simulate_discrete_condition,
    simulate_multiple_conditions, weight, Condition, ConditionError, ConditionSet, ResampleScheme, RootFindConfig,
    SamplerConfig,
};
use cfsim_core::scm::{BackgroundSpec, ModelSpec, Monotonicity, ParticleTable, Scm, VariableSpec};
use cfsim_core::stats;
use cfsim_core::{Dist, RngKey};
use common::{cov, mean, three_node};
use proptest::prelude::*;

const PHI0: f64 = 0.398_942_280_401_432_7;

fn two_var(error: Dist, expr: &str, mono: Option<Monotonicity>) -> Scm {
    let mut v = VariableSpec::continuous("v", error, expr).unwrap();
    if let Some(m) = mono {
        v = v.with_monotonicity(m);
    }
    Scm::build(&ModelSpec {
        background: vec![],
        variables: vec![VariableSpec::continuous("pa", Dist::STANDARD_NORMAL, "u").unwrap(), v],
    })
    .unwrap()
}

/// Row `[u_pa, u_v, pa, v]` with the parent set.
fn row(pa: f64) -> Vec<f64> {
    vec![pa, 0.0, pa, 0.0]
}

fn col<'a>(t: &'a ParticleTable, name: &str) -> &'a [f64] {
    t.column(name).unwrap()
}

fn checked(m: &Scm, t: ParticleTable) -> ParticleTable {
    m.check_consistency(&t).unwrap();
    t
}

#[test]
fn additive_root_is_exact() {
    let m = two_var(Dist::STANDARD_NORMAL, "pa + u", None);
    let u = find_root(&m, &row(0.3), "v", 1.0, &RootFindConfig::default())
        .unwrap()
        .unwrap();
    assert!((u - 0.7).abs() < 1e-15);
}

#[test]
fn general_root_by_bisection() {
    let m = two_var(
        Dist::STANDARD_NORMAL,
        "exp(u) + pa",
        Some(Monotonicity::MonotonicGeneral),
    );
    let cfg = RootFindConfig::default();
    let u = find_root(&m, &row(1.0), "v", 2.0, &cfg).unwrap().unwrap();
    assert!(u.abs() < 1e-9, "{u}");
    assert_eq!(find_root(&m, &row(1.0), "v", 0.5, &cfg).unwrap(), None);
}

#[test]
fn additive_weights_are_densities() {
    let m = two_var(Dist::STANDARD_NORMAL, "pa + u", None);
    let w = |pa: f64, c: f64| {
        let r = find_root(&m, &row(pa), "v", c, &RootFindConfig::default()).unwrap();
        weight(&m, &row(pa), "v", r).unwrap()
    };
    assert!((w(0.0, 0.0) - PHI0).abs() < 1e-15);
    assert!((w(2.0, 0.0) - 0.053_990_966_513_188_06).abs() < 1e-15);
    assert_eq!(weight(&m, &row(0.0), "v", None).unwrap(), 0.0);
}

/// Lognormal density: the law of `exp(Z)` for standard normal `Z`.
fn lognormal_pdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (-(x.ln()).powi(2) / 2.0).exp() / (x * (2.0 * std::f64::consts::PI).sqrt())
}

#[test]
fn general_weight_is_transformed_density() {
    let m = two_var(Dist::STANDARD_NORMAL, "exp(u)", Some(Monotonicity::MonotonicGeneral));
    let cfg = RootFindConfig::default();
    let r = find_root(&m, &row(0.0), "v", 1.0, &cfg).unwrap();
    assert!((weight(&m, &row(0.0), "v", r).unwrap() - PHI0).abs() < 1e-5);

    // The weight as a function of c is the density of v given its parents.
    let m = two_var(
        Dist::STANDARD_NORMAL,
        "exp(u) + pa",
        Some(Monotonicity::MonotonicGeneral),
    );
    let pa = 0.4;
    let h = 1e-3;
    let mut integral = 0.0;
    let mut x = pa + h / 2.0;
    while x < pa + 60.0 {
        let r = find_root(&m, &row(pa), "v", x, &cfg).unwrap();
        let w = weight(&m, &row(pa), "v", r).unwrap();
        let exact = lognormal_pdf(x - pa);
        assert!((w - exact).abs() <= 1e-5 * (1.0 + exact), "c={x}: {w} vs {exact}");
        integral += w * h;
        x += h;
    }
    assert!((integral - 1.0).abs() < 1e-3, "{integral}");
}

#[test]
fn uniform_weights_keep_about_63_percent_unique() {
    let n = 200;
    let reps = 10_000;
    let w = vec![1.0; n];
    let fracs: Vec<f64> = (0..reps)
        .map(|r| {
            let idx = resample_indices(&w, n, ResampleScheme::Multinomial, RngKey::new(5).derive(r)).unwrap();
            let mut seen = vec![false; n];
            idx.iter().for_each(|&i| seen[i] = true);
            seen.iter().filter(|&&s| s).count() as f64 / n as f64
        })
        .collect();
    let expected = 1.0 - (1.0 - 1.0 / n as f64).powi(n as i32);
    let se = stats::sd(&fracs) / (reps as f64).sqrt();
    assert!(
        (mean(&fracs) - expected).abs() < 3.0 * se,
        "{} vs {expected}",
        mean(&fracs)
    );
    assert!((expected - (1.0 - (-1.0f64).exp())).abs() < 2e-3);
}

#[test]
fn single_positive_weight_and_systematic_identity() {
    let mut w = vec![0.0; 10];
    w[6] = 0.3;
    for scheme in [ResampleScheme::Multinomial, ResampleScheme::Systematic] {
        let idx = resample_indices(&w, 25, scheme, RngKey::new(1)).unwrap();
        assert!(idx.iter().all(|&i| i == 6));
    }
    let mut idx = resample_indices(&[1.0; 50], 50, ResampleScheme::Systematic, RngKey::new(2)).unwrap();
    idx.sort_unstable();
    assert_eq!(idx, (0..50).collect::<Vec<_>>());
    assert!(resample_indices(&[0.0; 4], 4, ResampleScheme::Multinomial, RngKey::new(1)).is_none());
}

#[test]
fn resampling_is_unbiased() {
    let w = [0.05, 0.3, 0.0, 0.15, 0.8, 0.2, 0.01, 0.49];
    let total: f64 = w.iter().sum();
    let n = 20;
    let reps = 10_000;
    for scheme in [ResampleScheme::Multinomial, ResampleScheme::Systematic] {
        let mut counts = vec![Vec::with_capacity(reps); w.len()];
        for r in 0..reps {
            let mut hits = vec![0.0; w.len()];
            for i in resample_indices(&w, n, scheme, RngKey::new(77).derive(r as u64)).unwrap() {
                hits[i] += 1.0;
            }
            for (c, h) in counts.iter_mut().zip(hits) {
                c.push(h);
            }
        }
        for (i, c) in counts.iter().enumerate() {
            let expected = n as f64 * w[i] / total;
            let se = stats::sd(c) / (reps as f64).sqrt();
            let band = 3.0 * se.max(1e-12);
            assert!(
                (mean(c) - expected).abs() <= band,
                "{scheme} row {i}: {} vs {expected}",
                mean(c)
            );
        }
    }
}

#[test]
fn condition_on_y_matches_analytic_law() {
    let m = three_node();
    let t = simulate_continuous_condition(
        &m,
        100_000,
        &Condition::new("y", 1.0),
        None,
        RngKey::new(2024),
        &SamplerConfig::default(),
        false,
    )
    .unwrap();
    let t = checked(&m, t);
    assert!(t.weights().is_none());
    assert!(col(&t, "y").iter().all(|&y| (y - 1.0).abs() <= 1e-9));
    let (uz, uy) = (col(&t, "u_z"), col(&t, "u_y"));
    assert!((mean(uz) - 1.0 / 3.0).abs() < 0.01, "{}", mean(uz));
    assert!((mean(uy) - 1.0 / 6.0).abs() < 0.01, "{}", mean(uy));
    assert!((cov(uz, uz) - 1.0 / 3.0).abs() < 0.02);
    assert!((cov(uz, uy) + 1.0 / 3.0).abs() < 0.02);
    assert!((cov(uy, uy) - 5.0 / 6.0).abs() < 0.02);
    let d = &t.diagnostics()[0];
    assert_eq!(d.variable, "y");
    assert_eq!(d.pool, 100_000);
    assert!(d.unique_ancestors > 0 && d.unique_ancestors <= 100_000);
}

#[test]
fn weighted_variant_carries_weights() {
    let m = three_node();
    let t = simulate_continuous_condition(
        &m,
        50_000,
        &Condition::new("y", 1.0),
        None,
        RngKey::new(3),
        &SamplerConfig::default(),
        true,
    )
    .unwrap();
    let w = t.weights().unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(w.iter().all(|&x| x >= 0.0));
    let wm: f64 = w.iter().zip(col(&t, "u_z")).map(|(a, b)| a * b).sum();
    assert!((wm - 1.0 / 3.0).abs() < 0.02, "{wm}");
    assert!(t.ess() < 50_000.0);
}

#[test]
fn condition_on_root_fixes_its_error() {
    let m = three_node();
    let t = simulate_continuous_condition(
        &m,
        1000,
        &Condition::new("z", 0.25),
        None,
        RngKey::new(4),
        &SamplerConfig::default(),
        false,
    )
    .unwrap();
    assert!(col(&checked(&m, t), "u_z").iter().all(|&u| u == 0.25));
}

fn coin() -> Scm {
    Scm::build(&ModelSpec {
        background: vec![],
        variables: vec![
            VariableSpec::discrete("c", Dist::STANDARD_UNIFORM, "bernoulli(u; 0.5)").unwrap(),
            VariableSpec::discrete("never", Dist::STANDARD_UNIFORM, "bernoulli(u; 0)").unwrap(),
            VariableSpec::continuous("y", Dist::STANDARD_NORMAL, "2 * c + u").unwrap(),
        ],
    })
    .unwrap()
}

#[test]
fn discrete_condition_filters() {
    let m = coin();
    let cfg = SamplerConfig::default();
    let t = simulate_discrete_condition(&m, 10_000, &Condition::new("c", 1.0), None, RngKey::new(8), &cfg).unwrap();
    let t = checked(&m, t);
    assert_eq!(t.n_rows(), 10_000);
    assert!(col(&t, "c").iter().all(|&c| c == 1.0));
    let d = &t.diagnostics()[0];
    assert!(d.discrete);
    assert!((4800..=5200).contains(&d.positive), "{}", d.positive);
    assert!(d.unique_ancestors <= d.positive);

    let err =
        simulate_discrete_condition(&m, 1000, &Condition::new("never", 1.0), None, RngKey::new(8), &cfg).unwrap_err();
    match err {
        ConditionError::Infeasible(e) => {
            assert_eq!(e.variable.as_deref(), Some("never"));
            assert_eq!(e.marginal, vec![(0.0, 1000)]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn multiple_conditions_sorted_and_satisfied() {
    let m = coin();
    let cfg = SamplerConfig::default();
    let cs = ConditionSet::new().with("y", 2.5).with("c", 1.0);
    let t = checked(
        &m,
        simulate_multiple_conditions(&m, 20_000, &cs, RngKey::new(9), &cfg).unwrap(),
    );
    assert!(col(&t, "c").iter().all(|&c| c == 1.0));
    assert!(col(&t, "y").iter().all(|&y| (y - 2.5).abs() <= 2.5e-9));
    let names: Vec<&str> = t.diagnostics().iter().map(|d| d.variable.as_str()).collect();
    assert_eq!(names, ["c", "y"]);

    let dup = ConditionSet::new().with("y", 1.0).with("y", 2.0);
    assert!(matches!(
        simulate_multiple_conditions(&m, 10, &dup, RngKey::new(1), &cfg),
        Err(ConditionError::Duplicate(_))
    ));
    let bad = ConditionSet::new().with("c", 1.0).with("never", 1.0);
    match simulate_multiple_conditions(&m, 100, &bad, RngKey::new(1), &cfg) {
        Err(ConditionError::Infeasible(e)) => assert_eq!(e.condition_index, Some(1)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn single_condition_paths_agree() {
    let m = three_node();
    let cfg = SamplerConfig::default();
    let a =
        simulate_multiple_conditions(&m, 50_000, &ConditionSet::new().with("x", 0.5), RngKey::new(1), &cfg).unwrap();
    let b = simulate_continuous_condition(&m, 50_000, &Condition::new("x", 0.5), None, RngKey::new(2), &cfg, false)
        .unwrap();
    let ks = common::ks2(col(&a, "y"), col(&b, "y"));
    assert!(ks < 0.02, "{ks}");
}

#[test]
fn unsolvable_rows_get_zero_weight() {
    let m = two_var(
        Dist::STANDARD_NORMAL,
        "exp(u) + pa",
        Some(Monotonicity::MonotonicGeneral),
    );
    let cfg = SamplerConfig::default();
    // v > pa always, so rows with pa >= 0.5 cannot reach 0.5.
    let t = simulate_continuous_condition(&m, 20_000, &Condition::new("v", 0.5), None, RngKey::new(5), &cfg, false)
        .unwrap();
    let t = checked(&m, t);
    assert!(col(&t, "pa").iter().all(|&p| p < 0.5));
    assert!(t.diagnostics()[0].na_roots > 0);
}

#[test]
fn continuous_condition_without_monotonicity_is_rejected() {
    let m = two_var(Dist::STANDARD_NORMAL, "exp(u) + pa", None);
    let r = simulate_continuous_condition(
        &m,
        10,
        &Condition::new("v", 2.0),
        None,
        RngKey::new(1),
        &SamplerConfig::default(),
        false,
    );
    assert!(matches!(r, Err(ConditionError::NotInvertible(_))), "{r:?}");
}

#[test]
fn decreasing_equation_declared_monotone_is_reported() {
    let m = two_var(
        Dist::STANDARD_NORMAL,
        "pa - exp(u)",
        Some(Monotonicity::MonotonicGeneral),
    );
    let r = simulate_continuous_condition(
        &m,
        10,
        &Condition::new("v", -1.0),
        None,
        RngKey::new(1),
        &SamplerConfig::default(),
        false,
    );
    assert!(matches!(r, Err(ConditionError::NonMonotone { .. })), "{r:?}");
}

#[test]
fn systematic_scheme_reproduces_the_law() {
    let m = three_node();
    let cfg = SamplerConfig {
        scheme: ResampleScheme::Systematic,
        ..SamplerConfig::default()
    };
    let t =
        simulate_multiple_conditions(&m, 100_000, &ConditionSet::new().with("y", 1.0), RngKey::new(6), &cfg).unwrap();
    let t = checked(&m, t);
    assert!((mean(col(&t, "u_z")) - 1.0 / 3.0).abs() < 0.01);
    assert!((cov(col(&t, "u_y"), col(&t, "u_y")) - 5.0 / 6.0).abs() < 0.02);
}

#[test]
fn confounded_model_conditions_on_several_variables() {
    let m = Scm::build(&ModelSpec {
        background: vec![BackgroundSpec::new("h", Dist::STANDARD_NORMAL)],
        variables: vec![
            VariableSpec::continuous("a", Dist::STANDARD_NORMAL, "h + u").unwrap(),
            VariableSpec::continuous("b", Dist::STANDARD_NORMAL, "a + h + u").unwrap(),
            VariableSpec::continuous("c", Dist::STANDARD_NORMAL, "0.5 * b - h + u").unwrap(),
        ],
    })
    .unwrap();
    let cs = ConditionSet::new().with("c", 0.2).with("a", -0.4);
    let t = simulate_multiple_conditions(&m, 10_000, &cs, RngKey::new(10), &SamplerConfig::default()).unwrap();
    let t = checked(&m, t);
    assert!(col(&t, "a").iter().all(|&a| (a + 0.4).abs() <= 1e-9));
    assert!(col(&t, "c").iter().all(|&c| (c - 0.2).abs() <= 1e-9));
}

fn monotone_equation() -> impl Strategy<Value = (String, Dist)> {
    let dist = prop_oneof![
        Just(Dist::STANDARD_NORMAL),
        (0.2f64..3.0).prop_map(|s| Dist::normal(0.5, s).unwrap()),
        (-2.0f64..0.0, 0.5f64..3.0).prop_map(|(a, w)| Dist::uniform(a, a + w).unwrap()),
    ];
    let expr = prop_oneof![
        (0.1f64..3.0).prop_map(|a| format!("{a} * u + pa")),
        (0.1f64..2.0).prop_map(|a| format!("exp({a} * u) + pa")),
        (0.1f64..2.0).prop_map(|a| format!("3 * logistic({a} * u) - pa")),
        (0.1f64..1.0).prop_map(|a| format!("u ^ 3 + {a} * u + pa * pa")),
        (0.1f64..1.0).prop_map(|a| format!("if(u < 0, {a} * u, u * 2) + pa")),
    ];
    (expr, dist)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn roots_satisfy_tolerance(
        (expr, dist) in monotone_equation(),
        pa in -1.0f64..1.0,
        p in 0.001f64..0.999,
    ) {
        let m = two_var(dist, &expr, Some(Monotonicity::MonotonicGeneral));
        let cfg = RootFindConfig::default();
        // A target value inside the range, taken at a quantile of the error.
        let v = m.var_index("v").unwrap();
        let r = row(pa);
        let at = |u: f64| m.eval_with_error(v, &|c| r[c], u).unwrap();
        let c = at(dist.quantile(p));
        let u = find_root(&m, &r, "v", c, &cfg).unwrap().expect("target is in range");
        prop_assert!((at(u) - c).abs() <= cfg.tolerance_at(c), "|f(u) - c| = {}", (at(u) - c).abs());
        let w = weight(&m, &r, "v", Some(u)).unwrap();
        prop_assert!(w >= 0.0 && w.is_finite());
    }

    #[test]
    fn additive_weight_equals_density(
        dist in prop_oneof![
            (-1.0f64..1.0, 0.1f64..3.0).prop_map(|(m, s)| Dist::normal(m, s).unwrap()),
            (-2.0f64..0.0, 0.5f64..3.0).prop_map(|(a, w)| Dist::uniform(a, a + w).unwrap()),
        ],
        pa in -2.0f64..2.0,
        c in -3.0f64..3.0,
    ) {
        let m = two_var(dist, "2 * pa + u", None);
        let r = row(pa);
        let root = find_root(&m, &r, "v", c, &RootFindConfig::default()).unwrap();
        prop_assert_eq!(root, Some(c - 2.0 * pa));
        let w = weight(&m, &r, "v", root).unwrap();
        let exact = match dist {
            Dist::Normal { mean, sd } => {
                let z = (c - 2.0 * pa - mean) / sd;
                (-z * z / 2.0).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Dist::Uniform { low, high } => {
                let e = c - 2.0 * pa;
                if (low..=high).contains(&e) { 1.0 / (high - low) } else { 0.0 }
            }
        };
        prop_assert!((w - exact).abs() <= 1e-14 * (1.0 + exact), "{} vs {}", w, exact);
    }
}

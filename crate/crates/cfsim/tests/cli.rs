use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models")
}

fn cfsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfsim"))
        .args(args)
        .env_remove("CFSIM_THREADS")
        .output()
        .expect("run cfsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn model(name: &str) -> String {
    models().join(name).to_str().unwrap().to_string()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Parses CSV text with a header; non-numeric cells become NaN.
fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

fn column(text: &str, name: &str) -> Vec<f64> {
    let (h, rows) = parse_csv(text);
    let i = h.iter().position(|c| c == name).unwrap();
    rows.iter().map(|r| r[i]).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

const ADDITIVE: &str = r#"
format_version = 1
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
"#;

#[test]
fn simulate_is_deterministic_for_a_seed() {
    let m = model("chain.toml");
    let a = cfsim(&["simulate", "--model", &m, "--n", "200", "--seed", "3"]);
    let b = cfsim(&["simulate", "--model", &m, "--n", "200", "--seed", "3"]);
    let c = cfsim(&["simulate", "--model", &m, "--n", "200", "--seed", "4"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let (h, rows) = parse_csv(&stdout(&a));
    assert_eq!(h, ["u_z", "u_x", "u_y", "z", "x", "y"]);
    assert_eq!(rows.len(), 200);
    for r in &rows {
        assert!((r[5] - (r[4] + r[3] + r[2])).abs() < 1e-12);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let m = model("credit.toml");
    let one = cfsim(&["--threads", "1", "simulate", "--model", &m, "--n", "3000"]);
    let many = cfsim(&["--threads", "4", "simulate", "--model", &m, "--n", "3000"]);
    assert!(one.status.success(), "{}", stderr(&one));
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn zero_rows_give_a_header_only() {
    let o = cfsim(&["simulate", "--model", &model("chain.toml"), "--n", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "u_z,u_x,u_y,z,x,y\r\n");
}

#[test]
fn input_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = cfsim(&["simulate", "--model", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"));

    let cyclic = write(
        &dir,
        "cyclic.toml",
        "format_version = 1\n[[variables]]\nname = \"a\"\nerror = \"normal(0, 1)\"\nexpr = \"b + u\"\n\
         [[variables]]\nname = \"b\"\nerror = \"normal(0, 1)\"\nexpr = \"a + u\"\n",
    );
    assert_eq!(cfsim(&["simulate", "--model", &cyclic]).status.code(), Some(2));

    let version = write(
        &dir,
        "v2.toml",
        &ADDITIVE.replace("format_version = 1", "format_version = 2"),
    );
    let o = cfsim(&["simulate", "--model", &version]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("format_version"));

    let typo = write(&dir, "typo.toml", &ADDITIVE.replace("expr = \"u\"", "exrp = \"u\""));
    assert_eq!(cfsim(&["simulate", "--model", &typo]).status.code(), Some(2));
}

#[test]
fn counterfactual_matches_the_closed_form() {
    let o = cfsim(&["counterfactual", "--query", &model("chain_query.toml"), "--n", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let y = column(&stdout(&o), "y");
    assert_eq!(y.len(), 20000);
    assert!((mean(&y) + 0.5).abs() < 0.03, "mean {}", mean(&y));
    let x = column(&stdout(&o), "x");
    assert!(x.iter().all(|&v| v == -1.0));
    // The summary goes to standard error alongside CSV data.
    assert!(stderr(&o).contains("unique"));
}

#[test]
fn counterfactual_table_reports_moments() {
    let o = cfsim(&[
        "counterfactual",
        "--query",
        &model("chain_query.toml"),
        "--n",
        "20000",
        "--format",
        "table",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let line = out.lines().find(|l| l.trim_start().starts_with("y ")).unwrap();
    let cells: Vec<f64> = line.split_whitespace().skip(1).map(|c| c.parse().unwrap()).collect();
    assert!((cells[0] + 0.5).abs() < 0.03);
    assert!((cells[1] - 0.5).abs() < 0.03);
}

#[test]
fn pruning_does_not_change_the_answer() {
    let q = model("chain_query.toml");
    let a = cfsim(&["counterfactual", "--query", &q, "--n", "20000"]);
    let b = cfsim(&["counterfactual", "--query", &q, "--n", "20000", "--no-prune"]);
    let (ya, yb) = (column(&stdout(&a), "y"), column(&stdout(&b), "y"));
    assert!((mean(&ya) - mean(&yb)).abs() < 0.04);
}

#[test]
fn contradictory_evidence_exits_with_3() {
    let dir = TempDir::new().unwrap();
    write(
        &dir,
        "m.toml",
        "format_version = 1\n[[variables]]\nname = \"a\"\nkind = \"discrete\"\nerror = \"uniform(0, 1)\"\n\
         expr = \"bernoulli(u; 0.5)\"\n",
    );
    let q = write(
        &dir,
        "q.toml",
        "format_version = 1\nmodel = \"m.toml\"\ntargets = [\"a\"]\n[given]\na = 2\n",
    );
    let o = cfsim(&["counterfactual", "--query", &q, "--n", "500"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("a = 2"));
}

#[test]
fn intervening_on_a_target_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "m.toml", ADDITIVE);
    let q = write(&dir, "q.toml", "format_version = 1\ntargets = [\"x\"]\n[do]\nx = 1\n");
    let o = cfsim(&["counterfactual", "--query", &q, "--model", &m]);
    assert_eq!(o.status.code(), Some(2));
}

fn fairness_case(dir: &TempDir, predictor: &str) -> String {
    write(dir, "m.toml", ADDITIVE);
    write(
        dir,
        "case.toml",
        &format!(
            "format_version = 1\nmodel = \"m.toml\"\noutcome = \"y\"\nn = 2000\nseed = 9\n\
             [[sensitive]]\nname = \"z\"\nvalues = [-1, 0, 1]\n[w]\nx = 0.5\n[predictor]\n{predictor}\n"
        ),
    )
}

#[test]
fn fairness_of_a_predictor_reading_only_w() {
    let dir = TempDir::new().unwrap();
    let case = fairness_case(&dir, "expr = \"2 * x\"");
    let o = cfsim(&["fairness", "--case", &case]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().skip(1).all(|l| l.ends_with(",0,ok")), "{out}");
}

#[test]
fn fairness_of_a_predictor_reading_the_sensitive_attribute() {
    let dir = TempDir::new().unwrap();
    let case = fairness_case(&dir, "expr = \"x + z\"");
    let o = cfsim(&["fairness", "--case", &case, "--format", "table"]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Under do(z = s) the prediction is x + s with x pinned by evidence; cells differ by 2.
    let out = stdout(&o);
    let max = out.lines().find(|l| l.contains("Maximum difference")).unwrap();
    let v: f64 = max.split_whitespace().last().unwrap().parse().unwrap();
    assert!(v > 1.0, "{out}");
}

#[test]
fn a_single_sensitive_value_has_zero_difference() {
    let dir = TempDir::new().unwrap();
    let case = fairness_case(&dir, "expr = \"x + z\"");
    let text = fs::read_to_string(&case).unwrap().replace("[-1, 0, 1]", "[0]");
    fs::write(&case, text).unwrap();
    let o = cfsim(&["fairness", "--case", &case]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().nth(1).unwrap().ends_with(",0,ok"));
}

#[test]
fn external_predictors_follow_the_protocol() {
    let dir = TempDir::new().unwrap();
    let case = fairness_case(&dir, "expr = \"0\"");
    // Without declared inputs every observed column is sent, in model order; echo x.
    let o = cfsim(&[
        "fairness",
        "--case",
        &case,
        "--predictor-command",
        "tail -n +2 | cut -d, -f2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",0,ok")));

    let constant = cfsim(&[
        "fairness",
        "--case",
        &case,
        "--predictor-command",
        "awk 'NR > 1 { print 7 }'",
    ]);
    assert!(constant.status.success(), "{}", stderr(&constant));
    let mean_col = column(&stdout(&constant), "mean");
    assert!(mean_col.iter().all(|&m| m == 7.0));
}

#[test]
fn external_predictor_failures_exit_with_4() {
    let dir = TempDir::new().unwrap();
    let case = fairness_case(&dir, "expr = \"0\"");
    let short = cfsim(&["fairness", "--case", &case, "--predictor-command", "tail -n +3"]);
    assert_eq!(short.status.code(), Some(4), "{}", stderr(&short));

    let failing = cfsim(&[
        "fairness",
        "--case",
        &case,
        "--predictor-command",
        "echo boom >&2; exit 1",
    ]);
    assert_eq!(failing.status.code(), Some(4));
    assert!(stderr(&failing).contains("boom"));

    let random = cfsim(&[
        "fairness",
        "--case",
        &case,
        "--predictor-command",
        "awk -v s=$$ 'BEGIN { srand(s) } NR > 1 { print rand() }'",
    ]);
    assert_eq!(random.status.code(), Some(4), "{}", stderr(&random));

    let slow = cfsim(&[
        "fairness",
        "--case",
        &case,
        "--predictor-command",
        "sleep 5",
        "--predictor-timeout",
        "0.2",
    ]);
    assert_eq!(slow.status.code(), Some(4));
    assert!(stderr(&slow).contains("timed out"));
}

#[test]
fn predictor_sources_are_exclusive() {
    let dir = TempDir::new().unwrap();
    let case = fairness_case(&dir, "expr = \"x\"\ncommand = \"cat\"");
    assert_eq!(cfsim(&["fairness", "--case", &case]).status.code(), Some(2));
    let o = cfsim(&[
        "fairness",
        "--case",
        &case,
        "--predictor-expr",
        "x",
        "--predictor-command",
        "cat",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_with_one_round_has_no_spread() {
    let o = cfsim(&["bench", "--case", "A", "--n", "1000", "--rounds", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let z = (column(&out, "z_mean"), column(&out, "z_min"), column(&out, "z_max"));
    assert_eq!(z.0, z.1);
    assert_eq!(z.1, z.2);
}

#[test]
fn bench_without_conditions_keeps_every_particle() {
    let dir = TempDir::new().unwrap();
    let f = write(
        &dir,
        "cases.toml",
        "format_version = 1\n[[case]]\nname = \"flat\"\nvariables = 4\nconditions = 0\ndegree = 0\n\
         globals_per_variable = 0\nrounds = 2\nn = [500, 1000]\n",
    );
    let o = cfsim(&["bench", "--case", &f]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(column(&out, "n"), [500.0, 1000.0]);
    assert!(column(&out, "unique_pct").iter().all(|&u| u == 100.0));
}

#[test]
fn bench_presets_file_loads() {
    let o = cfsim(&[
        "bench",
        "--case",
        &model("bench_cases.toml"),
        "--n",
        "200",
        "--rounds",
        "1",
        "--format",
        "table",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for name in ["A", "B", "C", "D", "E"] {
        assert!(out.lines().any(|l| l.trim_start().starts_with(name)));
    }
}

#[test]
fn credit_predictor_c_is_counterfactually_fair() {
    let case = model("credit_c.toml");
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(&case)
        .unwrap()
        .replace(
            "model = \"credit.toml\"",
            &format!("model = {:?}", model("credit.toml")),
        )
        .replace("cases = 100", "cases = 4")
        .replace("n_per_case = 1000", "n_per_case = 300");
    let small = write(&dir, "c.toml", &text);
    let o = cfsim(&["fairness", "--case", &small, "--format", "table"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let max = out.lines().find(|l| l.contains("Maximum difference")).unwrap();
    assert!(max.ends_with("0.00000"), "{out}");
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_binconv");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("spawn binconv")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn json(o: &Output) -> Value {
    serde_json::from_str(&stdout(o)).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn fit<'a>(doc: &'a Value, scope: &str, estimator: &str) -> &'a Value {
    doc["fits"]
        .as_array()
        .unwrap()
        .iter()
        .find(|f| f["scope"] == scope && f["estimator"] == estimator)
        .unwrap_or_else(|| panic!("no {estimator} fit for {scope}"))
}

#[test]
fn perfect_agreement_gives_unit_rates() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "d.csv",
        "x,y,n_trials\n3,3,10\n5,5,10\n7,7,10\n9,9,10\n",
    );
    let o = run(&[
        "estimate",
        input.to_str().unwrap(),
        "--estimator",
        "mle,ols",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = json(&o);
    for est in ["mle", "ols"] {
        let f = fit(&doc, "all", est);
        assert!(f["ok"].as_bool().unwrap());
        assert!((f["pi_tp"].as_f64().unwrap() - 1.0).abs() < 1e-6, "{f}");
        assert!((f["pi_tn"].as_f64().unwrap() - 1.0).abs() < 1e-6, "{f}");
    }
    assert_eq!(doc["agreement"]["exact"].as_f64(), Some(1.0));
}

#[test]
fn gmm_on_too_few_rows_is_an_estimation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "d.csv",
        "x,y,n_trials\n3,3,10\n5,5,10\n7,7,10\n9,9,10\n",
    );
    let o = run(&["estimate", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let doc = json(&o);
    assert!(fit(&doc, "all", "mle")["ok"].as_bool().unwrap());
    assert!(!fit(&doc, "all", "gmm")["ok"].as_bool().unwrap());
}

#[test]
fn generated_data_round_trips_through_estimation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("g.csv");
    let o = run(&[
        "generate",
        "--n",
        "5000",
        "--seed",
        "1",
        "-o",
        data.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["estimate", data.to_str().unwrap(), "--estimator", "mle"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let f = fit(&json(&o), "all", "mle").clone();
    assert!((f["pi_tp"].as_f64().unwrap() - 0.98).abs() < 0.01, "{f}");
    assert!((f["pi_tn"].as_f64().unwrap() - 0.70).abs() < 0.01, "{f}");
    let se = &f["standard_errors"][0];
    assert_eq!(se["method"], "plugin");
    assert!(se["pi_tn"].as_f64().unwrap() > 0.0);
    let ci = f["intervals"].as_array().unwrap();
    assert!(ci.iter().all(|c| c["contains_estimate"].as_bool().unwrap()));
}

#[test]
fn generate_is_reproducible() {
    let a = run(&["generate", "--n", "200", "--seed", "9"]);
    let b = run(&["generate", "--n", "200", "--seed", "9"]);
    let c = run(&["generate", "--n", "200", "--seed", "10"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
    assert!(stdout(&a).starts_with("x,y,n_trials\n"));
    assert_eq!(stdout(&a).lines().count(), 201);
}

#[test]
fn malformed_row_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.csv", "x,y,n_trials\n3,3,10\n5,eleven,10\n");
    let o = run(&["estimate", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("row 2") && err.contains("y"), "{err}");

    let input = write(dir.path(), "range.csv", "x,y,n_trials\n3,12,10\n");
    let o = run(&["estimate", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = run(&["estimate", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bootstrap_standard_errors_are_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("g.csv");
    run(&[
        "generate",
        "--n",
        "80",
        "--seed",
        "4",
        "-o",
        data.to_str().unwrap(),
    ]);
    let args = |seed: &str| {
        let o = run(&[
            "estimate",
            data.to_str().unwrap(),
            "--estimator",
            "ols",
            "--se",
            "plugin,boot,moon",
            "--boot-reps",
            "200",
            "--seed",
            seed,
            "--format",
            "csv",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        stdout(&o)
    };
    let a = args("5");
    let strip = |s: &str| {
        s.lines()
            .filter(|l| !l.contains("created"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&args("5")));
    assert_ne!(strip(&a), strip(&args("6")));
}

#[test]
fn grouped_data_gets_per_group_fits_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("x,y,n_trials,group\n");
    for (g, seed, tn) in [("a", "1", "0.95"), ("b", "2", "0.60")] {
        let o = run(&["generate", "--n", "300", "--seed", seed, "--pi-tn", tn]);
        for line in stdout(&o).lines().skip(1) {
            body.push_str(&format!("{line},{g}\n"));
        }
    }
    let input = write(dir.path(), "grouped.csv", &body);

    let o = run(&["estimate", input.to_str().unwrap(), "--estimator", "mle"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = json(&o);
    let a = fit(&doc, "a", "mle")["pi_tn"].as_f64().unwrap();
    let b = fit(&doc, "b", "mle")["pi_tn"].as_f64().unwrap();
    assert!(a > 0.85 && b < 0.75, "{a} {b}");

    let o = run(&["compare", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = json(&o);
    assert_eq!(doc["comparison"]["n_groups"], 2);
    assert_eq!(doc["comparison"]["preferred_by_aic"], "group_specific");
    assert_eq!(doc["comparison"]["preferred_by_bic"], "group_specific");

    let o = run(&["compare", input.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("model,k,loglik,aic,bic,preferred_by\n"));
}

#[test]
fn influence_ranks_the_outlier_first() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--n", "40", "--seed", "3"]);
    let mut body = stdout(&o);
    body.push_str("60,5,60\n");
    let input = write(dir.path(), "d.csv", &body);
    let o = run(&["influence", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = json(&o);
    let obs = doc["observations"].as_array().unwrap();
    assert_eq!(obs.len(), 41);
    assert_eq!(obs[0]["index"], 40);
    let o = run(&["influence", input.to_str().unwrap(), "--format", "csv"]);
    let text = stdout(&o);
    assert!(
        text.lines().nth(1).unwrap().starts_with("41,60,5,60,"),
        "{text}"
    );
}

fn simulate(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate",
        cfg.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

fn distinct_cells(path: &Path) -> usize {
    let mut cells: Vec<String> = csv_rows(path).iter().map(|r| r[0].to_string()).collect();
    cells.dedup();
    cells.len()
}

#[test]
fn shipped_rmse_sweep_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(
        &config("rmse-sweep.toml"),
        dir.path(),
        &["--replications", "3"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rmse = dir.path().join("rmse.csv");
    assert_eq!(distinct_cells(&rmse), 60);
    assert_eq!(csv_rows(&rmse).len(), 180);
    let report: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"], 60);
    assert_eq!(report["kind"], "rmse");
}

#[test]
fn shipped_variance_ratio_factorial_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(
        &config("variance-ratio-factorial.toml"),
        dir.path(),
        &["--replications", "3", "--boot-reps", "5"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(distinct_cells(&dir.path().join("variance_ratios.csv")), 32);
    let table = csv::Reader::from_path(dir.path().join("variance_ratio_table.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    for m in ["plugin", "semipar", "boot", "moon-2sqrtn", "moon-2n3"] {
        assert!(table.iter().any(|h| h == m), "{table:?}");
    }
}

#[test]
fn shipped_misspecification_grid_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(
        &config("misspecification.toml"),
        dir.path(),
        &["--replications", "2"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("rmse.csv"));
    assert_eq!(distinct_cells(&dir.path().join("rmse.csv")), 45);
    let modes: std::collections::BTreeSet<String> = rows.iter().map(|r| r[7].to_string()).collect();
    assert_eq!(modes.len(), 3, "{modes:?}");
}

#[test]
fn simulation_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "kind = \"rmse\"\nseed = 11\nreplications = 20\n\n[[sweep]]\nfactor = \"n\"\nvalues = [30, 60]\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        simulate(&cfg, &a, &["--parallelism", "1"]).status.code(),
        Some(0)
    );
    assert_eq!(
        simulate(&cfg, &b, &["--parallelism", "4"]).status.code(),
        Some(0)
    );
    let read = |d: &Path| std::fs::read(d.join("rmse.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn bad_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "kind = \"rmse\"\nreplicatoins = 5\n",
    );
    let o = simulate(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("replicatoins"), "{}", stderr(&o));

    let cfg = write(
        dir.path(),
        "range.toml",
        "kind = \"rmse\"\n[baseline]\npi_tp = 1.5\n",
    );
    let o = simulate(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

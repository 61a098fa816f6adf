use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dynhaz::benchmark::{read_results, Metric};
use dynhaz::summary::main_effects;

const TABLE1: &str = "\
id,tau,delta,X1_0,X1_1,X1_2,X1_3,X2
1,2,1,10,11,NA,NA,21
2,4,1,20,21,22,23,22
3,3,0,30,31,32,NA,23
";

fn dynhaz(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynhaz"))
        .args(args)
        .current_dir(dir)
        .env_remove("DYNHAZ_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn transform_emits_person_period_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), TABLE1).unwrap();
    let text = ok(&dynhaz(&["transform", "--input", "data.csv", "--method", "superpp"], dir.path()));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,y,t,u,X1,X2");
    assert_eq!(lines.len(), 1 + 19);
    assert_eq!(lines[1], "1,0,0,1,10,21");

    let text =
        ok(&dynhaz(&["transform", "--input", "data.csv", "--method", "separate", "--t", "1", "--u", "2"], dir.path()));
    assert_eq!(text, "id,y,t,u,X1,X2\n1,1,1,2,11,21\n2,0,1,2,21,22\n3,0,1,2,31,23\n");

    let missing = dynhaz(&["transform", "--input", "data.csv", "--method", "separate"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let last =
        ok(&dynhaz(&["transform", "--input", "data.csv", "--method", "separate", "--t", "3", "--u", "4"], dir.path()));
    assert_eq!(last, "id,y,t,u,X1,X2\n2,1,3,4,23,22\n");
    let beyond =
        dynhaz(&["transform", "--input", "data.csv", "--method", "separate", "--t", "4", "--u", "5"], dir.path());
    assert_eq!(beyond.status.code(), Some(2));
}

#[test]
fn invalid_input_reports_subject_and_violation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "id,tau,delta,Z_0,Z_1\n5,2,0,1,2\n9,2,0,1,NA\n").unwrap();
    let out = dynhaz(&["transform", "--input", "bad.csv", "--method", "superpp", "--time-invariant", "Z"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("subject 5: time-invariant covariate `Z` changes at t=1"), "{err}");
    assert!(err.contains("subject 9: covariate `Z` is NA at t=1"), "{err}");
}

#[test]
fn simulate_fit_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("sim.json"), r#"{"n": 150, "test_size": 40, "T": 3, "censor_rate": 0.5}"#).unwrap();
    ok(&dynhaz(&["simulate", "--config", "sim.json", "--seed", "7", "--out", "sim"], p));
    for name in ["train.csv", "test_1.csv", "test_2.csv", "test_3.csv", "truth.csv"] {
        assert!(p.join("sim").join(name).exists(), "{name}");
    }
    let truth = fs::read_to_string(p.join("sim/truth.csv")).unwrap();
    assert!(truth.starts_with("subject,u,true_hazard\n"));
    // test subjects appear exactly once, at their set's u
    assert_eq!(truth.lines().filter(|l| l.starts_with("151,")).count(), 1);

    ok(&dynhaz(
        &["--jobs", "1", "fit", "--method", "superpp", "--input", "sim/train.csv", "--out", "b.json", "--trees", "20"],
        p,
    ));
    ok(&dynhaz(&["fit", "--method", "superppdtpo", "--input", "sim/train.csv", "--out", "d.json"], p));

    let train = fs::read_to_string(p.join("sim/train.csv")).unwrap();
    let header = train.lines().next().unwrap();
    let subject = train.lines().skip(1).find(|l| l.split(',').nth(1) == Some("3")).expect("a subject with tau=3");
    fs::write(p.join("one.csv"), format!("{header}\n{subject}\n")).unwrap();
    let curve = ok(&dynhaz(&["predict", "--bundle", "b.json", "--subject", "one.csv", "--t", "1"], p));
    let rows: Vec<Vec<f64>> =
        curve.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(curve.lines().next(), Some("u,hazard,survival,event_prob"));
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[1][0]), (2.0, 3.0));
    let total = rows.iter().map(|r| r[3]).sum::<f64>() + rows[1][2];
    assert!((total - 1.0).abs() < 1e-12);

    let several = dynhaz(&["predict", "--bundle", "b.json", "--subject", "sim/train.csv", "--t", "0"], p);
    assert_eq!(several.status.code(), Some(2));

    for bundle in ["b.json", "d.json"] {
        let grid = ok(&dynhaz(&["evaluate", "--bundle", bundle, "--data", "sim"], p));
        let lines: Vec<&str> = grid.lines().collect();
        assert_eq!(lines[0], "method,t,u,n,mean_adist,mean_alor,cindex");
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[1..].iter().all(|l| l.split(',').nth(3) == Some("40")));
    }

    fs::write(p.join("broken.json"), "{\"format_version\": 99}").unwrap();
    assert_eq!(dynhaz(&["evaluate", "--bundle", "broken.json", "--data", "sim"], p).status.code(), Some(2));
}

#[test]
fn zero_jobs_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dynhaz"))
        .args(["simulate", "--out", "x"])
        .env("DYNHAZ_JOBS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

const SMALL_BENCH: &str = r#"{
  "grid": {"n": [120, 240], "T": [3]},
  "methods": ["Separate", "Superpp", "SuperppDTPO"],
  "replications": 2,
  "test_size": 30,
  "bundle": {"forest": {"num_trees": 8}}
}"#;

#[test]
fn benchmark_outputs_are_deterministic_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("bench.json"), SMALL_BENCH).unwrap();
    ok(&dynhaz(&["benchmark", "--config", "bench.json", "--out", "a", "--quiet"], p));
    ok(&dynhaz(&["--jobs", "1", "benchmark", "--config", "bench.json", "--out", "b", "--quiet"], p));
    let a = fs::read(p.join("a/results.csv")).unwrap();
    assert_eq!(a, fs::read(p.join("b/results.csv")).unwrap());
    assert_eq!(fs::read(p.join("a/main_effects.csv")).unwrap(), fs::read(p.join("b/main_effects.csv")).unwrap());

    let rows = read_results(a.as_slice()).unwrap();
    // 2 n levels x 2 replications x 3 methods x 6 cells x 3 metrics
    assert_eq!(rows.len(), 2 * 2 * 3 * 6 * 3);
    let mut keys: Vec<_> =
        rows.iter().map(|r| (r.levels.clone(), r.method, r.t, r.u, r.replication, r.metric)).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), rows.len());

    // the emitted summary matches a recomputation from the raw rows
    let effects = main_effects(&rows).unwrap();
    let text = fs::read_to_string(p.join("a/main_effects.csv")).unwrap();
    let emitted: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(emitted.len(), effects.len());
    for (line, e) in emitted.iter().zip(&effects) {
        assert_eq!(
            (line[0].as_str(), line[1].as_str(), line[2].as_str(), line[3].as_str()),
            (e.factor, e.level.as_str(), e.horizon.label(), e.metric.name())
        );
        let v: f64 = line[4].parse().unwrap();
        assert!((v - e.mean_difference).abs() <= 1e-12);
    }
    let adist_n: Vec<_> = effects.iter().filter(|e| e.factor == "n" && e.metric == Metric::Adist).collect();
    assert_eq!(adist_n.len(), 4);
    assert_eq!(fs::read_to_string(p.join("a/failures.csv")).unwrap().lines().count(), 1);
}

#[test]
fn single_cell_benchmark_has_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("one.json"),
        r#"{"grid": {"n": [100]}, "methods": ["Poolt"], "replications": 1, "test_size": 25, "bundle": {"forest": {"num_trees": 4}}}"#,
    )
    .unwrap();
    ok(&dynhaz(&["benchmark", "--config", "one.json", "--out", "o", "--quiet"], p));
    let rows = read_results(fs::read(p.join("o/results.csv")).unwrap().as_slice()).unwrap();
    let adist = rows.iter().filter(|r| r.metric == Metric::Adist).count();
    assert_eq!(adist, 4 * 5 / 2);
    assert!(!p.join("o/main_effects.csv").exists());
}

use std::path::Path;

use msclust::io::CurveOutput;
use msclust_cli::dispatch;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("msclust").chain(args.iter().copied());
    let code = dispatch(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn simulated(dir: &Path, name: &str, two_arm: bool) -> String {
    let file = path(dir, name);
    let mut args = vec!["simulate", "--clusters", "30", "--seed", "11", "-o", &file];
    if two_arm {
        args.extend(["--two-arm", "--effect", "0.5"]);
    }
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    file
}

#[test]
fn estimate_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "d.csv", false);
    let (code, out, err) = run(&[
        "estimate",
        "--target",
        "occupation:2",
        "--weighting",
        "typical",
        &data,
    ]);
    assert_eq!(code, 0, "{err}");
    let curve = CurveOutput::from_csv(&out).unwrap();
    assert_eq!(curve.meta.n_clusters, 30);
    assert!(curve
        .rows
        .iter()
        .any(|r| r.se.is_some() && r.ci_lo.is_some()));
    assert!(curve.rows.iter().all(|r| (0.0..=1.0).contains(&r.estimate)));

    let (code, json, _) = run(&["estimate", "--format", "json", &data]);
    assert_eq!(code, 0);
    assert_eq!(CurveOutput::from_json(&json).unwrap(), curve);
}

#[test]
fn band_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "d.csv", false);
    let band = path(dir.path(), "band.csv");
    let svg = path(dir.path(), "band.svg");
    let args = [
        "band", "--method", "cb", "--reps", "200", "--seed", "3", "-o", &band, &data,
    ];
    assert_eq!(run(&args).0, 0);
    let first = std::fs::read_to_string(&band).unwrap();
    assert_eq!(run(&args).0, 0);
    assert_eq!(std::fs::read_to_string(&band).unwrap(), first);
    let curve = CurveOutput::load(&band).unwrap();
    assert_eq!(curve.meta.seed, Some(3));
    assert_eq!(curve.meta.reps, Some(200));
    for r in curve.rows.iter().filter(|r| r.domain_flag) {
        let (lo, hi) = (r.band_lo.unwrap(), r.band_hi.unwrap());
        assert!(lo <= r.estimate && r.estimate <= hi);
    }
    assert_eq!(run(&["plot", &band, "-o", &svg]).0, 0);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polygon"));
}

#[test]
fn test_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "trial.csv", true);
    let args = [
        "test",
        "--target",
        "occupation:2",
        "--weight",
        "ratio",
        "--method",
        "cb",
        "--reps",
        "200",
        "--seed",
        "7",
        &data,
    ];
    let (code, a, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let (_, b, _) = run(&args);
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    let p = v["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "a.csv", false);
    let (code, stdout, _) = run(&["simulate", "--clusters", "30", "--seed", "11"]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(a).unwrap(), stdout);
}

#[test]
fn small_study_runs() {
    let (code, out, err) = run(&[
        "study",
        "--scenario",
        "table4",
        "--clusters",
        "10",
        "--datasets",
        "2",
        "--reps",
        "100",
        "--seed",
        "1",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["scenarios"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "d.csv", false);
    // Usage errors.
    assert_eq!(
        run(&["band", &data]).0,
        2,
        "randomized commands need --seed"
    );
    assert_eq!(run(&["estimate", "--target", "occupation", &data]).0, 2);
    assert_eq!(
        run(&["estimate", "--target", "transition:3,1,0", &data]).0,
        2
    );
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(
        run(&["test", "--reps", "50", "--seed", "1", &data]).0,
        1,
        "one-sample data has no arms"
    );
    // Data errors.
    assert_eq!(run(&["estimate", &path(dir.path(), "missing.csv")]).0, 1);
    let bad = path(dir.path(), "bad.csv");
    std::fs::write(
        &bad,
        "cluster,subject,arm,entry,time,from,to,status\nc1,s1,,0,1.0,3,1,1\n",
    )
    .unwrap();
    let (code, _, err) = run(&["estimate", &bad]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"), "{err}");
    // Help is not an error.
    assert_eq!(run(&["--help"]).0, 0);
}

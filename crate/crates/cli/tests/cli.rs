use std::process::Command;

use chainbinom::io::{load_csv, parse_csv};
use chainbinom::simulation::{simulate_study, substream, SimConfig};
use chainbinom_cli::{run, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(std::iter::once("chainbinom").chain(args.iter().copied()), &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

/// Rows of a CSV result as header-keyed maps.
fn table(csv_text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = csv_text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn num(row: &std::collections::HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

#[test]
fn estimate_nonvoc_households() {
    let o = cli(&["estimate", "--data", "coronahouse", "--filter", "variant=nonvoc"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let rows = table(&o.stdout);
    assert_eq!(rows.len(), 1);
    assert!((num(&rows[0], "sar_hat") - 0.28).abs() < 0.01);
    assert_eq!(rows[0]["n_households"], "38");
    assert_eq!(rows[0]["ci_method"], "wilks");
    assert!((num(&rows[0], "ci_lower") - 0.19).abs() < 0.02);
    assert!((num(&rows[0], "ci_upper") - 0.36).abs() < 0.02);
}

#[test]
fn estimate_normal_interval_is_symmetric() {
    let o = cli(&["estimate", "--data", "coronahouse", "--filter", "variant=alpha", "--ci", "normal", "--level", "0.9"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let r = &table(&o.stdout)[0];
    let (lo, hat, hi) = (num(r, "ci_lower"), num(r, "sar_hat"), num(r, "ci_upper"));
    assert!((hat - 0.61).abs() < 0.01);
    assert!(((hat - lo) - (hi - hat)).abs() < 1e-9 || hi == 1.0);
    assert_eq!(r["ci_level"], "0.9");
}

#[test]
fn glm_identity_variant_effect() {
    let o = cli(&[
        "glm",
        "--data",
        "coronahouse",
        "--predictors",
        "variant",
        "--link",
        "identity",
        "--reference",
        "variant=nonvoc",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let rows = table(&o.stdout);
    let effect = rows.iter().find(|r| r["term"] == "variant=alpha").unwrap();
    assert!((num(effect, "estimate") - 0.33).abs() < 0.01);
    assert!((num(effect, "ci_lower") - 0.14).abs() < 0.02);
    assert!((num(effect, "ci_upper") - 0.53).abs() < 0.02);

    // default reference is the first level alphabetically, flipping the sign
    let o = cli(&["glm", "--data", "coronahouse", "--predictors", "variant", "--link", "identity"]);
    let rows = table(&o.stdout);
    let effect = rows.iter().find(|r| r["term"] == "variant=nonvoc").unwrap();
    assert!((num(effect, "estimate") + 0.33).abs() < 0.01);
}

#[test]
fn pmf_sums_to_one() {
    let o = cli(&["pmf", "--s0", "5", "--i0", "1", "--sar", "0.2", "--generations", "5"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let rows = table(&o.stdout);
    assert_eq!(rows.len(), 6);
    let total: f64 = rows.iter().map(|r| num(r, "probability")).sum();
    assert!((total - 1.0).abs() < 1e-12, "{total}");
}

#[test]
fn pmf_one_generation_is_binomial() {
    let o = cli(&["pmf", "--s0", "3", "--i0", "1", "--sar", "0.2", "--generations", "1"]);
    let rows = table(&o.stdout);
    let want = [0.512, 0.384, 0.096, 0.008];
    for (r, w) in rows.iter().zip(want) {
        assert!((num(r, "probability") - w).abs() < 1e-12);
    }
}

#[test]
fn json_output_has_meta_block() {
    let o = cli(&["--format", "json", "coverage", "--replications", "20", "--n", "30", "--seed", "9", "--levels", "0.8"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let doc: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    let meta = &doc["meta"];
    assert_eq!(meta["seed"], 9);
    assert!(meta["rng"].as_str().unwrap().contains("ChaCha8"));
    assert_eq!(meta["grid"]["sizes"], "2:0.28,3:0.23,4:0.25,5:0.16,6:0.08");
    let results = doc["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    let keys: Vec<&str> = results[0].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(&keys[..3], ["method", "nominal_level", "realized_coverage"]);
}

#[test]
fn simulate_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("study.csv");
    let o = cli(&[
        "simulate",
        "--n",
        "40",
        "--sar",
        "0.35",
        "--generations",
        "2",
        "--seed",
        "17",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.is_empty());

    let loaded = load_csv(&path).unwrap();
    let sim = SimConfig {
        n_households: 40,
        sar: 0.35,
        horizon: chainbinom::Horizon::Generations(2),
        seed: 17,
        ..SimConfig::default()
    };
    let expected = simulate_study(&sim, &mut substream(17, 0)).unwrap();
    assert_eq!(loaded.records, expected);
}

#[test]
fn simulate_stdout_matches_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let to_file = cli(&["simulate", "--n", "25", "--seed", "4", "--output", path.to_str().unwrap()]);
    assert_eq!(to_file.code, EXIT_OK);
    let to_stdout = cli(&["simulate", "--n", "25", "--seed", "4"]);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), to_stdout.stdout);
    assert_eq!(parse_csv(to_stdout.stdout.as_bytes()).unwrap().records.len(), 25);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let cases: [&[&str]; 4] = [
        &["simulate", "--n", "60", "--seed", "123", "--i0", "1:0.7,2:0.3"],
        &["coverage", "--replications", "30", "--n", "40", "--seed", "5"],
        &["--format", "json", "coverage", "--replications", "30", "--n", "40", "--seed", "5"],
        &["--format", "json", "bias", "--sars", "0.3,0.7", "--s0", "4", "--i0", "1,2"],
    ];
    for args in cases {
        let a = cli(args);
        let b = cli(args);
        assert_eq!(a.code, EXIT_OK, "{args:?}: {}", a.stderr);
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
    let other = cli(&["simulate", "--n", "60", "--seed", "124", "--i0", "1:0.7,2:0.3"]);
    assert_ne!(other.stdout, cli(cases[0]).stdout);
}

#[test]
fn bias_rows_cover_requested_grid() {
    let o = cli(&["bias", "--sars", "0.5", "--s0", "3,4", "--i0", "1"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let rows = table(&o.stdout);
    assert_eq!(rows.len(), 3 + 4);
    for r in &rows {
        let d: u32 = r["generations"].parse().unwrap();
        let s0: u32 = r["s0"].parse().unwrap();
        let bias = num(r, "relative_bias");
        if d >= s0 {
            assert_eq!(bias, 0.0);
        } else {
            assert!(bias < 0.0);
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["frobnicate"][..],
        &["pmf", "--s0", "3"],
        &["pmf", "--s0", "3", "--sar", "1.5"],
        &["pmf", "--s0", "3", "--sar", "0.5", "--generations", "0"],
        &["estimate", "--data", "coronahouse", "--ci", "bootstrap"],
        &["estimate", "--data", "coronahouse", "--level", "1.2"],
        &["estimate", "--data", "coronahouse", "--filter", "colour=red"],
        &["glm", "--data", "coronahouse", "--predictors", "variant", "--link", "probit"],
        &["simulate", "--sizes", "2:0.5,three:0.5"],
    ] {
        let o = cli(args);
        assert_eq!(o.code, EXIT_USAGE, "{args:?}: {}", o.stderr);
        assert!(o.stdout.is_empty(), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,s0,i0,infected,generations\nh1,3,1,2,2\nh2,3,1,4,\n").unwrap();
    let missing = dir.path().join("missing.csv");
    for args in [
        vec!["estimate", "--data", bad.to_str().unwrap()],
        vec!["estimate", "--data", missing.to_str().unwrap()],
        vec!["estimate", "--data", "coronahouse", "--filter", "variant=delta"],
        vec!["glm", "--data", "coronahouse", "--predictors", "age"],
    ] {
        let o = cli(&args);
        assert_eq!(o.code, EXIT_DATA, "{args:?}: {}", o.stderr);
        assert!(o.stdout.is_empty());
    }
    let o = cli(&["estimate", "--data", bad.to_str().unwrap()]);
    assert!(o.stderr.contains("row 3"), "{}", o.stderr);
}

#[test]
fn numerical_failure_exits_three() {
    // every household fully infected: the MLE is 1 and has no standard error
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("all.csv");
    std::fs::write(&path, "id,s0,i0,infected,generations\nh1,2,1,2,\nh2,3,1,3,\n").unwrap();
    let o = cli(&["estimate", "--data", path.to_str().unwrap(), "--ci", "normal"]);
    assert_eq!(o.code, EXIT_NUMERIC, "{}", o.stderr);
    let o = cli(&["estimate", "--data", path.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(table(&o.stdout)[0]["sar_hat"], "1.0");
}

#[test]
fn help_goes_to_stdout() {
    let o = cli(&["--help"]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stdout.contains("estimate"));
    assert!(o.stderr.is_empty());
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_chainbinom");
    let ok = Command::new(bin).args(["pmf", "--s0", "2", "--sar", "0.3"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    assert!(ok.stderr.is_empty());
    let bad = Command::new(bin).args(["estimate", "--data", "/nonexistent/x.csv"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_DATA));
    assert!(bad.stdout.is_empty());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error"));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_magenergy"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .env_remove("MAGENERGY_THREADS")
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

const CASES: &[&[&str]] = &[
    &["field-map", "--resolution", "16", "1", "16"],
    &["dmag-curve", "--d-points", "5"],
    &["cyl-compare", "--grid", "3", "3"],
    &["dead-layer", "--d-points", "5", "--dmin-list-hz", "100,200"],
    &["detectability", "--d-points", "20"],
    &["protocol-sim", "--shots", "1000", "--seed", "11", "--tau-points", "60"],
    &["oracle-verify"],
];

#[test]
fn every_command_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for case in CASES {
        for format in ["csv", "json"] {
            let mut outputs = Vec::new();
            for run_id in 0..2 {
                let name = format!("{}-{run_id}.{format}", case[0]);
                let mut args = case.to_vec();
                args.extend(["--format", format, "--output", &name]);
                let out = run(dir.path(), &args);
                assert!(
                    out.status.success(),
                    "{args:?}: {}",
                    String::from_utf8_lossy(&out.stderr)
                );
                let manifest = read(dir.path().join(format!("{name}.manifest.json")));
                let manifest = String::from_utf8(manifest).unwrap().replace(&name, "OUT");
                outputs.push((read(dir.path().join(&name)), manifest));
            }
            assert_eq!(
                outputs[0].0, outputs[1].0,
                "{} {format} output differs between runs",
                case[0]
            );
            assert_eq!(
                outputs[0].1, outputs[1].1,
                "{} {format} manifest differs between runs",
                case[0]
            );
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for threads in ["1", "4"] {
        let name = format!("oracle-{threads}.csv");
        let out = bin()
            .current_dir(dir.path())
            .args(["oracle-verify", "--output", &name])
            .env("MAGENERGY_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        texts.push(read(dir.path().join(&name)));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn manifest_records_command_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "protocol-sim",
            "--shots",
            "500",
            "--seed",
            "3",
            "--tau-points",
            "40",
            "-o",
            "p.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&read(dir.path().join("p.csv.manifest.json"))).unwrap();
    assert_eq!(m["command"], "protocol-sim");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["shots"], 500);
    assert_eq!(m["config"]["d_m"], 1e-9);
    let s = &m["summary"];
    let miss = (s["D_fit_Hz"].as_f64().unwrap() - s["D_true_Hz"].as_f64().unwrap()).abs();
    assert!(miss < 5.0 * s["standard_error_Hz"].as_f64().unwrap(), "{s}");
}

#[test]
fn config_file_round_trips_through_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
  "command": "dead-layer",
  "d_range_m": [1e-9, 4e-9],
  "d_points": 4,
  "dmin_list_hz": [200],
  "output": "from_file.csv"
}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let a = run(dir.path(), &["dead-layer", "--config", "cfg.json"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(
        dir.path(),
        &[
            "dead-layer",
            "--d-range-m",
            "1e-9",
            "4e-9",
            "--d-points",
            "4",
            "--dmin-list-hz",
            "200",
            "-o",
            "from_flags.csv",
        ],
    );
    assert!(b.status.success());
    assert_eq!(
        read(dir.path().join("from_file.csv")),
        read(dir.path().join("from_flags.csv"))
    );
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        ("trailing.json", "{\n  \"d_m\": 1e-9,\n"),
        ("unknown.json", r#"{"d_m": 1e-9, "distance": 2, "output": "x.csv"}"#),
        ("badtype.json", r#"{"mu_r_II": "steel", "output": "x.csv"}"#),
    ];
    for (name, text) in bad {
        std::fs::write(dir.path().join(name), text).unwrap();
    }
    let before = files(dir.path());
    for (name, _) in bad {
        let out = run(dir.path(), &["dmag-curve", "--config", name]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert!(!out.stderr.is_empty());
    }
    let err = String::from_utf8(run(dir.path(), &["dmag-curve", "--config", "unknown.json"]).stderr).unwrap();
    assert!(err.contains("distance"), "{err}");
    let err = String::from_utf8(run(dir.path(), &["dmag-curve", "--config", "trailing.json"]).stderr).unwrap();
    assert!(err.contains("line"), "{err}");
    assert_eq!(files(dir.path()), before, "failed runs left files behind");
}

#[test]
fn invalid_physics_inputs_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["dmag-curve", "--mu-r-II", "-1", "-o", "x.csv"][..],
        &["field-map", "--d-m", "1e-10", "-o", "x.csv"][..],
        &["dead-layer", "-o", "x.csv", "--d-points", "0"][..],
        &["dmag-curve"][..],
        &["dmag-curve", "--bogus-flag", "1", "-o", "x.csv"][..],
    ] {
        let out = run(dir.path(), args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(files(dir.path()).is_empty());
}

#[test]
fn fit_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["protocol-sim", "--tau-points", "4", "-o", "x.csv"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(files(dir.path()).is_empty());
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["dead-layer", "-o", "missing/dir/x.csv"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(dir.path(), &["dead-layer", "--config", "nope.json", "-o", "x.csv"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn failing_oracle_case_exits_3_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = magenergy::oracle::default_regression_manifest();
    manifest.cases.truncate(1);
    manifest.cases[0].expected *= 1.01;
    std::fs::write(dir.path().join("m.json"), manifest.to_json()).unwrap();
    let out = run(
        dir.path(),
        &["oracle-verify", "--oracle-manifest", "m.json", "-o", "r.csv"],
    );
    assert_eq!(out.status.code(), Some(3));
    let report = String::from_utf8(read(dir.path().join("r.csv"))).unwrap();
    assert!(report.trim_end().ends_with("false"), "{report}");
}

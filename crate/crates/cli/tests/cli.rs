//! End-to-end runs of the `roughflow` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn roughflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn smoke_preset_is_reproducible_and_hashed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        let o = roughflow(&["run", "--preset", "smoke", "--out", path(dir), "--workers", workers]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        fs::read(a.join("aggregate.csv")).unwrap(),
        fs::read(b.join("aggregate.csv")).unwrap()
    );
    // per-run files match except for the wall-clock column
    let numeric = |d: &Path| -> Vec<String> {
        fs::read_to_string(d.join("runs/h0_r001.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(numeric(&a), numeric(&b));

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 20_240_601);
    for f in manifest["files"].as_array().unwrap() {
        let bytes = fs::read(a.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(
            f["sha256"].as_str().unwrap(),
            roughflow_cli::experiment::sha256_hex(&bytes)
        );
    }
}

#[test]
fn plot_embeds_the_aggregate_values() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("smoke");
    assert_eq!(code(&roughflow(&["run", "--preset", "smoke", "--out", path(&dir)])), 0);
    let o = roughflow(&["plot", path(&dir)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("figure_step3.svg"));

    let svg = fs::read_to_string(dir.join("figure_step3.svg")).unwrap();
    let csv = fs::read_to_string(dir.join("aggregate.csv")).unwrap();
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert!(
        svg.contains(&format!("data-values=\"{}\"", values.join(" "))),
        "values not embedded"
    );
    assert!(svg.contains("data-hurst=\"0.5\""));
}

#[test]
fn verify_passes_and_names_an_injected_fault() {
    let o = roughflow(&["verify", "--suite", "vector-fields"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));

    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    let o = roughflow(&[
        "verify",
        "--suite",
        "flow",
        "--inject-fault",
        "jacobian",
        "--out",
        path(&report),
    ]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("FAIL flow/gradient_fd"), "{out}");
    assert!(out.contains("worst entry dL/dh(l="));
    assert!(out.contains("injected fault DV_0[2,0]"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    assert_eq!(json["passed"], false);
}

#[test]
fn fbm_dump_writes_one_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w.csv");
    let o = roughflow(&[
        "fbm-dump",
        "--steps",
        "64",
        "--hurst",
        "0.3",
        "--channels",
        "2",
        "--seed",
        "5",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("t,w0,w1"));
    assert_eq!(text.lines().count(), 66);
    assert!(text.lines().nth(1).unwrap().starts_with("0,0,0"));

    let again = roughflow(&[
        "fbm-dump",
        "--steps",
        "64",
        "--hurst",
        "0.3",
        "--channels",
        "2",
        "--seed",
        "5",
    ]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\nname = \"x\"\n").unwrap();
    assert_eq!(code(&roughflow(&["run", "--config", path(&bad)])), 2);

    assert_eq!(code(&roughflow(&["plot", path(&tmp.path().join("missing"))])), 2);
    assert_eq!(code(&roughflow(&["fbm-dump", "--steps", "8", "--hurst", "1.5"])), 2);

    // every replica blows up
    let wild = tmp.path().join("wild.toml");
    fs::write(
        &wild,
        r#"
schema_version = 1
name = "wild"
steps = 10
hurst = [0.5]
replicas = 2
master_seed = 1
step_size = 1e12
iterations = 50
[family]
kind = "step3"
"#,
    )
    .unwrap();
    let o = roughflow(&["run", "--config", path(&wild), "--out", path(&tmp.path().join("wild"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn low_hurst_prints_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("low.toml");
    fs::write(
        &cfg,
        r#"
schema_version = 1
name = "low"
steps = 10
hurst = [0.2]
replicas = 1
master_seed = 1
step_size = 0.1
iterations = 3
[family]
kind = "step3"
"#,
    )
    .unwrap();
    let o = roughflow(&["run", "--config", path(&cfg), "--out", path(&tmp.path().join("low"))]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("H = 0.2"));
}

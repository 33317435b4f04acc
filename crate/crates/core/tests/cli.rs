use std::fs;
use std::process::{Command, Output};

fn csdit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csdit")).args(args).output().expect("binary runs")
}

#[test]
fn flops_prints_table_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = csdit(&["flops", "--sl", "2560", "--sr", "640", "--n-refs", "24", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("3211264000") && stdout.contains("468582400"));
    let csv = fs::read_to_string(dir.path().join("flops.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn config_file_and_flags_merge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"sl": 8, "sr": 2, "n_refs": [1, 3], "steps": 2}"#).unwrap();
    let out = csdit(&["flops", "--config", cfg.to_str().unwrap(), "--steps", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("flops.csv")).unwrap();
    // N=1 full, one step: 8*8 + 2*8*2 + 2*2
    assert!(csv.contains("1,full,8,2,1,64,32,4,100"), "{csv}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(csdit(&["nonsense"]).status.code(), Some(1));
    assert_eq!(csdit(&["flops", "--sl", "x"]).status.code(), Some(1));
    assert_eq!(csdit(&["flops", "--steps", "0", "--out", d]).status.code(), Some(1));
    assert_eq!(csdit(&["flops", "--config", "/does/not/exist.json"]).status.code(), Some(3));
    assert_eq!(
        csdit(&["pipeline", "--line-art", "/does/not/exist.png", "--synth-refs", "2", "--out", d]).status.code(),
        Some(3)
    );
    assert_eq!(csdit(&["pipeline", "--synth", "1", "--synth-refs", "0", "--out", d]).status.code(), Some(1));
    assert_eq!(csdit(&["--help"]).status.code(), Some(0));
}

#[test]
fn equiv_passes_and_corruption_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let ok = csdit(&["equiv", "--cases", "4", "--out", d]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = csdit(&["equiv", "--cases", "4", "--corrupt-cache", "--out", d]);
    assert_eq!(bad.status.code(), Some(2));
    let text = String::from_utf8(bad.stdout).unwrap();
    assert!(text.contains("FAIL oracle") && text.contains("failing_seed="));
    assert!(dir.path().join("equiv.json").exists());
}

#[test]
fn pipeline_is_repeatable_and_reads_hints() {
    let dir = tempfile::tempdir().unwrap();
    let hints = dir.path().join("hints.jsonl");
    fs::write(&hints, "{\"row\": 10, \"col\": 10, \"s\": 3, \"rgb\": [1.0, 0.0, 0.0]}\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = csdit(&[
            "pipeline", "--synth", "2", "--synth-refs", "6", "--size", "64", "--steps", "3", "--dim", "16", "--depth",
            "1", "--heads", "2", "--hints", hints.to_str().unwrap(), "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("colorized.png")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
    let inst: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/instrumentation.json")).unwrap()).unwrap();
    assert_eq!(inst["ref_pass_count"], 1);
    assert_eq!(inst["noise_steps"], 3);
    assert_eq!(inst["flops"].as_array().unwrap().len(), 3);
}

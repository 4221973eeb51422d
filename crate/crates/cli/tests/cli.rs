use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn swarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_scenario(dir: &Path, edit: impl FnOnce(String) -> String) -> PathBuf {
    let base = fs::read_to_string(shipped("self-healing.toml")).unwrap();
    let path = dir.join("scenario.toml");
    fs::write(&path, edit(base)).unwrap();
    path
}

#[test]
fn run_writes_metrics_and_trace_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = shipped("self-healing.toml");
    let o = swarm(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["metrics.csv", "trace.jsonl"]);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\n"));
    assert!(metrics.contains("\ntasks_submitted,1\n"));
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert!(trace.lines().count() > 100);
    for line in trace.lines().take(50) {
        assert!(line.starts_with('{') && line.ends_with('}'), "{line}");
    }
}

#[test]
fn same_seed_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped("self-healing.toml");
    let mut outputs = Vec::new();
    for (i, seed) in ["7", "7", "8"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = swarm(&[
            "run",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        outputs.push((
            fs::read(out.join("metrics.csv")).unwrap(),
            fs::read(out.join("trace.jsonl")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0].1, outputs[2].1);
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    for name in [
        "steady-state.toml",
        "heavy-churn.toml",
        "partition-heal.toml",
        "data-locality.toml",
        "self-healing.toml",
    ] {
        let o = swarm(&["validate", shipped(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", text(&o.stdout));
        assert_eq!(text(&o.stdout).trim(), "ok");
    }
}

#[test]
fn validate_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), |s| {
        s.replacen("time = 5.0", "time = 500.0", 1).replacen(
            "events = []",
            "events = [{ time = 10.0, node = 42, kind = \"crash\" }]",
            1,
        )
    });
    let o = swarm(&["validate", path.to_str().unwrap()]);
    assert!(!o.status.success());
    let listed = text(&o.stdout);
    assert!(listed.contains("workload[0]"), "{listed}");
    assert!(listed.contains("churn.events[0]"), "{listed}");
    assert_eq!(listed.lines().count(), 2, "{listed}");
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), |s| s.replacen("duration = 60.0", "duration = \"long\"", 1));
    let o = swarm(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("duration"), "{}", text(&o.stderr));
    assert!(!dir.path().join("o").exists(), "nothing is written for a bad config");
}

#[test]
fn compare_identical_variants_prints_zero_differences() {
    let dir = tempfile::tempdir().unwrap();
    let variants = dir.path().join("v.toml");
    fs::write(&variants, "[[variant]]\nname = \"a\"\n\n[[variant]]\nname = \"b\"\n").unwrap();
    let cfg = shipped("self-healing.toml");
    let o = swarm(&[
        "compare",
        cfg.to_str().unwrap(),
        "--variants",
        variants.to_str().unwrap(),
        "--seeds",
        "1,2",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    let (means, diffs) = stdout.split_once("\n\n").unwrap();
    assert!(means.starts_with("variant,metric,mean"));
    assert!(diffs.starts_with("seed,variant,metric,difference"));
    for row in diffs.lines().skip(1) {
        let d = row.rsplit(',').next().unwrap();
        assert!(d == "0" || d == "NaN", "{row}");
    }
}

#[test]
fn compare_writes_tables_into_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let cfg = shipped("self-healing.toml");
    let variants = shipped("variants-availability.toml");
    let o = swarm(&[
        "compare",
        cfg.to_str().unwrap(),
        "--variants",
        variants.to_str().unwrap(),
        "--seeds",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(o.stdout.is_empty());
    let means = fs::read_to_string(out.join("means.csv")).unwrap();
    assert_eq!(means.lines().filter(|l| l.contains(",tasks_submitted,")).count(), 2);
    let diffs = fs::read_to_string(out.join("differences.csv")).unwrap();
    assert!(diffs.lines().skip(1).all(|l| l.starts_with("3,availability-aware,")));
}

#[test]
fn compare_needs_two_variants() {
    let dir = tempfile::tempdir().unwrap();
    let variants = dir.path().join("v.toml");
    fs::write(&variants, "[[variant]]\nname = \"only\"\n").unwrap();
    let cfg = shipped("self-healing.toml");
    let o = swarm(&[
        "compare",
        cfg.to_str().unwrap(),
        "--variants",
        variants.to_str().unwrap(),
        "--seeds",
        "1",
    ]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("at least 2 variants"));
}

#[test]
fn generate_reproduces_shipped_files() {
    for (kind, file) in [
        ("steady-state", "steady-state.toml"),
        ("partition-heal", "partition-heal.toml"),
        ("data-locality", "data-locality.toml"),
        ("self-healing", "self-healing.toml"),
    ] {
        let o = swarm(&["generate", kind]);
        assert!(o.status.success());
        assert_eq!(text(&o.stdout), fs::read_to_string(shipped(file)).unwrap(), "{kind}");
    }
    let o = swarm(&["generate", "heavy-churn", "--nodes", "32"]);
    assert_eq!(
        text(&o.stdout),
        fs::read_to_string(shipped("heavy-churn.toml")).unwrap()
    );
}

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn cog() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cog"))
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cog-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    cog().args(args).output().unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).display().to_string()
}

fn world(dir: &Path, n: usize) -> String {
    let out = dir.join("world");
    let status = run(&["generate", "--entity-count", &n.to_string(), "--out", out.to_str().unwrap()]).status;
    assert!(status.success());
    out.display().to_string()
}

#[test]
fn version_is_machine_readable() {
    let out = run(&["--version"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("cog {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["experiment"]).status.code(), Some(1));
    assert_eq!(run(&["loss-check", &fixture("batch_mismatched.json")]).status.code(), Some(1));
    assert_eq!(run(&["loss-check", "/nonexistent/batch.json"]).status.code(), Some(2));
    assert_eq!(run(&["loss-check", &fixture("batch_perfect.json")]).status.code(), Some(0));

    let out = run(&["loss-check", &fixture("batch_ln2.json")]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("\"total_loss\": 0.6931471805599453"));
}

#[test]
fn experiment_is_deterministic_across_thread_counts() {
    let dir = scratch("determinism");
    let w = world(&dir, 300);
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.join(format!("run-{threads}"));
        let status = run(&["--threads", threads, "experiment", "--corpus", &w, "--out", out.to_str().unwrap()]).status;
        assert!(status.success());
        outputs.push((
            std::fs::read(out.join("report.json")).unwrap(),
            std::fs::read(out.join("verdicts.jsonl")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_file_with_flag_override() {
    let dir = scratch("config");
    let w = world(&dir, 120);
    let conf = dir.join("run.conf");
    std::fs::write(&conf, "# comparison run\nstrategy = blc\nstages = 1\nno_ranking = true\n").unwrap();
    let out = dir.join("out");
    let args = ["--config", conf.to_str().unwrap(), "experiment", "--corpus", &w, "--out", out.to_str().unwrap()];

    assert!(run(&args).status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["strategy"], "blc");
    assert!(report["ranking"].is_null());

    let mut overridden = args.to_vec();
    overridden.extend(["--strategy", "none"]);
    assert!(run(&overridden).status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["strategy"], "none");

    std::fs::write(&conf, "bogus_key = 1\n").unwrap();
    assert_eq!(run(&args).status.code(), Some(1));
}

#[test]
fn ingest_round_trip_and_errors() {
    let dir = scratch("ingest");
    let w = world(&dir, 60);
    let bundle = dir.join("bundle");
    let w = Path::new(&w);
    let out = run(&[
        "ingest",
        "--entities",
        w.join("entities.jsonl").to_str().unwrap(),
        "--images",
        w.join("images.jsonl").to_str().unwrap(),
        "--pairs",
        w.join("pairs.jsonl").to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["total_entities"], 60);
    for f in ["entities.jsonl", "images.jsonl", "pairs.jsonl", "summary.json"] {
        assert!(!std::fs::read(bundle.join(f)).unwrap().is_empty(), "{f}");
    }

    let dup = dir.join("dup.jsonl");
    std::fs::write(
        &dup,
        "{\"id\":\"a\",\"name\":\"A\",\"viewtimes\":1,\"concepts\":[]}\n{\"id\":\"a\",\"name\":\"B\",\"viewtimes\":1,\"concepts\":[]}\n",
    )
    .unwrap();
    let out = run(&["ingest", "--entities", dup.to_str().unwrap(), "--images", w.join("images.jsonl").to_str().unwrap(), "--out", bundle.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("dup.jsonl:2:") && err.contains("first seen on line 1"), "{err}");

    let empty = dir.join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["ingest", "--entities", empty.to_str().unwrap(), "--images", w.join("images.jsonl").to_str().unwrap(), "--out", bundle.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn select_longtail_and_rank() {
    let dir = scratch("select");
    let w = world(&dir, 100);
    let count = |args: &[&str]| String::from_utf8(run(args).stdout).unwrap().lines().count();
    let low = count(&["select-longtail", "--corpus", &w, "--threshold", "1000"]);
    let high = count(&["select-longtail", "--corpus", &w, "--threshold", "100000"]);
    let common = count(&["select-longtail", "--corpus", &w, "--common", "--threshold", "100000"]);
    assert!(low <= high);
    assert!(high + common <= 100);

    let out = run(&["rank", "--corpus", &w, "--entity", "e00003", "--top", "3"]);
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["id"], "img00003");
}

#[test]
fn serve_health_and_missing_corpus() {
    let dir = scratch("serve");
    let w = world(&dir, 60);
    let log = dir.join("events.jsonl");
    let mut child = cog()
        .args(["serve", "--corpus", &w, "--log", log.to_str().unwrap(), "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let body: serde_json::Value = ureq::get(&format!("{base}/v1/health")).call().unwrap().into_json().unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(body["status"], "ok");

    let out = run(&["serve", "--corpus", dir.join("missing").to_str().unwrap(), "--log", log.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("not found"));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn toot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toot"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("running toot")
}

fn ok(args: &[&str]) -> String {
    let out = toot(args);
    assert!(
        out.status.success(),
        "toot {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TRAIN: &str = "scenarios/tiny/train.toml";
const TEST: &str = "scenarios/tiny/test.toml";

#[test]
fn run_is_deterministic_and_matches_golden_log() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["run", "--train", TRAIN, "--test", TEST, "--strategy", "track", "--seed", "7", "--out", p(out)]);
    }
    let la = std::fs::read(a.join("run.jsonl")).unwrap();
    let lb = std::fs::read(b.join("run.jsonl")).unwrap();
    assert_eq!(la, lb);
    let golden = std::fs::read(root().join("scenarios/tiny/golden/track-seed7.run.jsonl")).unwrap();
    assert!(la == golden, "run log differs from the checked-in golden log");
    for f in ["benefit.jsonl", "timing.json"] {
        assert!(a.join(f).is_file(), "{f}");
    }
}

#[test]
fn gen_then_run_from_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = (dir.path().join("train"), dir.path().join("test"));
    let msg = ok(&["gen", TRAIN, "--out", p(&train)]);
    assert!(msg.contains("40 frames"), "{msg}");
    ok(&["gen", TEST, "--out", p(&test)]);
    assert_eq!(std::fs::read_dir(train.join("frames")).unwrap().count(), 40);
    let out = dir.path().join("run");
    let from_dirs = {
        ok(&["run", "--train", p(&train), "--test", p(&test), "--strategy", "click", "--seed", "2", "--out", p(&out)]);
        std::fs::read_to_string(out.join("run.jsonl")).unwrap()
    };
    let out2 = dir.path().join("run2");
    ok(&["run", "--train", TRAIN, "--test", TEST, "--strategy", "click", "--seed", "2", "--out", p(&out2)]);
    assert_eq!(from_dirs, std::fs::read_to_string(out2.join("run.jsonl")).unwrap());
}

#[test]
fn pf_stops_the_run_early() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    ok(&["run", "--train", TRAIN, "--test", TEST, "--strategy", "click", "--seed", "7", "--pf", "0.01", "--out", p(&out)]);
    let log = toot_core::engine::RunLog::read(std::io::BufReader::new(std::fs::File::open(out.join("run.jsonl")).unwrap())).unwrap();
    assert!(log.rounds.len() < 40);
    assert!(log.rounds.last().unwrap().p >= 0.01);
    assert!(log.rounds[..log.rounds.len() - 1].iter().all(|r| r.p < 0.01));
}

#[test]
fn compare_reports_interactions_to_pf() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let text = ok(&[
        "compare", "--train", TRAIN, "--test", TEST, "--strategy", "click", "--strategy", "track", "--seed", "1", "--out",
        p(&out),
    ]);
    assert!(text.contains("interactions to P_f"), "{text}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let avg = report["averaged"].as_array().unwrap();
    assert_eq!(avg.len(), 2);
    for a in avg {
        assert!(a.get("mean_interactions_to_pf").is_some());
    }
    assert!(out.join("runs/click-seed1.jsonl").is_file());
    assert!(out.join("runs/track-seed1.jsonl").is_file());
}

#[test]
fn report_renders_undefined_mean_itb() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("idle.csv");
    std::fs::write(&csv, "round,p,u,ctb\n0,0.1,0,\n1,0.1,0,0\n2,0.2,0,0.1\n").unwrap();
    let out = dir.path().join("rep");
    let text = ok(&["report", p(&csv), "--out", p(&out)]);
    assert!(text.contains("mean ITB undefined"), "{text}");
    let summary = std::fs::read_to_string(out.join("idle.summary.txt")).unwrap();
    assert!(summary.contains("mean_itb=undefined"), "{summary}");
    assert!(summary.contains("interactions=0"));
    assert_eq!(std::fs::read_to_string(out.join("idle.itb.csv")).unwrap(), "round,itb,ctb\n");
}

#[test]
fn report_reads_run_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep");
    let golden = root().join("scenarios/tiny/golden/track-seed7.run.jsonl");
    ok(&["report", p(&golden), "--out", p(&out)]);
    let ctb = std::fs::read_to_string(out.join("track-seed7.run.ctb.csv")).unwrap();
    assert!(ctb.starts_with("round,p,u,ctb\n0,"));
    assert_eq!(ctb.lines().count(), 42);
}

#[test]
fn errors_exit_nonzero() {
    let out = toot(&["run", "--bogus"]);
    assert!(!out.status.success());
    let out = toot(&["run", "--train", "nope.toml", "--test", TEST, "--strategy", "click", "--out", "/tmp/never"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
    let out = toot(&["run", "--train", TRAIN, "--test", TEST, "--strategy", "lasso", "--out", "/tmp/never"]);
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"kind\":\"round\"}\n").unwrap();
    let out = toot(&["report", p(&bad), "--out", p(dir.path())]);
    assert!(!out.status.success());
    let out = toot(&["compare", "--train", TRAIN, "--test", TEST, "--strategy", "click", "--out", p(dir.path())]);
    assert!(!out.status.success());
}

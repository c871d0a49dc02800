use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

const SMALL: &str = r#"
seed = 11
[data]
identities = 6
images_per_view = 2
[embed.training]
epochs = 20
[agent.env]
n_step = 3
[agent.schedule]
epochs = 2
warmup = 16
batch = 8
hidden = [32, 32]
[eval]
max_rank = 5
"#;

fn iiprl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iiprl"))
        .args(args)
        .env("IIPRL_THREADS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = iiprl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn single_error_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "expected one line, got {text:?}");
    lines[0].to_string()
}

struct SmallRun {
    _dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl SmallRun {
    fn args<'a>(&'a self, cmd: &[&'a str]) -> Vec<&'a str> {
        let mut v = cmd.to_vec();
        v.extend(["--config", self.config.to_str().unwrap(), "--out", self.out.to_str().unwrap()]);
        v
    }
}

fn small_pipeline() -> SmallRun {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, SMALL).unwrap();
    let run = SmallRun { out: dir.path().join("run"), config, _dir: dir };
    for cmd in [
        &["gen-data"][..],
        &["train-embed"],
        &["train-agent"],
        &["train-agent", "--reward", "ac"],
        &["evaluate", "--policy", "none"],
        &["evaluate", "--policy", "none", "--query", "multi"],
        &["evaluate", "--policy", "random", "--ratios", "0.9,0.5"],
        &["evaluate", "--policy", "centre", "--ratios", "0.95,0.5"],
        &["evaluate", "--policy", "truth"],
        &["evaluate", "--policy", "iiprl"],
        &["evaluate", "--policy", "iiprl", "--reward", "ac"],
        &["report"],
    ] {
        ok(&run.args(cmd));
    }
    run
}

fn shared() -> &'static SmallRun {
    static RUN: OnceLock<SmallRun> = OnceLock::new();
    RUN.get_or_init(small_pipeline)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn pipeline_writes_the_declared_layout() {
    let run = shared();
    let o = &run.out;
    for f in [
        "data/manifest.jsonl",
        "embed/head.ckpt",
        "embed/log.csv",
        "agent/rc-e5-10-20/agent.ckpt",
        "agent/rc-e5-10-20/log.csv",
        "agent/ac-e5-10-20/agent.ckpt",
        "eval/none/cmc.csv",
        "eval/none/summary.csv",
        "eval/none/cmc.svg",
        "eval/none-multi/summary.csv",
        "eval/random/summary.csv",
        "eval/centre-0.95/summary.csv",
        "eval/centre-0.50/summary.csv",
        "eval/truth/summary.csv",
        "eval/iiprl-rc-e5-10-20/summary.csv",
        "eval/iiprl-ac-e5-10-20/summary.csv",
        "report/report.csv",
        "report/ablation.csv",
    ] {
        assert!(o.join(f).is_file(), "missing {f}");
    }
    let cmc = read(&o.join("eval/none/cmc.csv"));
    assert!(cmc.starts_with("rank,accuracy\n1,"));
    assert_eq!(cmc.lines().count(), 1 + 5);
    let report = read(&o.join("report/report.csv"));
    let labels: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        labels,
        [
            "none",
            "random",
            "centre-0.95",
            "centre-0.50",
            "truth",
            "iiprl-rc-e5-10-20",
            "iiprl-ac-e5-10-20",
            "none-multi"
        ]
    );
    let log = read(&o.join("agent/rc-e5-10-20/log.csv"));
    assert!(log.starts_with("epoch,mean_return,mean_loss,mean_len,epsilon\n"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn rerun_reproduces_every_csv() {
    let a = shared();
    let b = small_pipeline();
    for f in [
        "embed/log.csv",
        "agent/rc-e5-10-20/log.csv",
        "eval/none/summary.csv",
        "eval/random/summary.csv",
        "eval/iiprl-rc-e5-10-20/summary.csv",
        "eval/iiprl-ac-e5-10-20/cmc.csv",
        "report/report.csv",
    ] {
        assert_eq!(read(&a.out.join(f)), read(&b.out.join(f)), "{f} differs");
    }
    assert_eq!(
        std::fs::read(a.out.join("agent/rc-e5-10-20/agent.ckpt")).unwrap(),
        std::fs::read(b.out.join("agent/rc-e5-10-20/agent.ckpt")).unwrap()
    );
}

#[test]
fn seed_flag_changes_the_data() {
    let run = shared();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("other");
    ok(&["gen-data", "--config", run.config.to_str().unwrap(), "--seed", "12", "--out", out.to_str().unwrap()]);
    let a = std::fs::read(out.join("data/images").read_dir().unwrap().map(|e| e.unwrap().path()).min().unwrap()).unwrap();
    let b = std::fs::read(run.out.join("data/images").read_dir().unwrap().map(|e| e.unwrap().path()).min().unwrap()).unwrap();
    assert_ne!(a, b);
}

#[test]
fn refine_emits_window_json_and_crop() {
    let run = shared();
    let image = run.out.join("data/images").read_dir().unwrap().map(|e| e.unwrap().path()).min().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("probe.ppm");
    std::fs::copy(&image, &copy).unwrap();
    let before = std::fs::read(&copy).unwrap();
    ok(&run.args(&["refine", "--image", copy.to_str().unwrap()]));
    assert_eq!(std::fs::read(&copy).unwrap(), before, "refine must not modify its input");
    let json: serde_json::Value = serde_json::from_str(&read(&run.out.join("refine/probe.json"))).unwrap();
    let w: Vec<f64> = json["window"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(w.len(), 4);
    assert!(w[0] < w[2] && w[1] < w[3]);
    assert_eq!(json["agent"], "rc-e5-10-20");
    assert!(json["actions"].as_array().unwrap().len() <= 3);
    let crop = iiprl_core::imaging::decode_ppm(&std::fs::read(run.out.join("refine/probe.ppm")).unwrap()).unwrap();
    assert_eq!(crop.width(), ((w[2] * 64.0).round() - (w[0] * 64.0).round()) as usize);
    assert_eq!(crop.height(), ((w[3] * 128.0).round() - (w[1] * 128.0).round()) as usize);
}

#[test]
fn oracle_emits_best_sequence_json() {
    let run = shared();
    ok(&run.args(&["oracle", "--index", "0,1"]));
    for i in 0..2 {
        let path = run.out.join(format!("oracle/train-{i:05}.json"));
        let json: serde_json::Value = serde_json::from_str(&read(&path)).unwrap();
        assert_eq!(json["index"], i);
        assert_eq!(json["reward"], "rc");
        assert!(json["return"].as_f64().unwrap() >= 0.0, "terminating at once scores 0");
        assert!(json["actions"].as_array().unwrap().len() <= 3);
        assert_eq!(json["window"].as_array().unwrap().len(), 4);
    }
    let out = iiprl(&run.args(&["oracle", "--index", "9999"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(single_error_line(&out).contains("outside"));
}

#[test]
fn commands_do_not_touch_their_inputs() {
    let run = shared();
    let manifest = read(&run.out.join("data/manifest.jsonl"));
    let head = std::fs::read(run.out.join("embed/head.ckpt")).unwrap();
    ok(&run.args(&["evaluate", "--policy", "centre", "--ratios", "0.8"]));
    assert_eq!(read(&run.out.join("data/manifest.jsonl")), manifest);
    assert_eq!(std::fs::read(run.out.join("embed/head.ckpt")).unwrap(), head);
}

#[test]
fn missing_prerequisites_name_the_command_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (cmd, hint) in [
        (&["train-embed"][..], "run gen-data first"),
        (&["evaluate"], "run gen-data first"),
        (&["report"], "run evaluate first"),
    ] {
        let mut args = cmd.to_vec();
        args.extend(["--out", out]);
        let res = iiprl(&args);
        assert_eq!(res.status.code(), Some(1), "{cmd:?}");
        let line = single_error_line(&res);
        assert!(line.starts_with("error: missing-prerequisite: "), "{line}");
        assert!(line.ends_with(hint), "{line}");
    }

    let run = shared();
    let res = iiprl(&run.args(&["evaluate", "--policy", "iiprl", "--reward", "rank"]));
    let line = single_error_line(&res);
    assert!(line.ends_with("run train-agent --reward rank --scales 5,10,20 first"), "{line}");
    let res = iiprl(&run.args(&["refine", "--image", "/nonexistent.ppm"]));
    assert_eq!(res.status.code(), Some(1));
    assert!(single_error_line(&res).starts_with("error: failed: reading /nonexistent.ppm"));
}

#[test]
fn bad_configuration_and_flags_are_single_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[agent.schedule]\nepoch = 3\n").unwrap();
    let res = iiprl(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let line = single_error_line(&res);
    assert!(line.contains("unknown field `epoch`"), "{line}");

    let res = iiprl(&["train-agent", "--reward", "xyz"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(single_error_line(&res).starts_with("error: usage: "));

    let res = iiprl(&["gen-data", "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success());
    let res = Command::new(env!("CARGO_BIN_EXE_iiprl"))
        .args(["gen-data", "--out", dir.path().to_str().unwrap()])
        .env("IIPRL_THREADS", "zero")
        .output()
        .unwrap();
    assert!(single_error_line(&res).contains("IIPRL_THREADS"));
}

#[test]
fn default_pipeline_reaches_a_baseline_evaluation_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let start = Instant::now();
    ok(&["gen-data", "--out", out]);
    ok(&["train-embed", "--out", out]);
    ok(&["evaluate", "--policy", "none", "--out", out]);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "{elapsed:?}");
    let summary = read(&dir.path().join("eval/none/summary.csv"));
    assert!(summary.contains("probes,100\n"), "{summary}");
}

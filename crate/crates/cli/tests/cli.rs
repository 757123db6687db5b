use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[graph]
num_nodes = 30

[sim]
horizon = 6

[model]
latent_dim = 4
encoder_hidden = 4
head_hidden = 4

[train]
epochs = 3
substeps = 1
learning_rate = 0.001

[eval]
horizon = 5
probe_iterations = 10
"#;

fn godeflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_godeflow"))
        .args(args)
        .env_remove("GODEFLOW_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Work {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), TINY).unwrap();
        Work { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("run.toml")
    }

    fn simulate(&self, name: &str) -> PathBuf {
        let out = self.path(name);
        let o = godeflow(&["simulate", "--config", s(&self.config()), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    }

    fn train(&self, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let config = self.config();
        let mut args = vec!["train", "--config", s(&config), "--data", s(data), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = godeflow(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_prints_summary_and_is_deterministic() {
    let w = Work::new();
    let o = godeflow(&["simulate", "--config", s(&w.config()), "--out", s(&w.path("a"))]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for key in ["treatment rate", "mean G", "clamp events"] {
        assert!(text.contains(key), "{text}");
    }
    let b = w.simulate("b");
    assert_eq!(read_dir_bytes(&w.path("a")), read_dir_bytes(&b));
    assert!(w.path("a").join("X.csv").is_file());
}

#[test]
fn simulate_refuses_nonempty_dir_without_force() {
    let w = Work::new();
    let out = w.path("data");
    std::fs::create_dir(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "x").unwrap();
    let o = godeflow(&["simulate", "--config", s(&w.config()), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.join("manifest.toml").exists());
    let o = godeflow(&["simulate", "--config", s(&w.config()), "--out", s(&out), "--force"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn forced_rerun_is_idempotent() {
    let w = Work::new();
    let data = w.simulate("data");
    let first = read_dir_bytes(&data);
    let o = godeflow(&["simulate", "--config", s(&w.config()), "--out", s(&data), "--force"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_dir_bytes(&data), first);
}

#[test]
fn config_errors_exit_2() {
    let w = Work::new();
    let bad = w.path("bad.toml");
    std::fs::write(&bad, "[sim]\ngama_a = 3.0\n").unwrap();
    assert_eq!(code(&godeflow(&["simulate", "--config", s(&bad), "--out", s(&w.path("d"))])), 2);
    assert_eq!(
        code(&godeflow(&["simulate", "--config", s(&w.path("missing.toml")), "--out", s(&w.path("d"))])),
        2
    );
    assert_eq!(code(&godeflow(&["frobnicate"])), 2);
}

#[test]
fn train_writes_checkpoint_and_history() {
    let w = Work::new();
    let data = w.simulate("data");
    let model = w.train(&data, "model", &["--epochs", "1"]);
    for f in ["params.toml", "params.bin", "history.csv", "run.toml"] {
        assert!(model.join(f).is_file(), "{f}");
    }
    let hist = std::fs::read_to_string(model.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 2);
    let manifest = std::fs::read_to_string(model.join("run.toml")).unwrap();
    assert!(manifest.contains("[inputs]"));
    assert!(manifest.contains("\"X.csv\""));
}

#[test]
fn train_variant_flag_maps_to_alphas() {
    let w = Work::new();
    let data = w.simulate("data");
    for (v, expect) in [("N", "0, 0"), ("T", "1, 0"), ("I", "0, 1"), ("full", "0.5, 0.5")] {
        let out = w.path(&format!("m_{v}"));
        let o = godeflow(&[
            "train",
            "--config",
            s(&w.config()),
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--variant",
            v,
        ]);
        assert_eq!(code(&o), 0);
        assert!(String::from_utf8(o.stdout).unwrap().contains(expect), "{v}");
    }
    let o = godeflow(&["train", "--data", s(&data), "--out", s(&w.path("x")), "--variant", "Q"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_without_dataset_exits_2() {
    let w = Work::new();
    let o = godeflow(&[
        "train",
        "--config",
        s(&w.config()),
        "--data",
        s(&w.path("nowhere")),
        "--out",
        s(&w.path("m")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn evaluate_reports_step_columns() {
    let w = Work::new();
    let data = w.simulate("data");
    let model = w.train(&data, "model", &[]);
    let report = w.path("report.csv");
    let o = godeflow(&[
        "evaluate",
        "--config",
        s(&w.config()),
        "--checkpoint",
        s(&model),
        "--data",
        s(&data),
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("5-step") && stdout.contains("overall"));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("step_1,step_2,step_3,step_4,step_5,overall,"));
    assert!(w.path("report_degrees.csv").is_file());

    let zero = w.path("zero.csv");
    let o = godeflow(&[
        "evaluate",
        "--config",
        s(&w.config()),
        "--checkpoint",
        s(&model),
        "--data",
        s(&data),
        "--flip-ratio",
        "0",
        "--report",
        s(&zero),
    ]);
    assert_eq!(code(&o), 0);
    let row = std::fs::read_to_string(&zero).unwrap();
    let flipped = row.lines().nth(1).unwrap().split(',').nth(9).unwrap().to_string();
    assert_eq!(flipped, "0");

    let o = godeflow(&["evaluate", "--checkpoint", s(&model), "--data", s(&data), "--horizon", "9"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_checkpoint_magic_exits_3() {
    let w = Work::new();
    let data = w.simulate("data");
    let model = w.train(&data, "model", &["--epochs", "1"]);
    let mut blob = std::fs::read(model.join("params.bin")).unwrap();
    blob[..8].copy_from_slice(b"NOTPARAM");
    std::fs::write(model.join("params.bin"), blob).unwrap();
    let o = godeflow(&["evaluate", "--checkpoint", s(&model), "--data", s(&data)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8(o.stderr).unwrap().contains("magic"));
}

#[test]
fn export_latents_rows_and_header() {
    let w = Work::new();
    let data = w.simulate("data");
    let model = w.train(&data, "model", &["--epochs", "1"]);
    let out = w.path("latents.csv");
    let o = godeflow(&[
        "export-latents",
        "--checkpoint",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "node,timestamp,z0,z1,z2,z3,A,G");
    assert_eq!(text.lines().count(), 1 + 30 * 7);
}

fn sweep_rows(w: &Work, kind: &str, grid: &str, name: &str) -> (i32, Vec<String>) {
    let out = w.path(name);
    let o = godeflow(&[
        "sweep",
        "--config",
        s(&w.config()),
        "--kind",
        kind,
        "--grid",
        grid,
        "--out",
        s(&out),
        "--jobs",
        "2",
    ]);
    let lines = std::fs::read_to_string(out.join("sweep.csv"))
        .map(|t| t.lines().map(String::from).collect())
        .unwrap_or_default();
    (code(&o), lines)
}

#[test]
fn confounding_sweep_has_eleven_points() {
    let w = Work::new();
    let (c, lines) = sweep_rows(&w, "confounding", "0..10", "conf");
    assert_eq!(c, 0);
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("confounding,status,"));
    assert!(lines[1].starts_with("0.0,"));
}

#[test]
fn alpha_grid_sweep_has_36_rows() {
    let w = Work::new();
    let (c, lines) = sweep_rows(&w, "alpha_grid", "0:1:6", "alpha");
    assert_eq!(c, 0);
    assert_eq!(lines.len(), 37);
    assert!(lines[0].starts_with("alpha_a,alpha_g,status,"));
}

#[test]
fn empty_or_unknown_sweep_exits_2() {
    let w = Work::new();
    assert_eq!(sweep_rows(&w, "flip_ratio", "", "e").0, 2);
    assert_eq!(sweep_rows(&w, "flip_ratio", "3..1", "e").0, 2);
    assert_eq!(sweep_rows(&w, "temperature", "0..2", "e").0, 2);
}

#[test]
fn end_to_end_runs_are_byte_identical() {
    let w = Work::new();
    let mut runs = Vec::new();
    for tag in ["a", "b"] {
        let data = w.simulate(&format!("data_{tag}"));
        let model = w.train(&data, &format!("model_{tag}"), &[]);
        let report = w.path(&format!("report_{tag}.csv"));
        let o = godeflow(&[
            "evaluate",
            "--config",
            s(&w.config()),
            "--checkpoint",
            s(&model),
            "--data",
            s(&data),
            "--report",
            s(&report),
        ]);
        assert_eq!(code(&o), 0);
        runs.push((
            read_dir_bytes(&data),
            read_dir_bytes(&model),
            std::fs::read(&report).unwrap(),
        ));
    }
    assert!(runs[0] == runs[1]);
}

#[test]
fn seed_env_overrides_config_seed() {
    let w = Work::new();
    let base = w.simulate("base");
    let run = |seed: &str, name: &str| {
        let out = w.path(name);
        let o = Command::new(env!("CARGO_BIN_EXE_godeflow"))
            .args(["simulate", "--config", s(&w.config()), "--out", s(&out)])
            .env("GODEFLOW_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        out
    };
    let same = run("3", "same");
    let other = run("4", "other");
    assert_eq!(read_dir_bytes(&base), read_dir_bytes(&same));
    assert_ne!(
        std::fs::read(base.join("X.csv")).unwrap(),
        std::fs::read(other.join("X.csv")).unwrap()
    );
}

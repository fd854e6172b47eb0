//! The command-line contract: outputs, determinism and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motionmae::ppm::read_ppm;

const BIN: &str = env!("CARGO_BIN_EXE_motionmae");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("MOTIONMAE_THREADS").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small model on 4x8x8 clips: 8 tokens of dimension 32.
fn small_config(extra: &str) -> String {
    format!(
        r#"{{"out_dir": "out", {extra}
            "data": {{"dataset_dir": "data", "frames": 4, "clip_len": 4, "height": 8, "width": 8}},
            "model": {{"encoder": {{"depth": 1, "embed_dim": 16, "heads": 2}},
                       "decoder": {{"depth": 1, "embed_dim": 16, "heads": 2}}}},
            "train": {{"total_steps": 4, "batch_size": 2, "lr": 1e-3}},
            "finetune": {{"total_steps": 4, "batch_size": 4}}}}"#
    )
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cfg.json"), config).unwrap();
        let ws = Workspace { dir };
        let o = ws.run(&["gen-data", "--config", "cfg.json", "--count", "8", "--out", "data"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        ws
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        run(self.dir.path(), args)
    }

    fn write(&self, name: &str, text: &str) {
        std::fs::write(self.path(name), text).unwrap();
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_writes_count_clips_deterministically() {
    let ws = Workspace::new(&small_config(""));
    let clips = std::fs::read_dir(ws.path("data/clips")).unwrap().count();
    let labels = std::fs::read_to_string(ws.path("data/labels.tsv")).unwrap();
    assert_eq!((clips, labels.lines().count()), (8, 8));
    let o = ws.run(&["gen-data", "--config", "cfg.json", "--count", "8", "--out", "again"]);
    assert_eq!(code(&o), 0);
    assert_eq!(dir_bytes(&ws.path("data")), dir_bytes(&ws.path("again")));
    let o = ws.run(&["gen-data", "--config", "cfg.json", "--count", "8", "--out", "val", "--split", "val"]);
    assert_eq!(code(&o), 0);
    assert_ne!(dir_bytes(&ws.path("data")), dir_bytes(&ws.path("val")));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let ws = Workspace::new(&small_config(""));
    ws.write("bad.json", r#"{"mask": {"strategy": "diagonal"}}"#);
    let o = ws.run(&["gen-data", "--config", "bad.json", "--count", "1", "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mask.strategy"), "{}", stderr(&o));
    ws.write("typo.json", r#"{"trian": {}}"#);
    let o = ws.run(&["pretrain", "--config", "typo.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("trian"));
    let o = ws.run(&["pretrain", "--config", "missing.json"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn help_documents_defaults() {
    let o = run(Path::new("."), &["pretrain", "--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for key in ["mask.ratio", "train.lr", "targets.lambda", "MOTIONMAE_THREADS"] {
        assert!(text.contains(key), "{key} missing from help");
    }
}

#[test]
fn pretrain_emits_checkpoint_csv_and_final_loss() {
    let ws = Workspace::new(&small_config(""));
    let o = ws.run(&["pretrain", "--config", "cfg.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("final_loss=")).map(str::to_owned).unwrap();
    assert!(line["final_loss=".len()..].parse::<f64>().unwrap().is_finite());
    assert!(ws.path("out/checkpoint.mmck").exists());
    let csv = std::fs::read_to_string(ws.path("out/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(csv.lines().skip(1).all(|l| l.split(',').all(|f| !f.is_empty())));
}

#[test]
fn frame_only_pretraining_leaves_loss_time_empty() {
    let ws = Workspace::new(&small_config(r#""targets": {"kind": "frame"},"#));
    let o = ws.run(&["pretrain", "--config", "cfg.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(ws.path("out/loss.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 4);
        assert!(!f[2].is_empty() && f[3].is_empty(), "{row}");
    }
}

#[test]
fn missing_dataset_exits_3() {
    let ws = Workspace::new(&small_config(""));
    std::fs::remove_dir_all(ws.path("data")).unwrap();
    let o = ws.run(&["pretrain", "--config", "cfg.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_4() {
    let ws = Workspace::new(&small_config(""));
    let cfg = small_config("").replace(r#""lr": 1e-3"#, r#""lr": 1e30, "warmup_steps": 0"#);
    ws.write("hot.json", &cfg);
    let o = ws.run(&["pretrain", "--config", "hot.json"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn finetune_reports_json_and_rejects_foreign_checkpoints() {
    let ws = Workspace::new(&small_config(""));
    let o = ws.run(&["finetune", "--config", "cfg.json", "--init", "none"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let top1 = report["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert_eq!(report["n"], 8);
    assert!(ws.path("out/metrics.json").exists());

    assert_eq!(code(&ws.run(&["pretrain", "--config", "cfg.json"])), 0);
    let o = ws.run(&["finetune", "--config", "cfg.json", "--init", "out/checkpoint.mmck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    ws.write("wide.json", &small_config("").replace(r#""embed_dim": 16, "heads": 2}},"#, r#""embed_dim": 24, "heads": 2}},"#));
    let o = ws.run(&["finetune", "--config", "wide.json", "--init", "out/checkpoint.mmck"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("digest"), "{}", stderr(&o));
}

#[test]
fn reconstruct_writes_one_ppm_per_ratio() {
    let ws = Workspace::new(&small_config(""));
    let o = ws.run(&["reconstruct", "--config", "cfg.json", "--ratio", "0.9,0.95"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["out/recon_0.9.ppm", "out/recon_0.95.ppm"] {
        let img = read_ppm(&ws.path(name)).unwrap();
        assert_eq!((img.width, img.height), (4 * 8, 4 * 8));
    }
    let o = ws.run(&["reconstruct", "--config", "cfg.json", "--ratio", "1.0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_and_reports_every_check() {
    let o = run(Path::new("."), &["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("end_to_end_masked_objective"));
    assert!(text.contains("matmul"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn ablate_sweeps_the_axis_and_rejects_unknown_ones() {
    let ws = Workspace::new(&small_config(r#""ablate": {"gap": [2, 1]},"#));
    let o = ws.run(&["ablate", "--config", "cfg.json", "--axis", "depth"]);
    assert_eq!(code(&o), 2);
    let o = ws.run(&["ablate", "--config", "cfg.json", "--axis", "gap"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(ws.path("out/ablate_gap.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "setting,top1");
    assert_eq!(rows.len(), 1 + 2);
    assert!(rows[1].starts_with("1,") && rows[2].starts_with("2,"));
}

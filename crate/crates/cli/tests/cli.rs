use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn esk(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esk"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ESK_SEED")
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = esk(cwd, args);
    assert!(out.status.success(), "esk {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = "manifest = data/manifest.csv\noutput_dir = out\nseed = 2\nnet.preset = test\n\
                      net.embed_dim = 8\nfinetune.max_epochs = 3\n";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "data", "--per-class", "8", "--duration", "0.4", "--seed", "3"]);
    fs::write(dir.path().join("cfg.txt"), CONFIG).unwrap();
    dir
}

#[test]
fn stepwise_commands_chain() {
    let dir = setup();
    let d = dir.path();
    let manifest = fs::read_to_string(d.join("data/manifest.csv")).unwrap();
    assert!(manifest.starts_with("id,path,label,split\n"));
    assert_eq!(manifest.lines().count(), 25);

    ok(d, &["vad", "--in", "data/c0_0000.wav", "--out", "v.wav", "--mode", "2", "--frame-ms", "30", "--hangover", "2"]);
    assert_eq!(&fs::read(d.join("v.wav")).unwrap()[..4], b"RIFF");
    ok(d, &["features", "--in", "data/c1_0001.wav", "--kind", "mfcc", "--out", "x.eskf"]);
    assert_eq!(&fs::read(d.join("x.eskf")).unwrap()[..4], b"ESKF");

    ok(d, &["finetune", "--config", "cfg.txt", "--out", "m.eskm", "--history", "h.csv"]);
    assert_eq!(&fs::read(d.join("m.eskm")).unwrap()[..4], b"ESKM");
    assert!(fs::read_to_string(d.join("h.csv")).unwrap().starts_with("epoch,train_loss,devel_uar,best\n"));

    ok(d, &["embed", "--model", "m.eskm", "--manifest", "data/manifest.csv", "--out", "e.csv"]);
    let emb = fs::read_to_string(d.join("e.csv")).unwrap();
    assert!(emb.starts_with("id,8\n"));
    assert_eq!(emb.lines().count(), 25);

    ok(d, &["svm-train", "--embeddings", "e.csv", "--manifest", "data/manifest.csv", "--C", "1.0", "--out", "s.esks"]);
    assert_eq!(&fs::read(d.join("s.esks")).unwrap()[..4], b"ESKS");
    ok(d, &["predict", "--svm", "s.esks", "--embeddings", "e.csv", "--manifest", "data/manifest.csv", "--split", "devel", "--out", "p.csv"]);
    let preds = fs::read_to_string(d.join("p.csv")).unwrap();
    assert!(preds.starts_with("id,label\n"));
    assert_eq!(preds.lines().count(), 1 + 3 * 2);

    let report = ok(d, &["eval", "--truth", "data/manifest.csv", "--pred", "p.csv", "--classes", "3", "--report", "r.csv"]);
    assert_eq!(fs::read_to_string(d.join("r.csv")).unwrap(), report);
    assert!(report.contains("uar,") && report.contains("macro_precision,") && report.contains("macro_f1,"));

    // voting three copies of one system reproduces it
    ok(d, &["fuse", "--mode", "vote", "--pred", "p.csv", "p.csv", "p.csv", "--out", "v.csv"]);
    assert_eq!(fs::read_to_string(d.join("v.csv")).unwrap(), preds);
    ok(d, &["fuse", "--mode", "concat", "--embeddings", "e.csv", "e.csv", "--out", "c.csv"]);
    assert!(fs::read_to_string(d.join("c.csv")).unwrap().starts_with("id,16\n"));
}

#[test]
fn run_caches_and_honours_seed_env() {
    let dir = setup();
    let d = dir.path();
    let first = ok(d, &["run", "--config", "cfg.txt"]);
    assert!(first.contains("finetune         ran"));
    let second = ok(d, &["run", "--config", "cfg.txt"]);
    assert!(second.contains("finetune         cached"));
    assert!(!second.contains(" ran\n"));

    let out = Command::new(env!("CARGO_BIN_EXE_esk"))
        .args(["run", "--config", "cfg.txt", "--out-dir", "reseeded"])
        .current_dir(d)
        .env("ESK_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success());
    let a = fs::read(d.join("out/finetuned.eskm")).unwrap();
    let b = fs::read(d.join("reseeded/finetuned.eskm")).unwrap();
    assert_ne!(a, b);
    let config = fs::read_to_string(d.join("reseeded/effective_config.txt")).unwrap();
    assert!(config.contains("seed = 99"), "{config}");
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = setup();
    let d = dir.path();
    let out = esk(d, &["svm-train", "--embeddings", "missing.csv", "--manifest", "data/manifest.csv", "--out", "s.esks"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    fs::write(d.join("bad.txt"), "manifest = data/manifest.csv\noutput_dir = out\nbogus = 1\n").unwrap();
    let out = esk(d, &["run", "--config", "bad.txt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = esk(d, &["fuse", "--mode", "vote", "--pred", "only.csv", "--out", "f.csv"]);
    assert!(!out.status.success());
}

//! Exit-code contract of the `crossview` binary: 0 success, 1 I/O,
//! 2 validation, 3 numerical failure.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crossview"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn generate_succeeds_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    write(&cfg, "{\"cases\": 3, \"seed\": 5}");
    let out = dir.path().join("data.jsonl");
    let status = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.exists());
    assert!(dir.path().join("data.jsonl.manifest.json").exists());
}

#[test]
fn missing_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["generate", "--config"])
        .arg(dir.path().join("nope.json"))
        .arg("--out")
        .arg(dir.path().join("data.jsonl"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    // missing the required `cases` field
    write(&cfg, "{\"seed\": 5}");
    let status = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("data.jsonl"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    write(&bad, "{\"cases\": 3, \"seed\": 5, \"no_such_field\": 1}");
    let status = bin()
        .args(["generate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("data2.jsonl"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn gradcheck_passes_by_default_and_fails_when_corrupted() {
    let status = bin().args(["gradcheck"]).output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    let status = bin().args(["gradcheck", "--corrupt"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn eval_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let gen8 = dir.path().join("gen8.json");
    write(&gen8, "{\"cases\": 2, \"seed\": 1, \"d_f\": 8, \"d_sig\": 4}");
    let gen16 = dir.path().join("gen16.json");
    write(&gen16, "{\"cases\": 2, \"seed\": 1, \"d_f\": 16, \"d_sig\": 4}");
    let train_cfg = dir.path().join("train.json");
    write(&train_cfg, "{\"epochs\": 1, \"n_blocks\": 1, \"d_k\": 4, \"d_emb\": 8}");

    let data8 = dir.path().join("d8.jsonl");
    let data16 = dir.path().join("d16.jsonl");
    let ckpt = dir.path().join("model.json");
    for (cfg, out) in [(&gen8, &data8), (&gen16, &data16)] {
        let st = bin()
            .args(["generate", "--config"])
            .arg(cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
    }
    let st = bin()
        .args(["train", "--dataset"])
        .arg(&data8)
        .arg("--config")
        .arg(&train_cfg)
        .arg("--out")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    let st = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&data16)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen.json");
    write(&gen, "{\"cases\": 4, \"seed\": 2, \"d_f\": 8, \"d_sig\": 4}");
    let data = dir.path().join("d.jsonl");
    let st = bin()
        .args(["generate", "--config"])
        .arg(&gen)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    let train_cfg = dir.path().join("train.json");
    write(
        &train_cfg,
        "{\"epochs\": 5, \"n_blocks\": 1, \"d_k\": 4, \"d_emb\": 8, \"learning_rate\": 1e18}",
    );
    let st = bin()
        .args(["train", "--dataset"])
        .arg(&data)
        .arg("--config")
        .arg(&train_cfg)
        .arg("--out")
        .arg(dir.path().join("model.json"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
}

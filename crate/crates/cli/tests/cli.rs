use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smattn_core::checkpoint::Checkpoint;
use smattn_core::data::{EventSequence, Holdout, SplitPlan};
use smattn_core::model::{names, Model, ModelConfig};
use smattn_core::numeric::NumArray;

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn smattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smattn")).args(args).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gradcheck_passes_on_toy_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = smattn(&["gradcheck", "--config", toy().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "gradcheck");
    assert_eq!(manifest["outputs"][0], "gradcheck.json");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(smattn(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(smattn(&["gradcheck", "--threads", "0", "--out", d]).status.code(), Some(1));
    let bad_key = smattn(&["train", "--config", toy().to_str().unwrap(), "--set", "train.bogus=1", "--out", d]);
    assert_eq!(bad_key.status.code(), Some(2));
    let bad_sim = smattn(&["ingest", "--config", toy().to_str().unwrap(), "--set", "simulate.bogus=1", "--out", d]);
    assert_eq!(bad_sim.status.code(), Some(2));
    let no_seed = smattn(&["train", "--set", "simulate.users=5", "--out", d]);
    assert_eq!(no_seed.status.code(), Some(2));
    let missing = smattn(&["evaluate", "--checkpoint", "/nonexistent/ck.json", "--out", d]);
    assert_eq!(missing.status.code(), Some(2));
}

/// A model whose head for item 3 dominates every other head, so item 3
/// ranks first for any context.
fn oracle_model(n: usize) -> Model {
    let cfg = ModelConfig {
        n_items: n,
        d_e: 2,
        d_pe: 2,
        d: 4,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, None, 0).unwrap();
    let w = model.params.get_mut(names::MOD_W).unwrap();
    *w = NumArray::zeros(w.rows(), w.cols());
    let mu = (0..n).map(|i| if i == 3 { 50.0 } else { -50.0 }).collect();
    model.params.insert(names::MOD_MU, NumArray::row_vector(mu));
    model
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let n = 12;
    let ck_path = dir.path().join("oracle.json");
    Checkpoint::new(oracle_model(n), 0, serde_json::Value::Null).save(&ck_path).unwrap();
    let users = [
        EventSequence::new("a", vec![0.0, 1.0, 2.5], vec![0, 7, 3]).unwrap(),
        EventSequence::new("b", vec![0.0, 4.0], vec![11, 3]).unwrap(),
    ];
    let holdouts: Vec<Holdout> = users
        .iter()
        .enumerate()
        .map(|(u, s)| Holdout::from_sequence(u, s).unwrap())
        .collect();
    let split = SplitPlan {
        train: vec![],
        validation: vec![],
        test: vec![0, 1],
        validation_holdouts: vec![],
        test_holdouts: holdouts,
        seed: 0,
    };
    let split_path = dir.path().join("split.json");
    std::fs::write(&split_path, serde_json::to_string(&split).unwrap()).unwrap();
    let out_dir = dir.path().join("eval");
    let out = smattn(&[
        "evaluate",
        "--checkpoint",
        ck_path.to_str().unwrap(),
        "--split",
        split_path.to_str().unwrap(),
        "--set",
        "train.eval.k=1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = json(&out_dir.join("metrics.json"));
    assert_eq!(metrics["hit_rate"], 1.0);
    assert_eq!(metrics["ndcg"], 1.0);
    assert_eq!(metrics["users"], 2);
}

#[test]
fn identical_arms_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = smattn(&[
        "ablate",
        "--config",
        toy().to_str().unwrap(),
        "--set",
        "ablate.seeds=[4]",
        "--set",
        "model.modulation={kind = \"constant\", value = 1.0}",
        "--set",
        "train.gamma=0.0",
        "--set",
        "train.epochs=2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = json(&dir.path().join("ablation.json"));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        assert_eq!(r["per_seed"], rows[0]["per_seed"]);
    }
}

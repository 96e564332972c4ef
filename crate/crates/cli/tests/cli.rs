use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use acvis::checkpoint::Checkpoint;
use acvis::corpus::sha256_hex;
use acvis::eval::EvalReport;
use acvis::format::TrackFile;
use acvis_core::Model;
use serde_json::json;

fn acvis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acvis")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = acvis(args);
    assert!(out.status.success(), "acvis {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Runs a command that must fail and returns its single stderr line.
fn fails(args: &[&str], code: &str) -> String {
    let out = acvis(args);
    assert!(!out.status.success(), "acvis {args:?} should fail");
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(err.trim_end().lines().count(), 1, "error must be one line: {err:?}");
    assert!(err.starts_with(&format!("{code}: ")), "expected {code}, got {err:?}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A config small enough for quick end-to-end runs.
fn small_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = json!({
        "model": {"d_model": 8, "frame_queries": 4, "video_queries": 4, "height": 16, "width": 16,
                  "decoder_layers": 2, "acqg_layers": 1, "window": 3},
        "corpus": {"train_videos": 4, "val_videos": 2, "frames": 4, "height": 16, "width": 16,
                   "min_radius": 2, "max_radius": 4, "audio_dim": 8},
        "train": {"steps": 3, "batch_size": 2, "seed": 5}
    });
    merge(&mut cfg, extra);
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn merge(a: &mut serde_json::Value, b: serde_json::Value) {
    match (a, b) {
        (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

fn gen(dir: &Path, cfg: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["gen-data", "--config", s(cfg), "--seed", "3", "--out", s(&data)]);
    data
}

fn log_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,L_frame,L_video,L_sim,L_SAOC,total");
    lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
}

#[test]
fn gen_data_is_deterministic_and_creates_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let a = dir.path().join("nested/a");
    let b = dir.path().join("b");
    ok(&["gen-data", "--config", s(&cfg), "--seed", "11", "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&cfg), "--seed", "11", "--out", s(&b)]);
    let hash = |d: &Path| sha256_hex(&std::fs::read(d.join("manifest.json")).unwrap());
    assert_eq!(hash(&a), hash(&b));
    for f in ["data.bin", "gt_train.json", "gt_val.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let c = dir.path().join("c");
    ok(&["gen-data", "--config", s(&cfg), "--seed", "12", "--out", s(&c)]);
    assert_ne!(hash(&a), hash(&c));
}

#[test]
fn gen_data_rejects_oversized_sprites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"corpus": {"max_radius": 9}}));
    let err = fails(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("d"))], "E_CONFIG");
    assert!(err.contains("does not fit"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"model": {"d_modle": 3}}"#).unwrap();
    fails(&["gen-data", "--config", s(&p), "--out", s(dir.path())], "E_CONFIG");
    fails(&["train", "--config", s(&p), "--out", s(dir.path())], "E_CONFIG");
}

#[test]
fn missing_files_fail_with_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    fails(&["infer", "--checkpoint", s(&missing), "--data", s(dir.path()), "--out", s(&missing)], "E_CHECKPOINT");
    fails(&["eval", "--pred", s(&missing), "--gt", s(&missing), "--out", s(dir.path())], "E_IO");
    fails(&["gen-data", "--config", s(&missing), "--out", s(dir.path())], "E_IO");
    fails(&["train", "--count-loss", "poisson"], "E_USAGE");
}

#[test]
fn zero_steps_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"train": {"steps": 0}}));
    let data = gen(dir.path(), &cfg);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    let p = out.join("checkpoint.json");
    let ck = Checkpoint::load(&p).unwrap();
    assert_eq!(ck.step, 0);
    let fresh = Model::new(ck.config.model.clone(), 5).unwrap();
    assert_eq!(ck.model(&p).unwrap().params, fresh.params);
    assert_eq!(log_rows(&out.join("train_log.csv")).len(), 0);
}

#[test]
fn zero_lambda_logs_but_excludes_the_count_term() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let data = gen(dir.path(), &cfg);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--lambda-saoc", "0"]);
    let rows = log_rows(&out.join("train_log.csv"));
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r[4] > 0.0, "L_SAOC is still reported");
        let expected = r[1] + r[2] + 0.5 * r[3];
        assert!((r[5] - expected).abs() <= 1e-9 * expected.abs(), "{r:?}");
    }
}

#[test]
fn interval_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"train": {"steps": 4, "checkpoint_every": 2}}));
    let data = gen(dir.path(), &cfg);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(Checkpoint::load(&out.join("checkpoint_2.json")).unwrap().step, 2);
    let last = Checkpoint::load(&out.join("checkpoint_4.json")).unwrap();
    assert_eq!(last, Checkpoint::load(&out.join("checkpoint.json")).unwrap());
}

#[test]
fn loss_decreases_over_200_steps_on_the_default_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--seed", "0", "--out", s(&data)]);
    let out = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--out", s(&out), "--steps", "200"]);
    let rows = log_rows(&out.join("train_log.csv"));
    assert_eq!(rows.len(), 200);
    assert!(rows[199][5] < rows[0][5], "total {} at step 200 vs {} at step 1", rows[199][5], rows[0][5]);
}

#[test]
fn infer_and_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let data = gen(dir.path(), &cfg);
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    let ck = run.join("checkpoint.json");

    let p1 = dir.path().join("p1.json");
    let p2 = dir.path().join("p2.json");
    ok(&["infer", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&p1)]);
    ok(&["infer", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&p2)]);
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let preds = TrackFile::read(&p1).unwrap();
    assert_eq!(preds.videos.len(), 2);
    assert!(preds.videos.iter().all(|v| v.counts.as_ref().map(Vec::len) == Some(4)));

    // An untrained-size model at an extreme threshold keeps (almost) nothing.
    let strict = dir.path().join("strict.json");
    ok(&["infer", "--checkpoint", s(&ck), "--data", s(&data), "--threshold", "0.999", "--out", s(&strict)]);
    let kept: usize = TrackFile::read(&strict).unwrap().videos.iter().map(|v| v.trajectories.len()).sum();
    assert!(kept <= 1, "{kept} trajectories survive a 0.999 threshold");

    let rep = dir.path().join("eval");
    ok(&["eval", "--pred", s(&p1), "--gt", s(&data), "--out", s(&rep)]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rep.join("metrics.json")).unwrap()).unwrap();
    for k in [
        "mAP", "HOTA", "DetA", "AssA", "FSLA", "FSLAn", "FSLAs", "FSLAm", "per_alpha", "map_per_threshold", "count_mae",
        "instance_count_mae",
    ] {
        assert!(json.get(k).is_some(), "report lacks {k}");
    }
    assert_eq!(json["per_alpha"].as_array().unwrap().len(), 19);
    let csv = std::fs::read_to_string(rep.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,value\nmAP,"));
    assert_eq!(std::fs::read_to_string(rep.join("per_alpha.csv")).unwrap().lines().count(), 20);
}

#[test]
fn eval_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"corpus": {"train_videos": 1, "val_videos": 4}}));
    let data = gen(dir.path(), &cfg);
    let gt = data.join("gt_val.json");

    let out = dir.path().join("self");
    ok(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&out)]);
    let r: EvalReport = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let m = &r.metrics;
    for v in [m.map, m.hota, m.det_a, m.ass_a, m.fsla, m.fsla_n, m.fsla_s, m.fsla_m] {
        assert!((v - 100.0).abs() < 1e-9, "{m:?}");
    }

    let mut empty = TrackFile::read(&gt).unwrap();
    for v in &mut empty.videos {
        v.trajectories.clear();
        v.sounding_counts = None;
    }
    let ep = dir.path().join("empty.json");
    empty.write(&ep).unwrap();
    let out = dir.path().join("empty");
    ok(&["eval", "--pred", s(&ep), "--gt", s(&gt), "--out", s(&out)]);
    let r: EvalReport = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let m = &r.metrics;
    for v in [m.map, m.hota, m.det_a, m.ass_a, m.fsla_s, m.fsla_m] {
        assert_eq!(v, 0.0, "{m:?}");
    }
    assert_eq!(m.fsla_n, 100.0);
    assert!(r.count_mae.is_none());
}

#[test]
fn schema_violations_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let data = gen(dir.path(), &cfg);
    let gt = data.join("gt_val.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&gt).unwrap()).unwrap();
    v["videos"][1]["trajectories"] = json!([{"id": 1, "label": 1, "confidence": 0.5, "rle": [[3], [256], [256], [256]]}]);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let err = fails(&["eval", "--pred", s(&bad), "--gt", s(&gt), "--out", s(dir.path())], "E_SCHEMA");
    assert!(err.contains("videos[1].trajectories[0].rle[0]"), "{err}");

    std::fs::write(&bad, "{\"format\": \"acvis-tracks\",\n \"version\": 1,\n \"videos\": 7}").unwrap();
    let err = fails(&["eval", "--pred", s(&bad), "--gt", s(&gt), "--out", s(dir.path())], "E_SCHEMA");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn grad_check_command() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gc.json");
    let out = ok(&["grad-check", "--seeds", "3", "--out", s(&report)]);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["saoc_loss", "cross_attention", "decode", "mask_head", "frame_loss", "total_loss"] {
        assert!(text.contains(&format!("PASS {name} max_rel_error=")), "{text}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["checks"].as_array().unwrap().iter().all(|c| c["max_rel_error"].is_number()));

    let err = fails(&["grad-check", "--seeds", "2", "--negative-control"], "E_GRADCHECK");
    assert!(err.contains("detached_square"));
}

#[test]
fn ablate_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"train": {"steps": 1, "batch_size": 1}}));
    let data = gen(dir.path(), &cfg);
    let out = dir.path().join("abl.csv");
    ok(&[
        "ablate", "--config", s(&cfg), "--data", s(&data), "--variants", "full,count-ce", "--runs", "2", "--out", s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(3).unwrap().starts_with("count_ce,5,"));
}

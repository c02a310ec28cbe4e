use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_refground"));
    for (k, _) in std::env::vars() {
        if k.starts_with("REFGROUND_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

const QUICK: &str = r#"{
  "training": {
    "semantic": {"epochs": 3, "learning_rate": 0.003},
    "spatial": {"train": {"epochs": 2, "learning_rate": 0.003}}
  }
}"#;

/// A small corpus and trained models, shared by every test.
fn fixture() -> &'static (tempfile::TempDir, PathBuf, PathBuf, PathBuf) {
    static CELL: OnceLock<(tempfile::TempDir, PathBuf, PathBuf, PathBuf)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let models = dir.path().join("models");
        let config = dir.path().join("quick.json");
        std::fs::write(&config, QUICK).unwrap();
        let p = |x: &Path| x.to_str().unwrap().to_string();
        stdout_json(&run(&["gen-corpus", "--out", &p(&corpus), "--scenes", "40", "--seed", "3"]));
        for role in ["semantic", "spatial"] {
            let out = models.join(format!("{role}.json"));
            let v = stdout_json(&run(&[
                "--config", &p(&config), "train", "--role", role, "--corpus", &p(&corpus), "--out", &p(&out),
            ]));
            assert_eq!(v["role"], role);
        }
        (dir, corpus, models, config)
    })
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn first_scene(corpus: &Path) -> (PathBuf, Value) {
    let path = corpus.join("scene-00000.json");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    (path, v)
}

#[test]
fn gen_corpus_writes_scenes_and_splits() {
    let (_, corpus, _, _) = fixture();
    let n = std::fs::read_dir(corpus).unwrap().count();
    assert_eq!(n, 41);
    assert!(corpus.join("splits.json").is_file());
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let out = bin().args(["gen-corpus", "--out", &s(&a)]).env("REFGROUND_SCENES", "7").env("REFGROUND_SEED", "3").output().unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["scenes"], 7);
    // Same seed, same first scenes.
    assert_eq!(std::fs::read(a.join("scene-00000.json")).unwrap(), std::fs::read(corpus.join("scene-00000.json")).unwrap());
}

#[test]
fn ground_prints_ranked_boxes() {
    let (_, corpus, models, _) = fixture();
    let (scene, v) = first_scene(corpus);
    let query = v["expressions"][0]["text"].as_str().unwrap();
    let out = stdout_json(&run(&["ground", "--scene", &s(&scene), "--query", query, "--models", &s(models)]));
    let ranked = out["ranked"].as_array().unwrap();
    assert!(!ranked.is_empty());
    assert_eq!(ranked[0]["rank"], 1);
    assert!(out.get("diagnostics").is_none());
    assert_eq!(out["aggregation"], "noisy_or");
    let with = stdout_json(&run(&[
        "ground", "--scene", &s(&scene), "--query", query, "--models", &s(models), "--emit-diagnostics", "--aggregation", "max",
    ]));
    assert_eq!(with["aggregation"], "max");
    assert!(with["diagnostics"]["pair_matrix"].is_object());
    let again = stdout_json(&run(&["ground", "--scene", &s(&scene), "--query", query, "--models", &s(models)]));
    assert_eq!(again, out);
}

#[test]
fn usage_errors_exit_one() {
    let (_, corpus, models, _) = fixture();
    let (scene, _) = first_scene(corpus);
    let out = run(&["ground", "--scene", &s(&scene), "--models", &s(models)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--query"));
    assert!(out.stdout.is_empty());
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["ground", "--scene", "x", "--query", "q", "--models", "m", "--aggregation", "mean"]).status.code(), Some(1));
    assert_eq!(run(&["act", "--scene", "x", "--object", "o0", "--gripper", "0.08"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"training": {"semantic": {"epoch": 3}}}"#).unwrap();
    let out = run(&["--config", &s(&bad), "gen-corpus", "--out", &s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let (_, corpus, models, _) = fixture();
    let (scene, _) = first_scene(corpus);
    assert_eq!(run(&["ground", "--scene", "/nonexistent.json", "--query", "the cup", "--models", &s(models)]).status.code(), Some(2));
    assert_eq!(run(&["ground", "--scene", &s(&scene), "--query", "   ", "--models", &s(models)]).status.code(), Some(2));
    assert_eq!(run(&["ground", "--scene", &s(&scene), "--query", "the cup", "--models", "/nonexistent"]).status.code(), Some(2));
    assert_eq!(
        run(&["act", "--scene", &s(&scene), "--object", "nope", "--gripper", "0.08,0.05"]).status.code(),
        Some(2)
    );
}

#[test]
fn eval_report_is_byte_identical() {
    let (dir, corpus, models, _) = fixture();
    let a = dir.path().join("report_a.json");
    let b = dir.path().join("nested/out/report_b.json");
    for out in [&a, &b] {
        let o = run(&["eval", "--corpus", &s(corpus), "--models", &s(models), "--out", &s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(o.stdout, [std::fs::read(out).unwrap(), b"\n".to_vec()].concat());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert!(!report["cells"].as_array().unwrap().is_empty());
    let timing: Value = serde_json::from_slice(&std::fs::read(dir.path().join("report_a.timing.json")).unwrap()).unwrap();
    assert!(timing["queries"].as_u64().unwrap() > 0);
}

#[test]
fn act_reports_grasp_and_centroid() {
    let (_, corpus, _, _) = fixture();
    let (scene, v) = first_scene(corpus);
    let obj = &v["objects"][0];
    let out = stdout_json(&run(&["act", "--scene", &s(&scene), "--object", obj["id"].as_str().unwrap(), "--gripper", "0.08,0.05"]));
    let extent: Vec<f64> = serde_json::from_value(obj["extent"].clone()).unwrap();
    let expected = if extent[0] > 0.08 || extent[1] < 0.05 { "top_down" } else { "forward" };
    assert_eq!(out["grasp"], expected);
    assert_eq!(out["centroid"].as_array().unwrap().len(), 3);
    let tiny = stdout_json(&run(&["act", "--scene", &s(&scene), "--object", obj["id"].as_str().unwrap(), "--gripper", "0.001,0.05"]));
    assert_eq!(tiny["grasp"], "top_down");
}

#[test]
fn cli_and_api_agree() {
    use axum::body::Body;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    let (_, corpus, models, _) = fixture();
    let (scene, v) = first_scene(corpus);
    let engine = refground::GroundingEngine::load(models, refground::EngineConfig::default()).unwrap();
    let (files, _) = refground::scene::load_corpus(corpus).unwrap();
    let state = std::sync::Arc::new(refground_api::AppState::new(engine, files, refground_api::ApiConfig::default()));
    let rt = tokio::runtime::Runtime::new().unwrap();
    for e in v["expressions"].as_array().unwrap() {
        let query = e["text"].as_str().unwrap();
        let cli = stdout_json(&run(&["ground", "--scene", &s(&scene), "--query", query, "--models", &s(models)]));
        let body = serde_json::json!({"scene_id": v["id"], "query": query}).to_string();
        let api: Value = rt.block_on(async {
            let req = axum::http::Request::post("/api/ground")
                .header("content-type", "application/json")
                .body(Body::from(body))
                .unwrap();
            let resp = refground_api::router(state.clone()).oneshot(req).await.unwrap();
            serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap()
        });
        assert_eq!(api["candidate"]["box"], cli["ranked"][0]["box"]);
        assert_eq!(api["candidate"]["score"], cli["ranked"][0]["score"]);
    }
}

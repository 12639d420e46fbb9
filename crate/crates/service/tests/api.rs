mod common;

use std::time::Duration;

use axum::http::StatusCode;
use common::*;
use serde_json::{json, Value};
use warntriage_core::workflow::{assign_band, Band};

fn band_rank(v: &Value) -> u8 {
    match v["band"].as_str().unwrap() {
        "high" => 2,
        "medium" => 1,
        _ => 0,
    }
}

#[tokio::test]
async fn queue_is_totally_ordered_and_paged() {
    let (_tmp, settings) = fresh_copy();
    let (_, app) = app(settings);
    let (status, body) = get(&app, "/api/warnings?limit=1000").await;
    assert_eq!(status, StatusCode::OK);
    let items = body["items"].as_array().unwrap();
    assert_eq!(body["total"], 110);
    assert_eq!(items.len(), 110);
    for w in items.windows(2) {
        let key = |v: &Value| (std::cmp::Reverse(band_rank(v)), std::cmp::Reverse(v["score"].as_f64().unwrap().to_bits()), v["warning_id"].as_str().unwrap().to_string());
        assert!(key(&w[0]) < key(&w[1]), "{} before {}", w[0], w[1]);
    }

    let (_, page) = get(&app, "/api/warnings?offset=1&limit=1").await;
    assert_eq!(page["items"].as_array().unwrap().len(), 1);
    assert_eq!(page["items"][0], items[1]);

    let (_, high) = get(&app, "/api/warnings?cwe=CWE-476&band=medium&limit=1000").await;
    assert!(high["items"].as_array().unwrap().iter().all(|i| i["band"] == "medium" && i["cwe"] == "CWE-476"));

    assert_eq!(get(&app, "/api/warnings?cwe=CWE-999").await, (StatusCode::NOT_FOUND, json!({"error": "not found"})));
    assert_eq!(get(&app, "/api/warnings?band=urgent").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/warnings?offset=-1").await.0, StatusCode::BAD_REQUEST);
    let (_, two) = get(&app, "/api/warnings").await;
    assert_eq!(two["limit"], 50);
}

#[tokio::test]
async fn warning_detail_carries_source_and_top_contexts() {
    let (_tmp, settings) = fresh_copy();
    let (state, app) = app(settings);
    let id = queue_ids(&app, "CWE-476").await.remove(0);
    let (status, body) = get(&app, &format!("/api/warnings/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let record = state.base.open.iter().find(|r| r.id == id).unwrap();
    assert_eq!(body["source"], record.source);
    assert_eq!(body["line"], record.line);
    let contexts = body["contexts"].as_array().unwrap();
    assert_eq!(contexts.len(), 5);
    let alphas: Vec<f64> = contexts.iter().map(|c| c["alpha"].as_f64().unwrap()).collect();
    assert!(alphas.windows(2).all(|w| w[0] >= w[1]));
    assert!(contexts[0]["left_pos"]["line"].as_u64().unwrap() >= 1);

    assert_eq!(get(&app, "/api/warnings/no-such-id").await, (StatusCode::NOT_FOUND, json!({"error": "not found"})));
}

#[tokio::test]
async fn verdicts_validate_and_are_idempotent() {
    let (_tmp, settings) = fresh_copy();
    let (_, app) = app(settings);
    let id = queue_ids(&app, "CWE-252").await.remove(0);

    assert_eq!(verdict(&app, &id, "maybe", "ana").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(verdict(&app, &id, "true_positive", " ").await.0, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &format!("/api/warnings/{id}/verdict"), Some("{oops")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(verdict(&app, "nope", "true_positive", "ana").await.0, StatusCode::NOT_FOUND);

    let first = verdict(&app, &id, "true_positive", "ana").await;
    assert_eq!(first, (StatusCode::OK, json!({"staged": 1, "retrain_triggered": false, "appended": true})));
    let again = verdict(&app, &id, "true_positive", "ana").await;
    assert_eq!(again.1, json!({"staged": 1, "retrain_triggered": false, "appended": false}));
    let flipped = verdict(&app, &id, "false_positive", "ana").await;
    assert_eq!(flipped.1["staged"], 1);

    let (_, item) = get(&app, &format!("/api/warnings/{id}")).await;
    assert_eq!(item["verdict_status"], "false_positive");
    let (_, cwes) = get(&app, "/api/cwes").await;
    let row = cwes["cwes"].as_array().unwrap().iter().find(|c| c["cwe"] == "CWE-252").unwrap();
    assert_eq!(row["staged"], 1);
}

#[tokio::test]
async fn dismissing_a_high_band_true_call_flags_disagreement() {
    let (_tmp, settings) = fresh_copy();
    let (_, app) = app(settings);
    let (_, body) = get(&app, "/api/warnings?band=high&limit=1000").await;
    let Some(item) = body["items"].as_array().unwrap().iter().find(|i| i["final_label"] == 1).cloned() else {
        return;
    };
    let id = item["warning_id"].as_str().unwrap();
    assert_eq!(item["disagreement"], false);
    verdict(&app, id, "false_positive", "bo").await;
    let (_, after) = get(&app, &format!("/api/warnings/{id}")).await;
    assert_eq!(after["disagreement"], true);
}

#[tokio::test]
async fn retrain_bumps_version_and_rebands_atomically() {
    let (_tmp, settings) = fresh_copy();
    let registry_path = settings.data_dir.join("registry.json");
    let (state, app) = app(settings);
    assert_eq!(call(&app, "POST", "/api/cwes/CWE-476/retrain", None).await, (StatusCode::CONFLICT, json!({"error": "nothing staged"})));
    assert_eq!(call(&app, "POST", "/api/cwes/CWE-999/retrain", None).await.0, StatusCode::NOT_FOUND);

    let ids = queue_ids(&app, "CWE-476").await;
    for (i, id) in ids.iter().take(10).enumerate() {
        let v = if i % 2 == 0 { "true_positive" } else { "false_positive" };
        verdict(&app, id, v, "ana").await;
    }
    let before = state.snapshot();
    let (status, body) = call(&app, "POST", "/api/cwes/CWE-476/retrain", None).await;
    assert_eq!((status, body), (StatusCode::OK, json!({"cwe": "CWE-476", "version": 2})));

    // An earlier snapshot is untouched by the swap.
    assert_eq!(before.registry.get("CWE-476").unwrap().version, 1);
    let after = state.snapshot();
    let view = &after.views["CWE-476"];
    for s in &view.scored {
        assert_eq!(assign_band(&view.thresholds, s.prediction.score), s.band);
    }
    let (_, items) = get(&app, "/api/warnings?cwe=CWE-476&limit=1000").await;
    assert!(items["items"].as_array().unwrap().iter().all(|i| i["model_version"] == 2));
    let on_disk = warntriage_core::ensemble::Registry::load(&registry_path).unwrap();
    assert_eq!(on_disk.get("CWE-476").unwrap().version, 2);

    let (_, metrics) = get(&app, "/api/cwes/CWE-476/metrics").await;
    assert_eq!(metrics["model_version"], 2);
    let counts: u64 = Band::ALL.iter().map(|b| metrics["bands"][b.as_str()].as_u64().unwrap()).sum();
    assert_eq!(counts, 80);
    assert_eq!(metrics["n_open"], 80);
    for key in ["accuracy", "precision", "recall", "f1", "auroc"] {
        let v = metrics["report"][key].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&v), "{key} = {v}");
    }
    assert_eq!(call(&app, "POST", "/api/cwes/CWE-476/retrain", None).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn failed_retrain_keeps_the_live_model() {
    let (_tmp, settings) = fresh_copy();
    let registry_path = settings.data_dir.join("registry.json");
    let (state, app) = app(settings);
    let id = queue_ids(&app, "CWE-252").await.remove(0);
    verdict(&app, &id, "true_positive", "ana").await;
    std::fs::remove_file(&registry_path).unwrap();
    std::fs::create_dir(&registry_path).unwrap();

    let (status, body) = call(&app, "POST", "/api/cwes/CWE-252/retrain", None).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(body["error"].as_str().unwrap().contains("registry.json"), "{body}");
    assert_eq!(state.snapshot().registry.get("CWE-252").unwrap().version, 1);
    let (_, metrics) = get(&app, "/api/cwes/CWE-252/metrics").await;
    assert_eq!(metrics["model_version"], 1);
}

#[tokio::test]
async fn untrained_cwe_has_no_metrics() {
    let (_tmp, settings) = fresh_copy();
    let path = settings.data_dir.join("registry.json");
    let mut registry = warntriage_core::ensemble::Registry::load(&path).unwrap();
    registry.models.remove("CWE-252");
    registry.save(&path).unwrap();
    let (_, app) = app(settings);
    assert_eq!(get(&app, "/api/cwes/CWE-252/metrics").await, (StatusCode::NOT_FOUND, json!({"error": "not found"})));
    assert_eq!(get(&app, "/api/cwes/CWE-476/metrics").await.0, StatusCode::OK);
    let (_, cwes) = get(&app, "/api/cwes").await;
    let row = cwes["cwes"].as_array().unwrap().iter().find(|c| c["cwe"] == "CWE-252").unwrap();
    assert_eq!(row["model_version"], Value::Null);
}

#[tokio::test]
async fn crossing_the_threshold_retrains_in_the_background() {
    let (_tmp, mut settings) = fresh_copy();
    settings.retrain_threshold = 3;
    settings.auto_retrain = true;
    let (_, app) = app(settings);
    let ids = queue_ids(&app, "CWE-252").await;
    let mut flags = Vec::new();
    for id in &ids[..3] {
        flags.push(verdict(&app, id, "true_positive", "ana").await.1["retrain_triggered"].clone());
    }
    assert_eq!(flags, [json!(false), json!(false), json!(true)]);
    let mut version = json!(1);
    for _ in 0..200 {
        let (_, m) = get(&app, "/api/cwes/CWE-252/metrics").await;
        version = m["model_version"].clone();
        if version == 2 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert_eq!(version, 2);
}

#[tokio::test]
async fn static_files_and_unknown_routes() {
    let (tmp, mut settings) = fresh_copy();
    let web = tmp.path().join("web");
    std::fs::create_dir(&web).unwrap();
    std::fs::write(web.join("index.html"), "<p>queue</p>").unwrap();
    let (_, plain) = app(settings.clone());
    assert_eq!(get(&plain, "/index.html").await, (StatusCode::NOT_FOUND, json!({"error": "not found"})));

    settings.static_dir = Some(web);
    let (_, app) = app(settings);
    assert_eq!(get(&app, "/").await, (StatusCode::OK, json!("<p>queue</p>")));
    assert_eq!(get(&app, "/missing.js").await, (StatusCode::NOT_FOUND, json!({"error": "not found"})));
    assert_eq!(get(&app, "/api/unknown").await.0, StatusCode::NOT_FOUND);
}

use std::process::Command;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use persona_cli::commands::{chat, resolve_addr};
use persona_cli::service::{router, AppState, ChatResponse};
use persona_core::corpus::Profile;
use persona_core::inference::SystemVariant;
use persona_core::model::{AnchorMode, Checkpoint, DecodeMode, ModelConfig, ModelParams};
use persona_core::vocab::{Vocab, RESERVED_TOKENS};
use serde_json::{json, Value};
use tower::ServiceExt;

const WORDS: [&str; 12] = ["how", "old", "are", "you", "where", "hi", "i", "am", "three", "beijing", "wangzai", "four"];

fn profile() -> Profile {
    Profile::new([("age", "three"), ("city", "beijing"), ("name", "wangzai")]).unwrap()
}

/// Toy checkpoint whose gate probability on any one-token post is `z`.
fn checkpoint(z: f64, anchor_mode: AnchorMode) -> Checkpoint {
    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(WORDS.iter().map(|s| s.to_string()));
    let vocab = Vocab::from_tokens(tokens).unwrap();
    let mut params = ModelParams::init(&ModelConfig::toy(vocab.len(), 3), 5).unwrap();
    let enc = params.ids.encoder[0];
    for id in [enc.w_x, enc.w_rz, enc.w_n, enc.b_rz] {
        params.store.get_mut(id).data_mut().fill(0.0);
    }
    params.store.get_mut(enc.b_n).data_mut().fill(1.0);
    let gate = params.ids.gate_w;
    let w = params.store.get_mut(gate).data_mut();
    w.fill(0.0);
    w[0] = (z / (1.0 - z)).ln() / (0.5 * 1f64.tanh());
    Checkpoint { params, vocab, keys: vec!["age".into(), "city".into(), "name".into()], anchor_mode }
}

fn app(z: f64) -> Router {
    let state = AppState::new(Some(checkpoint(z, AnchorMode::Detected)), None, profile(), DecodeMode::Greedy).unwrap();
    router(Arc::new(state))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post_chat(app: &Router, post: &str) -> (StatusCode, Value) {
    let body = json!({ "session_id": "s1", "post": post }).to_string();
    call(app, Method::POST, "/api/chat", Some(&body)).await
}

#[tokio::test]
async fn health_is_ok() {
    let (status, body) = call(&app(0.9), Method::GET, "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({ "status": "ok" }));
}

#[tokio::test]
async fn malformed_json_is_400() {
    let app = app(0.9);
    for body in ["{not json", r#"{"post": "hi"}"#, r#"{"session_id": 1, "post": "hi"}"#] {
        let (status, err) = call(&app, Method::POST, "/api/chat", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(err["error"], "malformed_json");
        assert!(err["message"].is_string());
    }
}

#[tokio::test]
async fn empty_post_is_422() {
    let (status, err) = post_chat(&app(0.9), "   ").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "invalid");
}

#[tokio::test]
async fn chat_reply_carries_the_trace() {
    let (status, body) = post_chat(&app(0.9), "How").await;
    assert_eq!(status, StatusCode::OK);
    let reply: ChatResponse = serde_json::from_value(body).unwrap();
    assert_eq!(reply.session_id, "s1");
    assert_eq!(reply.variant, SystemVariant::Iccm);
    assert!(reply.used_profile);
    assert!((reply.z_prob - 0.9).abs() < 1e-9);
    let value = reply.value.clone().unwrap();
    assert_eq!(profile().get(&reply.key), Some(value.as_str()));
    assert!(reply.response.split_whitespace().any(|w| w == value));
    assert_eq!(reply.key_dist.len(), 3);
}

#[tokio::test]
async fn gate_negative_post_skips_the_profile() {
    let (status, body) = post_chat(&app(0.3), "hi").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["used_profile"], false);
    assert_eq!(body["value"], Value::Null);
    assert_eq!(body["route"], "forward");
}

#[tokio::test]
async fn identical_requests_get_identical_replies() {
    let app = app(0.9);
    let a = post_chat(&app, "where zebra").await;
    let b = post_chat(&app, "where zebra").await;
    assert_eq!(a, b);
    assert_eq!(a.1["unk_count"], 1);
}

#[tokio::test]
async fn profile_swap_reaches_the_next_reply() {
    let app = app(0.9);
    // Key selection reads the values, so every key gets the new value.
    let change = json!({ "age": "Four", "city": "four", "name": " four " }).to_string();
    let (status, updated) = call(&app, Method::PUT, "/api/profile", Some(&change)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(updated, json!({ "age": "four", "city": "four", "name": "four" }));
    let (_, after) = post_chat(&app, "how").await;
    assert_eq!(after["value"], "four");
    assert!(after["response"].as_str().unwrap().split_whitespace().any(|w| w == "four"));
    let (_, current) = call(&app, Method::GET, "/api/profile", None).await;
    assert_eq!(current, updated);
}

#[tokio::test]
async fn rejected_profile_update_changes_nothing() {
    let app = app(0.9);
    for body in [r#"{"age": "four", "hobby": "chess"}"#, r#"{"age": 4}"#, r#"{"age": "new york"}"#] {
        let (status, err) = call(&app, Method::PUT, "/api/profile", Some(body)).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert!(err["error"].is_string());
    }
    let (status, _) = call(&app, Method::PUT, "/api/profile", Some("[1,2]")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, current) = call(&app, Method::GET, "/api/profile", None).await;
    assert_eq!(current, json!({ "age": "three", "city": "beijing", "name": "wangzai" }));
}

#[tokio::test]
async fn variants_list_and_switch() {
    let app = app(0.9);
    let (status, list) = call(&app, Method::GET, "/api/variants", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list["current"], "iccm");
    let variants = list["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 5);
    let pos = variants.iter().find(|v| v["name"] == "iccm_pos").unwrap();
    assert_eq!(pos["available"], false);

    let (status, list) = call(&app, Method::POST, "/api/variant", Some(r#"{"name": "seq2seq_pv"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list["current"], "seq2seq_pv");
    let (_, reply) = post_chat(&app, "how").await;
    assert_eq!(reply["variant"], "seq2seq_pv");
    assert_eq!(reply["route"], "value");
    assert_eq!(reply["response"], reply["value"]);
}

#[tokio::test]
async fn unknown_or_unloaded_variant_is_404() {
    let app = app(0.9);
    for name in ["gpt", "iccm-pos"] {
        let body = json!({ "name": name }).to_string();
        let (status, err) = call(&app, Method::POST, "/api/variant", Some(&body)).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{name}");
        assert_eq!(err["error"], "unknown_variant");
    }
    let (_, list) = call(&app, Method::GET, "/api/variants", None).await;
    assert_eq!(list["current"], "iccm");
}

#[tokio::test]
async fn second_checkpoint_serves_iccm_pos() {
    let state = AppState::new(
        Some(checkpoint(0.9, AnchorMode::Detected)),
        Some(checkpoint(0.9, AnchorMode::Random)),
        profile(),
        DecodeMode::Greedy,
    )
    .unwrap();
    assert_eq!(state.available().len(), 5);
    let app = router(Arc::new(state));
    let (status, _) = call(&app, Method::POST, "/api/variant", Some(r#"{"name": "iccm_pos"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, reply) = post_chat(&app, "how").await;
    assert_eq!(reply["variant"], "iccm_pos");
    assert_eq!(reply["route"], "bidirectional");
}

#[test]
fn state_rejects_mismatched_inputs() {
    let swapped = AppState::new(Some(checkpoint(0.9, AnchorMode::Random)), None, profile(), DecodeMode::Greedy);
    assert_eq!(swapped.err().unwrap().kind(), "contract");
    let none = AppState::new(None, None, profile(), DecodeMode::Greedy);
    assert_eq!(none.err().unwrap().kind(), "config");
    let other = Profile::new([("age", "three"), ("city", "beijing")]).unwrap();
    let wrong = AppState::new(Some(checkpoint(0.9, AnchorMode::Detected)), None, other, DecodeMode::Greedy);
    assert_eq!(wrong.err().unwrap().kind(), "config");
}

#[test]
fn port_variable_overrides_the_port() {
    assert_eq!(resolve_addr("127.0.0.1:8080", None).unwrap(), "127.0.0.1:8080");
    assert_eq!(resolve_addr("127.0.0.1:8080", Some("9000")).unwrap(), "127.0.0.1:9000");
    assert_eq!(resolve_addr("0.0.0.0:1", Some("80")).unwrap(), "0.0.0.0:80");
    assert!(resolve_addr("127.0.0.1:8080", Some("http")).is_err());
}

#[test]
fn chat_loop_handles_commands_and_posts() {
    let ckpt = checkpoint(0.9, AnchorMode::Detected);
    let input = "how\n/set age four\n/profile\n/variant seq2seq_pv\nhow\n/variant nope\n\n";
    let run = || {
        let mut out = Vec::new();
        chat(&ckpt, profile(), SystemVariant::Iccm, input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    };
    let text = run();
    assert_eq!(text, run());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 8, "{text}");
    let first: Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(first["used_profile"], true);
    assert_eq!(lines[2], "age = four");
    assert_eq!(lines[3], r#"{"age":"four","city":"beijing","name":"wangzai"}"#);
    assert_eq!(lines[4], "variant Seq2Seq+PV");
    let value: Value = serde_json::from_str(lines[6]).unwrap();
    assert_eq!(value["route"], "value");
    assert_eq!(lines[5], value["value"].as_str().unwrap());
    let err: Value = serde_json::from_str(lines[7]).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn binary_reports_errors_as_json_with_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_persona");
    let out = Command::new(bin).args(["gradcheck", "--dims", "huge"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");

    let out = Command::new(bin)
        .args(["chat", "--ckpt", "/nonexistent/ckpt", "--profile", "/nonexistent/profile.json"])
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("nonexistent"));

    let out = Command::new(bin).args(["gradcheck", "--dims", "toy"]).env("RUST_LOG", "off").output().unwrap();
    assert!(out.status.success());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["passed"], true);
    assert!(summary["max_relative_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn error_message_drops_repeated_causes() {
    let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
    let err = anyhow::Error::new(persona_core::Error::Io(io)).context("loading checkpoint x");
    assert_eq!(persona_cli::error_message(&err), "loading checkpoint x: io error: gone");
    assert_eq!(persona_cli::error_kind(&err), "io");
}

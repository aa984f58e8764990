use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chartaudit_backends::{build, BackendConfig, BackendKind, HttpBackend, HttpOcr};
use chartaudit_core::backend::{Backend, BackendError, OcrSource, Stage};
use chartaudit_core::prompt::{Attachment, Prompt};
use image::{Rgba, RgbaImage};
use serde_json::{json, Value};

async fn serve(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn ok_body(text: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
}

fn fast(cfg: &mut BackendConfig) {
    cfg.backoff_base_ms = 1;
    cfg.timeout_secs = 5.0;
}

fn text_prompt() -> Prompt {
    Prompt {
        template_id: "t".into(),
        text: "hello".into(),
        images: Vec::new(),
    }
}

#[derive(Clone, Default)]
struct Flaky {
    hits: Arc<AtomicUsize>,
    failures: usize,
    status: u16,
}

async fn flaky(State(s): State<Flaky>) -> (StatusCode, Json<Value>) {
    let n = s.hits.fetch_add(1, Ordering::SeqCst);
    if n < s.failures {
        (StatusCode::from_u16(s.status).unwrap(), Json(json!({"error": "boom"})))
    } else {
        (StatusCode::OK, Json(ok_body("Final Answer: B")))
    }
}

async fn flaky_server(failures: usize, status: u16) -> (String, Arc<AtomicUsize>) {
    let state = Flaky {
        failures,
        status,
        ..Default::default()
    };
    let hits = state.hits.clone();
    let url = serve(Router::new().route("/chat/completions", post(flaky)).with_state(state)).await;
    (url, hits)
}

#[tokio::test]
async fn recovers_after_two_server_errors() {
    let (url, hits) = flaky_server(2, 500).await;
    let mut cfg = BackendConfig::http(&url, "m");
    cfg.retries = 3;
    fast(&mut cfg);
    let out = HttpBackend::new(&cfg).unwrap().complete(Stage::Fusion, "s", &text_prompt()).await.unwrap();
    assert_eq!(out, "Final Answer: B");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn rate_limit_is_retried_and_exhaustion_reports_attempts() {
    let (url, hits) = flaky_server(10, 429).await;
    let mut cfg = BackendConfig::http(&url, "m");
    cfg.retries = 2;
    fast(&mut cfg);
    let err = HttpBackend::new(&cfg).unwrap().complete(Stage::Fusion, "s", &text_prompt()).await.unwrap_err();
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    match err {
        BackendError::Transport { attempts, .. } => {
            assert_eq!(attempts.len(), 3);
            assert!(attempts[0].contains("429"), "{attempts:?}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (url, hits) = flaky_server(10, 400).await;
    let mut cfg = BackendConfig::http(&url, "m");
    cfg.retries = 3;
    fast(&mut cfg);
    assert!(HttpBackend::new(&cfg).unwrap().complete(Stage::Fusion, "s", &text_prompt()).await.is_err());
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn timeout_without_retries_is_a_transport_error() {
    async fn slow() -> Json<Value> {
        tokio::time::sleep(Duration::from_secs(3)).await;
        Json(ok_body("late"))
    }
    let url = serve(Router::new().route("/chat/completions", post(slow))).await;
    let mut cfg = BackendConfig::http(&url, "m");
    cfg.retries = 0;
    cfg.timeout_secs = 0.2;
    let err = HttpBackend::new(&cfg).unwrap().complete(Stage::Diagnostic, "s", &text_prompt()).await.unwrap_err();
    match err {
        BackendError::Transport { attempts, .. } => {
            assert_eq!(attempts.len(), 1);
            assert!(attempts[0].contains("timeout"), "{attempts:?}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test]
async fn unreachable_endpoint_fails() {
    let mut cfg = BackendConfig::http("http://127.0.0.1:9", "m");
    cfg.retries = 1;
    fast(&mut cfg);
    let err = HttpBackend::new(&cfg).unwrap().complete(Stage::Diagnostic, "s", &text_prompt()).await.unwrap_err();
    assert!(matches!(err, BackendError::Transport { ref attempts, .. } if attempts.len() == 2), "{err:?}");
}

type Captured = Arc<Mutex<Vec<(HeaderMap, Value)>>>;

async fn capturing_server() -> (String, Captured) {
    async fn capture(State(seen): State<Captured>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
        seen.lock().unwrap().push((headers, body));
        Json(ok_body("ok"))
    }
    let seen: Captured = Arc::default();
    let url = serve(Router::new().route("/chat/completions", post(capture)).with_state(seen.clone())).await;
    (url, seen)
}

fn solid(shade: u8) -> Arc<RgbaImage> {
    Arc::new(RgbaImage::from_pixel(3, 2, Rgba([shade, 255 - shade, 7, 255])))
}

#[tokio::test]
async fn images_are_sent_in_order() {
    let (url, seen) = capturing_server().await;
    let mut cfg = BackendConfig::http(&url, "vision-model");
    cfg.temperature = 0.3;
    cfg.max_tokens = 77;
    let shades = [10u8, 200, 90, 160, 40];
    let prompt = Prompt {
        template_id: "diagnostic.v1".into(),
        text: "inspect".into(),
        images: shades
            .iter()
            .enumerate()
            .map(|(i, &s)| Attachment {
                label: format!("img{i}"),
                image: solid(s),
            })
            .collect(),
    };
    HttpBackend::new(&cfg).unwrap().complete(Stage::Diagnostic, "s", &prompt).await.unwrap();

    let seen = seen.lock().unwrap();
    let body = &seen[0].1;
    assert_eq!(body["model"], "vision-model");
    assert_eq!(body["max_tokens"], 77);
    assert_eq!(body["temperature"], 0.3);
    let content = body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(content[0], json!({"type": "text", "text": "inspect"}));
    let got: Vec<u8> = content[1..]
        .iter()
        .map(|part| {
            assert_eq!(part["type"], "image_url");
            let url = part["image_url"]["url"].as_str().unwrap();
            let b64 = url.strip_prefix("data:image/png;base64,").unwrap();
            let img = image::load_from_memory(&B64.decode(b64).unwrap()).unwrap().to_rgba8();
            img.get_pixel(0, 0)[0]
        })
        .collect();
    assert_eq!(got, shades);
}

#[tokio::test]
async fn api_key_comes_from_the_environment() {
    let (url, seen) = capturing_server().await;
    let mut cfg = BackendConfig::http(&url, "m");
    cfg.api_key_env = Some("CHARTAUDIT_TEST_KEY_7731".into());
    assert!(HttpBackend::new(&cfg).is_err(), "missing env var must be a config error");
    std::env::set_var("CHARTAUDIT_TEST_KEY_7731", "sekrit");
    HttpBackend::new(&cfg).unwrap().complete(Stage::Fusion, "s", &text_prompt()).await.unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].0["authorization"], "Bearer sekrit");
}

#[tokio::test]
async fn ocr_client_round_trip() {
    async fn ocr(Json(body): Json<Value>) -> Json<Value> {
        let bytes = B64.decode(body["image_b64"].as_str().unwrap()).unwrap();
        let img = image::load_from_memory(&bytes).unwrap();
        Json(json!({"markdown": format!("| w | h |\n|---|---|\n| {} | {} |", img.width(), img.height())}))
    }
    let url = serve(Router::new().route("/ocr", post(ocr))).await;
    let cfg = BackendConfig::http("http://unused", "m");
    let md = HttpOcr::new(&format!("{url}/ocr"), &cfg)
        .unwrap()
        .markdown("s", &solid(1))
        .await
        .unwrap();
    assert_eq!(md, "| w | h |\n|---|---|\n| 3 | 2 |");
}

#[tokio::test]
async fn factory_builds_scripted_backend_from_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("fx.json"), r#"{"fusion/s-001": "Final Answer: C", "ocr/s-001": "| a | 1 |"}"#).unwrap();
    std::fs::write(dir.join("backend.json"), r#"{"kind": "scripted", "fixtures": "fx.json", "scripted_ocr": true}"#).unwrap();
    let cfg = BackendConfig::load(&dir.join("backend.json")).unwrap();
    assert_eq!(cfg.kind, BackendKind::Scripted);
    let clients = build(&cfg).unwrap();
    let out = clients.backend.complete(Stage::Fusion, "s-001", &text_prompt()).await.unwrap();
    assert_eq!(out, "Final Answer: C");
    let md = clients.ocr.unwrap().markdown("s-001", &solid(0)).await.unwrap();
    assert_eq!(md, "| a | 1 |");
}

use std::sync::Arc;

use chartaudit_core::reward::score;
use chartaudit_core::sample::{OptionLabel, OracleRow};
use chartaudit_core::{PipelineConfig, Taxonomy};
use chartaudit_service::{router, GroupResponse, ScoreRequest, ServiceState};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

const CATEGORIES: [&str; 4] = ["inverted_axis", "truncated_axis", "inappropriate_order", "cherry_picking"];

async fn spawn(state: ServiceState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(Arc::new(state));
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn state() -> ServiceState {
    ServiceState::new(PipelineConfig::default(), Taxonomy::builtin())
}

fn label(rng: &mut StdRng) -> OptionLabel {
    OptionLabel::ALL[rng.random_range(0..4)]
}

fn random_trace(rng: &mut StdRng) -> String {
    let values: Vec<String> = (0..rng.random_range(0..5)).map(|i| format!("Q{} is {}", i + 1, rng.random_range(1..900))).collect();
    let mut parts = vec![
        format!("<Visual_Heuristic>\nStep 1 - Perception Audit: the line looks {}.\n</Visual_Heuristic>", if rng.random_bool(0.5) { "flat" } else { "steep" }),
        format!("<OCR_Validation>\nStep 2 - Numerical Anchoring: {}.\n</OCR_Validation>", values.join(", ")),
        "<Ambiguity_Resolution>\nStep 3 - Deception Mapping: the axis is inverted and truncated.\nStep 4 - Sufficiency & Integrity Check: ok.\nStep 5 - Adversarial Trap Rejection: ignore the slope.\n</Ambiguity_Resolution>".to_string(),
        format!("<Final_Answer>\nFinal Answer: {}\n</Final_Answer>", label(rng)),
    ];
    if rng.random_bool(0.3) {
        parts.swap(0, rng.random_range(1..4));
    }
    if rng.random_bool(0.2) {
        parts.pop();
    }
    parts.join("\n")
}

fn random_request(rng: &mut StdRng) -> ScoreRequest {
    let gt = label(rng);
    let trap = loop {
        let t = label(rng);
        if t != gt {
            break t;
        }
    };
    ScoreRequest {
        trace_text: random_trace(rng),
        ground_truth: gt,
        trap: rng.random_bool(0.8).then_some(trap),
        misleader: CATEGORIES[rng.random_range(0..CATEGORIES.len())].to_string(),
        oracle: rng.random_bool(0.7).then(|| {
            (1..=4)
                .map(|i| OracleRow {
                    category: format!("Q{i}"),
                    series: "s".into(),
                    value: rng.random_range(1..900) as f64,
                })
                .collect()
        }),
        explanation: rng.random_bool(0.5).then(|| "The y axis is inverted so the decline looks like growth.".to_string()),
        weights: None,
        options: None,
    }
}

#[tokio::test]
async fn health() {
    let url = spawn(state()).await;
    let body: Value = reqwest::get(format!("{url}/health")).await.unwrap().json().await.unwrap();
    assert_eq!(body, json!({"status": "ok"}));
}

#[tokio::test]
async fn responses_match_the_library_byte_for_byte() {
    let st = state();
    let url = spawn(st.clone()).await;
    let client = reqwest::Client::new();
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..100 {
        let req = random_request(&mut rng);
        let expected = serde_json::to_string(
            &score(&req.to_input(), &st.config.reward, &st.config.abstain_phrases, &st.taxonomy).unwrap(),
        )
        .unwrap();
        let resp = client
            .post(format!("{url}/v1/score"))
            .header("content-type", "application/json")
            .body(serde_json::to_string(&req).unwrap())
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        assert_eq!(resp.text().await.unwrap(), expected);
    }
}

async fn post(url: &str, path: &str, ct: &str, body: String) -> (u16, Value) {
    let resp = reqwest::Client::new()
        .post(format!("{url}{path}"))
        .header("content-type", ct)
        .body(body)
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap_or(Value::Null))
}

#[tokio::test]
async fn error_statuses() {
    let url = spawn(state()).await;
    let mut rng = StdRng::seed_from_u64(2);
    let good = serde_json::to_value(random_request(&mut rng)).unwrap();

    let (s, _) = post(&url, "/v1/score", "text/plain", good.to_string()).await;
    assert_eq!(s, 415);

    let mut bad = good.clone();
    bad.as_object_mut().unwrap().remove("ground_truth");
    let (s, body) = post(&url, "/v1/score", "application/json", bad.to_string()).await;
    assert_eq!((s, body["field"].as_str()), (400, Some("ground_truth")));

    let mut bad = good.clone();
    bad["oracle"] = json!([{"category": "x", "series": "s", "value": "seven"}]);
    let (s, body) = post(&url, "/v1/score", "application/json", bad.to_string()).await;
    assert_eq!((s, body["field"].as_str()), (400, Some("oracle[0].value")));

    let mut bad = good.clone();
    bad["weights"] = json!({"fact": -1.0});
    let (s, body) = post(&url, "/v1/score", "application/json", bad.to_string()).await;
    assert_eq!((s, body["field"].as_str()), (400, Some("weights.fact")));

    let mut bad = good.clone();
    bad["misleader"] = json!("glitter");
    let (s, body) = post(&url, "/v1/score", "application/json", bad.to_string()).await;
    assert_eq!((s, body["field"].as_str()), (422, Some("misleader")));

    let (s, _) = post(&url, "/v1/score", "application/json", "{not json".into()).await;
    assert_eq!(s, 400);
}

#[tokio::test]
async fn weight_overrides_apply() {
    let st = state();
    let url = spawn(st.clone()).await;
    let mut rng = StdRng::seed_from_u64(5);
    let mut req = random_request(&mut rng);
    req.weights = Some(chartaudit_service::WeightOverrides {
        fmt: Some(1.0),
        ..Default::default()
    });
    let (s, body) = post(&url, "/v1/score", "application/json", serde_json::to_string(&req).unwrap()).await;
    assert_eq!(s, 200);
    assert_eq!(body["weights"]["fmt"], 1.0);
    assert_eq!(body["weights"]["fact"], 0.2);
}

#[tokio::test]
async fn bearer_token_guards_scoring_routes() {
    let url = spawn(state().with_token(Some("t0k".into()))).await;
    let mut rng = StdRng::seed_from_u64(3);
    let body = serde_json::to_string(&random_request(&mut rng)).unwrap();
    let (s, _) = post(&url, "/v1/score", "application/json", body.clone()).await;
    assert_eq!(s, 401);
    let resp = reqwest::Client::new()
        .post(format!("{url}/v1/score"))
        .header("content-type", "application/json")
        .header("authorization", "Bearer t0k")
        .body(body)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(reqwest::get(format!("{url}/health")).await.unwrap().status(), 200);
}

#[tokio::test]
async fn uniform_group_has_zero_advantages() {
    let url = spawn(state()).await;
    let mut rng = StdRng::seed_from_u64(9);
    let one = random_request(&mut rng);
    let group = vec![one; 8];
    let (s, body) = post(&url, "/v1/score_group", "application/json", serde_json::to_string(&group).unwrap()).await;
    assert_eq!(s, 200);
    let resp: GroupResponse = serde_json::from_value(body).unwrap();
    assert_eq!(resp.breakdowns.len(), 8);
    assert!(resp.advantages.iter().all(|&a| a == 0.0), "{:?}", resp.advantages);

    let (s, body) = post(&url, "/v1/score_group", "application/json", serde_json::to_string(&group[..7]).unwrap()).await;
    assert_eq!((s, body["field"].as_str()), (400, Some("requests")));
}

#[tokio::test]
async fn group_advantages_are_standardized() {
    let st = state();
    let url = spawn(st).await;
    let mut rng = StdRng::seed_from_u64(21);
    let group: Vec<ScoreRequest> = (0..8).map(|_| random_request(&mut rng)).collect();
    let (s, body) = post(&url, "/v1/score_group", "application/json", serde_json::to_string(&group).unwrap()).await;
    assert_eq!(s, 200);
    let resp: GroupResponse = serde_json::from_value(body).unwrap();
    let totals: Vec<f64> = resp.breakdowns.iter().map(|b| b.total).collect();
    let mean = totals.iter().sum::<f64>() / 8.0;
    let sd = (totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
    for (a, t) in resp.advantages.iter().zip(&totals) {
        let want = if sd > 0.0 { (t - mean) / sd } else { 0.0 };
        assert!((a - want).abs() < 1e-9);
    }
}

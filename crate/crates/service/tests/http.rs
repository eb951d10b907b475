use std::net::SocketAddr;
use std::path::Path;

use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use timbre_core::bank::StimulusBank;
use timbre_core::ratings::{aggregate, read_jsonl, ExclusionPolicy};
use timbre_core::wav::decode_wav;
use timbre_service::screening::ScreeningConfig;
use timbre_service::{serve, AppState, ServiceConfig};

const TOKEN: &str = "test-admin-token";

fn small_bank() -> StimulusBank {
    let mut bank = StimulusBank::study_default();
    bank.patches.truncate(4);
    bank
}

async fn start(bank: Option<&StimulusBank>, log: &Path) -> (SocketAddr, AppState) {
    let state = AppState::open(
        bank,
        ServiceConfig {
            log_path: log.to_path_buf(),
            admin_token: Some(TOKEN.into()),
            screening: ScreeningConfig::default(),
        },
    )
    .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, state.clone()));
    (addr, state)
}

/// Picks the quietest interval of the left channel, as a listener on
/// headphones would.
fn ideal_answer(wav: &[u8]) -> usize {
    let data = decode_wav(wav).unwrap();
    let left = &data.channels[0];
    let third = left.len() / 3;
    let energy = |k: usize| left[k * third..(k + 1) * third].iter().map(|v| v * v).sum::<f64>();
    (0..3).min_by(|&a, &b| energy(a).total_cmp(&energy(b))).unwrap()
}

async fn answers(client: &Client, base: &str, session: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for t in 0..6 {
        let resp = client
            .get(format!("{base}/api/screening/{session}/{t}.wav"))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        out.push(ideal_answer(&resp.bytes().await.unwrap()));
    }
    out
}

async fn new_session(client: &Client, base: &str, body: Value) -> Value {
    let resp = client.post(format!("{base}/api/sessions")).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    resp.json().await.unwrap()
}

async fn passed_session(client: &Client, base: &str, body: Value) -> String {
    let s = new_session(client, base, body).await;
    let id = s["session_id"].as_str().unwrap().to_string();
    let a = answers(client, base, &id).await;
    let resp = client
        .post(format!("{base}/api/sessions/{id}/screening"))
        .json(&json!({ "answers": a }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let v: Value = resp.json().await.unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["correct"], 6);
    id
}

async fn rate(client: &Client, base: &str, id: &str, index: usize, rating: f64) -> reqwest::Response {
    client
        .post(format!("{base}/api/sessions/{id}/ratings"))
        .json(&json!({ "trial_index": index, "rating": rating, "replay_count_a": 1, "replay_count_b": 2 }))
        .send()
        .await
        .unwrap()
}

async fn export(client: &Client, base: &str) -> String {
    let resp = client
        .get(format!("{base}/api/export"))
        .bearer_auth(TOKEN)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    resp.text().await.unwrap()
}

#[tokio::test]
async fn full_bank_session_has_120_trials() {
    let dir = tempfile::tempdir().unwrap();
    let bank = StimulusBank::study_default();
    let (addr, _) = start(Some(&bank), &dir.path().join("log.jsonl")).await;
    let base = format!("http://{addr}");
    let client = Client::new();
    let a = new_session(&client, &base, json!({})).await;
    let b = new_session(&client, &base, json!({ "age": 30 })).await;
    assert_eq!(a["total_trials"], 120);
    assert_eq!(a["trials"].as_array().unwrap().len(), 120);
    assert_eq!(a["next_trial_index"], 0);
    assert_eq!(a["screening"]["state"], "pending");
    assert_ne!(a["session_id"], b["session_id"]);
    assert_eq!(a["session_id"].as_str().unwrap().len(), 32);
    assert_ne!(a["trials"], b["trials"]);

    let resp = client.get(format!("{base}/api/stimuli/saw_static.wav")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "audio/wav");
    assert!(resp.headers().contains_key("cache-control"));
    let etag = resp.headers()["etag"].clone();
    let wav = decode_wav(&resp.bytes().await.unwrap()).unwrap();
    assert_eq!((wav.sample_rate, wav.channels.len(), wav.channels[0].len()), (44_100, 1, 44_100));
    let resp = client
        .get(format!("{base}/api/stimuli/saw_static.wav"))
        .header("if-none-match", etag)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_MODIFIED);
    for bad in ["nope.wav", "saw_static.mp3"] {
        let resp = client.get(format!("{base}/api/stimuli/{bad}")).send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    }
}

#[tokio::test]
async fn screening_gate() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(Some(&small_bank()), &dir.path().join("log.jsonl")).await;
    let base = format!("http://{addr}");
    let client = Client::new();

    let s = new_session(&client, &base, json!({})).await;
    let id = s["session_id"].as_str().unwrap();
    let resp = client.get(format!("{base}/api/screening/{id}/0.wav")).send().await.unwrap();
    let wav = decode_wav(&resp.bytes().await.unwrap()).unwrap();
    assert_eq!(wav.channels.len(), 2);
    let resp = client.get(format!("{base}/api/screening/{id}/6.wav")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);

    let resp = client
        .post(format!("{base}/api/sessions/{id}/screening"))
        .json(&json!({ "answers": [0, 1, 2] }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    // ratings before screening are refused
    assert_eq!(rate(&client, &base, id, 0, 1.0).await.status(), StatusCode::CONFLICT);

    // exactly four right
    let mut a = answers(&client, &base, id).await;
    a[0] = (a[0] + 1) % 3;
    a[1] = (a[1] + 1) % 3;
    let resp = client
        .post(format!("{base}/api/sessions/{id}/screening"))
        .json(&json!({ "answers": a }))
        .send()
        .await
        .unwrap();
    let v: Value = resp.json().await.unwrap();
    assert_eq!((v["passed"].clone(), v["correct"].clone()), (json!(false), json!(4)));
    let resp = client
        .post(format!("{base}/api/sessions/{id}/screening"))
        .json(&json!({ "answers": a }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CONFLICT);
    assert_eq!(rate(&client, &base, id, 0, 1.0).await.status(), StatusCode::CONFLICT);

    // five right passes
    let s = new_session(&client, &base, json!({})).await;
    let id = s["session_id"].as_str().unwrap();
    let mut a = answers(&client, &base, id).await;
    a[3] = (a[3] + 2) % 3;
    let resp = client
        .post(format!("{base}/api/sessions/{id}/screening"))
        .json(&json!({ "answers": a }))
        .send()
        .await
        .unwrap();
    let v: Value = resp.json().await.unwrap();
    assert_eq!(v["passed"], true);
    let again = client
        .post(format!("{base}/api/sessions/{id}/screening"))
        .json(&json!({ "answers": a }))
        .send()
        .await
        .unwrap();
    assert_eq!(again.status(), StatusCode::CONFLICT);
}

#[tokio::test]
async fn rating_rules_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let bank = small_bank();
    let (addr, _) = start(Some(&bank), &dir.path().join("log.jsonl")).await;
    let base = format!("http://{addr}");
    let client = Client::new();

    let unknown = rate(&client, &base, "0000", 0, 1.0).await;
    assert_eq!(unknown.status(), StatusCode::NOT_FOUND);
    let resp = client.get(format!("{base}/api/sessions/0000")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);

    let id = passed_session(&client, &base, json!({ "participant_id": "alice" })).await;
    assert_eq!(rate(&client, &base, &id, 0, 4.25).await.status(), StatusCode::BAD_REQUEST);
    assert_eq!(rate(&client, &base, &id, 0, 9.5).await.status(), StatusCode::BAD_REQUEST);
    assert_eq!(rate(&client, &base, &id, 0, -0.5).await.status(), StatusCode::BAD_REQUEST);
    assert_eq!(rate(&client, &base, &id, 1, 4.5).await.status(), StatusCode::CONFLICT);
    let resp = client
        .post(format!("{base}/api/sessions/{id}/ratings"))
        .header("content-type", "application/json")
        .body("{\"trial_index\": 0}")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let first: Value = rate(&client, &base, &id, 0, 4.5).await.json().await.unwrap();
    assert_eq!(first["next_trial_index"], 1);
    assert_eq!(first["duplicate"], false);
    let dup = rate(&client, &base, &id, 0, 8.0).await;
    assert_eq!(dup.status(), StatusCode::OK);
    let dup: Value = dup.json().await.unwrap();
    assert_eq!(dup["duplicate"], true);
    assert_eq!(dup["rating"], 4.5);
    assert_eq!(dup["submitted_at"], first["submitted_at"]);

    let total = 10;
    for t in 1..total {
        let resp = rate(&client, &base, &id, t, 0.5).await;
        assert_eq!(resp.status(), StatusCode::OK);
    }
    let done: Value = client
        .get(format!("{base}/api/sessions/{id}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(done["complete"], true);
    assert_eq!(done["next_trial_index"], total);
    assert_eq!(rate(&client, &base, &id, total, 1.0).await.status(), StatusCode::CONFLICT);

    let flagged = passed_session(&client, &base, json!({ "hearing_issues": true })).await;
    assert_eq!(rate(&client, &base, &flagged, 0, 0.0).await.status(), StatusCode::OK);

    let resp = client.get(format!("{base}/api/export")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let resp = client.get(format!("{base}/api/export")).bearer_auth("wrong").send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);

    let records = read_jsonl(export(&client, &base).await.as_bytes()).unwrap();
    assert_eq!(records.len(), total + 1);
    let mine: Vec<_> = records.iter().filter(|r| r.session_id == id).collect();
    assert_eq!(mine.len(), total);
    assert!(mine.iter().all(|r| r.participant_id == "alice" && !r.excluded_flag));
    assert!(mine.iter().enumerate().all(|(i, r)| r.trial_index == i));
    let theirs: Vec<_> = records.iter().filter(|r| r.session_id == flagged).collect();
    assert!(theirs[0].excluded_flag);

    let agg = aggregate(&records, &bank.ids(), &ExclusionPolicy::default()).unwrap();
    assert_eq!(agg.included(), 1);
}

#[tokio::test]
async fn empty_store_exports_nothing_and_missing_bank_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(None, &dir.path().join("log.jsonl")).await;
    let base = format!("http://{addr}");
    let client = Client::new();
    assert_eq!(export(&client, &base).await, "");
    let resp = client.post(format!("{base}/api/sessions")).json(&json!({})).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn state_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let bank = small_bank();
    let (addr, _) = start(Some(&bank), &log).await;
    let base = format!("http://{addr}");
    let client = Client::new();
    let id = passed_session(&client, &base, json!({})).await;
    for t in 0..4 {
        assert_eq!(rate(&client, &base, &id, t, 2.0).await.status(), StatusCode::OK);
    }
    let before = export(&client, &base).await;

    let (addr2, _) = start(Some(&bank), &log).await;
    let base2 = format!("http://{addr2}");
    let view: Value = client
        .get(format!("{base2}/api/sessions/{id}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(view["next_trial_index"], 4);
    assert_eq!(view["screening"]["state"], "passed");
    assert_eq!(export(&client, &base2).await, before);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_never_duplicate_a_trial() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(Some(&small_bank()), &dir.path().join("log.jsonl")).await;
    let base = format!("http://{addr}");
    let client = Client::new();
    let id = passed_session(&client, &base, json!({})).await;
    let mut handles = Vec::new();
    for _ in 0..8 {
        let (client, base, id) = (client.clone(), base.clone(), id.clone());
        handles.push(tokio::spawn(async move {
            for t in 0..10 {
                let status = rate(&client, &base, &id, t, 3.0).await.status();
                assert!(status == StatusCode::OK || status == StatusCode::CONFLICT);
            }
        }));
    }
    for h in handles {
        h.await.unwrap();
    }
    let records = read_jsonl(export(&client, &base).await.as_bytes()).unwrap();
    let mut seen: Vec<usize> = records.iter().map(|r| r.trial_index).collect();
    let n = seen.len();
    seen.dedup();
    assert_eq!(seen.len(), n);
    assert_eq!(n, 10);
}

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use futures::StreamExt;
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use serde_json::{json, Value};
use voxpilot_core::audio::{FeatureConfig, Waveform};
use voxpilot_core::augment::expand_dataset;
use voxpilot_core::dataset::{build_dataset, Split, Template};
use voxpilot_core::engines::Engines;
use voxpilot_core::eval::EvalSample;
use voxpilot_core::neuro::Network;
use voxpilot_core::pipelines::siamese::VectorStore;
use voxpilot_core::pipelines::{PipelineId, Preprocessor};
use voxpilot_core::workflow::{custom_renderings, eval_samples, train_pipelines, Corpus, TrainPlan};
use voxpilot_core::CommandLabel;
use voxpilot_drone::api::{serve_api, ApiServer, Service};
use voxpilot_drone::Simulator;

struct Fixture {
    classifier: Network,
    encoder: Network,
    store: VectorStore,
    test: Vec<EvalSample>,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let ds = expand_dataset(&build_dataset(30, 6, 5).unwrap(), 5).unwrap();
        let pre = Preprocessor::new(FeatureConfig::default()).unwrap();
        let corpus = Corpus::prepare(&ds, &pre, 40, 5).unwrap();
        let mut plan = TrainPlan::new(5);
        plan.p2.epochs = 8;
        plan.p3.epochs = 4;
        plan.train_pairs = 600;
        plan.val_pairs = 60;
        let trained =
            train_pipelines(&corpus, &plan, FeatureConfig::default(), &[PipelineId::P2, PipelineId::P3]).unwrap();
        let e = trained.engines;
        Fixture {
            classifier: e.classifier.unwrap(),
            encoder: e.encoder.unwrap(),
            store: e.store.unwrap(),
            test: eval_samples(&ds, Split::Test).unwrap(),
        }
    })
}

fn engines() -> Engines {
    let f = fixture();
    let mut e = Engines::empty(FeatureConfig::default()).unwrap();
    e.classifier = Some(f.classifier.clone());
    e.encoder = Some(f.encoder.clone());
    e.store = Some(f.store.clone());
    e
}

struct Harness {
    server: ApiServer,
    sim: Arc<Simulator>,
    client: reqwest::Client,
}

impl Harness {
    async fn start() -> Self {
        let sim = Arc::new(Simulator::default());
        let service = Arc::new(Service::new(engines(), sim.clone()));
        let server = serve_api(service, "127.0.0.1:0").await.unwrap();
        Harness {
            server,
            sim,
            client: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.server.local_addr)
    }

    async fn post_json(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.client.post(self.url(path)).json(&body).send().await.unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn post_form(&self, path: &str, form: Form) -> (StatusCode, Value) {
        let r = self.client.post(self.url(path)).multipart(form).send().await.unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn get(&self, path: &str) -> Value {
        self.client.get(self.url(path)).send().await.unwrap().json().await.unwrap()
    }
}

fn wav(w: &Waveform) -> Part {
    Part::bytes(w.to_wav_bytes()).file_name("clip.wav")
}

fn sample(label: CommandLabel) -> &'static EvalSample {
    fixture().test.iter().find(|s| s.label.builtin() == label).unwrap()
}

#[tokio::test]
async fn infer_round_trip_matches_engine_and_moves_drone() {
    let h = Harness::start().await;
    let up = sample(CommandLabel::Up);
    let decoded = Waveform::from_wav_bytes(&up.waveform.to_wav_bytes()).unwrap();
    let expected = engines().run(PipelineId::P2, &decoded).unwrap();
    assert_eq!(expected.label.name(), "UP", "fixture classifier should recognise the sample");

    let (status, body) = h.post_json("/command", json!({ "command": "takeoff" })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["reply"], "ok");

    let form = Form::new().text("pipeline", "p2").part("audio", wav(&up.waveform));
    let (status, body) = h.post_form("/infer", form).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["direction"], "UP");
    assert_eq!(body["decision"]["direction"], "UP");
    assert_eq!(body["decision"]["pipeline"], "P2");
    let confidence = body["decision"]["confidence"].as_f64().unwrap();
    assert!((confidence - expected.confidence).abs() < 1e-12);
    for stage in ["preprocess", "classify"] {
        assert!(body["decision"]["stage_latencies"][stage].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(body["dispatched"], "up 20");
    assert_eq!(body["reply"], "ok");
    assert_eq!(body["state"]["z"], 100);
    assert_eq!(h.sim.state().z, 100);
}

#[tokio::test]
async fn infer_without_dispatch_leaves_state() {
    let h = Harness::start().await;
    let form = Form::new()
        .text("pipeline", "P3")
        .text("k", "3")
        .text("dispatch", "false")
        .part("audio", wav(&sample(CommandLabel::Left).waveform));
    let (status, body) = h.post_form("/infer", form).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["reply"], Value::Null);
    assert!(h.sim.log().is_empty());
    let stages = body["decision"]["stage_latencies"].as_object().unwrap();
    assert_eq!(stages.len(), 3);
}

#[tokio::test]
async fn malformed_requests_are_client_errors() {
    let h = Harness::start().await;
    let w = &sample(CommandLabel::Up).waveform;
    let cases = [
        Form::new().text("pipeline", "p9").part("audio", wav(w)),
        Form::new().text("pipeline", "p2"),
        Form::new().part("audio", wav(w)),
        Form::new().text("pipeline", "p2").part("audio", Part::bytes(b"not a wav".to_vec())),
        Form::new().text("pipeline", "p2").text("threshold", "1.5").part("audio", wav(w)),
        Form::new().text("pipeline", "p2").text("step", "5").part("audio", wav(w)),
        Form::new().text("pipeline", "p2").text("colour", "red").part("audio", wav(w)),
    ];
    for form in cases {
        let (status, body) = h.post_form("/infer", form).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(body["error"].as_str().is_some_and(|e| !e.is_empty()));
    }
    let r = h.client.post(h.url("/interpret")).body("{").send().await.unwrap();
    assert!(r.status().is_client_error());
}

#[tokio::test]
async fn missing_model_is_a_server_error() {
    let h = Harness::start().await;
    let form = Form::new().text("pipeline", "p1").part("audio", wav(&sample(CommandLabel::Up).waveform));
    let (status, body) = h.post_form("/infer", form).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].as_str().unwrap().contains("P1"));
    let list = h.get("/pipelines").await;
    let available: Vec<bool> = list["pipelines"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["available"].as_bool().unwrap())
        .collect();
    assert_eq!(available, [false, true, true]);
}

#[tokio::test]
async fn state_after_takeoff_and_up() {
    let h = Harness::start().await;
    h.post_json("/command", json!({ "command": "takeoff" })).await;
    h.post_json("/command", json!({ "command": "up 20" })).await;
    let state = h.get("/state").await;
    assert_eq!(state["z"], 100);
    assert_eq!(state["flying"], true);
    let (_, body) = h.post_json("/command", json!({ "command": "sideways 3" })).await;
    assert_eq!(body["reply"], "error");
}

#[tokio::test]
async fn interpret_dispatches_text_commands() {
    let h = Harness::start().await;
    h.post_json("/command", json!({ "command": "takeoff" })).await;
    let (status, body) = h.post_json("/interpret", json!({ "text": "please go up now" })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["direction"], "UP");
    assert_eq!(body["dispatched"], "up 20");
    assert_eq!(body["state"]["z"], 100);

    let (_, body) = h.post_json("/interpret", json!({ "text": "vire para a esquerda", "step": 40 })).await;
    assert_eq!(body["direction"], "LEFT");
    assert_eq!(body["state"]["y"], -40);

    let (_, body) = h.post_json("/interpret", json!({ "text": "make me a sandwich" })).await;
    assert_eq!(body["direction"], "UNKNOWN");
    assert_eq!(body["dispatched"], Value::Null);
    assert!(body["reason"].is_string());
}

#[tokio::test]
async fn enrollment_adds_a_custom_command() {
    let h = Harness::start().await;
    let hover = Template::hover();
    let samples = custom_renderings(&hover, 8, 4, 5, "enroll");
    let mut form = Form::new().text("name", "HOVER").text("action", "takeoff");
    for w in &samples[..5] {
        form = form.part("audio", wav(w));
    }
    let (status, body) = h.post_form("/enroll", form).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["added"], 5);
    assert_eq!(body["total"], 5);
    assert_eq!(body["action"], "takeoff");
    assert_eq!(h.get("/pipelines").await["labels"]["HOVER"], 5);

    let form = Form::new().text("pipeline", "p3").part("audio", wav(&samples[6]));
    let (status, body) = h.post_form("/infer", form).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    if body["direction"] == "HOVER" {
        assert_eq!(body["dispatched"], "takeoff");
        assert_eq!(h.sim.state().z, 80);
    }

    for (name, with_audio) in [("UP", true), ("", true), ("SPIN", false)] {
        let mut form = Form::new().text("name", name);
        if with_audio {
            form = form.part("audio", wav(&samples[0]));
        }
        let (status, _) = h.post_form("/enroll", form).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "name `{name}`");
    }
}

#[tokio::test]
async fn event_stream_reports_decisions_and_state() {
    let h = Harness::start().await;
    let response = h.client.get(h.url("/events")).send().await.unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    let mut body = response.bytes_stream();
    tokio::time::sleep(Duration::from_millis(100)).await;
    h.post_json("/command", json!({ "command": "takeoff" })).await;

    let mut text = String::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    while !(text.contains("event: decision") && text.contains("event: state")) {
        let chunk = tokio::time::timeout_at(deadline, body.next())
            .await
            .expect("events in time")
            .unwrap()
            .unwrap();
        text.push_str(&String::from_utf8_lossy(&chunk));
    }
    let records: Vec<Value> = text
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|d| serde_json::from_str(d).unwrap())
        .collect();
    assert!(records.iter().all(|r| r["state"]["z"] == 80));
    assert!(records.iter().any(|r| r["kind"] == "command" && r["reply"] == "ok"));
}

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tower::ServiceExt;
use vulnhunter::corpus::SyntheticSpec;
use vulnhunter::engine::{Engine, EngineOptions};
use vulnhunter::model::{init_model, Checkpoint, ModelConfig, TaskSpec};
use vulnhunter::tokenizer::Vocab;
use vulnhunter_service::{router, AppState};

fn checkpoints() -> (Vocab, [Checkpoint; 3]) {
    let reg = SyntheticSpec::new(10, 3, 2, 5).registry();
    let vocab = Vocab::train(&["int f ( char * buf ) { gets ( buf ) ; return 0 ; }"], 290).unwrap();
    let mk = |task| {
        let mut cfg = ModelConfig::tiny(vocab.len(), reg.n_ids(), reg.n_types());
        cfg.max_seq_len = 48;
        Checkpoint::new(task, init_model(&cfg).unwrap(), reg.clone(), vocab.hash())
    };
    let cks = [mk(TaskSpec::Detect), mk(TaskSpec::Multitask), mk(TaskSpec::Regress)];
    (vocab, cks)
}

fn state(threshold: f64) -> Arc<AppState> {
    let (vocab, [d, c, r]) = checkpoints();
    let engine = Engine::new(vocab, d, c, r)
        .unwrap()
        .with_options(EngineOptions {
            threshold,
            top_k: Some(3),
        })
        .unwrap();
    AppState::new(Some(engine))
}

async fn call(state: Arc<AppState>, method: &str, path: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(state).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn schema_validator() -> jsonschema::Validator {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/schema/diagnostic.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[tokio::test]
async fn empty_function_list() {
    let (status, body) = call(state(0.5), "POST", "/v1/analyze", r#"{"functions": []}"#).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["diagnostics"], Value::Array(vec![]));
    assert!(schema_validator().is_valid(&v));
}

#[tokio::test]
async fn malformed_body_is_400() {
    for body in ["{", r#"{"functions": 3}"#, r#"{"nothing": true}"#] {
        let (status, out) = call(state(0.5), "POST", "/v1/analyze", body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(json(&out)["error"]["code"], "bad_request");
    }
}

#[tokio::test]
async fn no_models_is_503() {
    let empty = AppState::new(None);
    let (status, out) = call(empty.clone(), "GET", "/v1/health", "").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(json(&out)["status"], "unavailable");
    let (status, _) = call(empty, "POST", "/v1/analyze", r#"{"functions": []}"#).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn health_reports_checkpoint_hashes() {
    let (vocab, cks) = checkpoints();
    let (status, out) = call(state(0.5), "GET", "/v1/health", "").await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&out);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["version"], vulnhunter::VERSION);
    for (name, ck) in ["detector", "classifier", "regressor"].iter().zip(&cks) {
        let want = hex::encode(Sha256::digest(ck.to_bytes()));
        assert_eq!(v["model_hashes"][name], Value::from(want));
        assert_eq!(ck.header.vocab_hash, vocab.hash());
    }
    assert_eq!(v["model_hashes"]["vocab"], Value::from(vocab.hash()));
}

#[tokio::test]
async fn functions_are_keyed_by_id_and_schema_valid() {
    let body = r#"{"functions": [
        {"id": "second", "code": "int g(int a) { return a; }"},
        {"id": "first", "code": "int f(char *buf)\n{\n  gets ( buf ) ;\n  return 0;\n}"}
    ]}"#;
    let (status, out) = call(state(0.0), "POST", "/v1/analyze", body).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&out);
    let errors: Vec<String> = schema_validator().iter_errors(&v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    let files: Vec<&str> = v["diagnostics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["file"].as_str().unwrap())
        .collect();
    assert_eq!(files, ["first", "second"]);
}

#[tokio::test]
async fn long_function_is_422_with_report() {
    let body: String = (0..60).map(|i| format!("  v{i} = {i};\\n")).collect();
    let req = format!(r#"{{"file_text": "void big(void)\n{{\n{body}}}\n", "file": "big.c"}}"#);
    let (status, out) = call(state(0.0), "POST", "/v1/analyze", &req).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let v = json(&out);
    assert_eq!(v["error"]["code"], "function_too_long");
    assert_eq!(v["truncated"][0], "big.c:big");
    assert_eq!(v["report"]["diagnostics"][0]["truncated"], true);
    assert!(schema_validator().is_valid(&v["report"]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_agree() {
    let st = state(0.0);
    let body = r#"{"file_text": "int a(void) { return 1; }\nint b(char *p) { gets ( p ) ; return 0; }\n"}"#;
    let tasks: Vec<_> = (0..8)
        .map(|_| tokio::spawn(call(st.clone(), "POST", "/v1/analyze", body)))
        .collect();
    let mut outs = Vec::new();
    for t in tasks {
        let (status, out) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        outs.push(out);
    }
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn serves_over_tcp() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(vulnhunter_service::serve(listener, state(0.5), async {
        let _ = rx.await;
    }));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /v1/health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).await.unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains(r#""status":"ok""#));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}

use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};
use stereobench::backends::{
    BackendError, HttpQe, HttpScorer, HttpTranslator, ModelRef, QePair, QualityEstimator,
    RetryPolicy, Scorer, Translator,
};

struct Recorded {
    path: String,
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

struct Stub {
    url: String,
    log: Arc<Mutex<Vec<Recorded>>>,
    server: Arc<tiny_http::Server>,
}

impl Stub {
    fn start(handler: impl Fn(&str, &Value) -> (u16, Value) + Send + Sync + 'static) -> Stub {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let (srv, lg) = (server.clone(), log.clone());
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut raw = String::new();
                req.as_reader().read_to_string(&mut raw).unwrap();
                let body: Value = serde_json::from_str(&raw).unwrap_or(Value::Null);
                let auth = req
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.to_string());
                let path = req.url().to_string();
                let (status, reply) = handler(&path, &body);
                lg.lock().unwrap().push(Recorded { path, auth, body });
                let resp = tiny_http::Response::from_string(reply.to_string())
                    .with_status_code(status)
                    .with_header(
                        "Content-Type: application/json".parse::<tiny_http::Header>().unwrap(),
                    );
                let _ = req.respond(resp);
            }
        });
        Stub { url, log, server }
    }

    fn requests(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
    }
}

fn texts(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn score_reply(body: &Value) -> Value {
    let results: Vec<Value> = body["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            let n = t.as_str().unwrap().split(' ').count();
            json!({ "tokens": vec!["x"; n], "logprobs": vec![-0.5; n] })
        })
        .collect();
    json!({ "results": results })
}

#[test]
fn translate_request_shape_and_auth() {
    let stub = Stub::start(|_, body| {
        let out: Vec<String> = body["texts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| format!("<{}>", t.as_str().unwrap()))
            .collect();
        (200, json!({ "translations": out }))
    });
    let t = HttpTranslator::new(&stub.url, "stub")
        .with_api_key("secret")
        .with_batch_size(2)
        .with_retry(RetryPolicy::none());
    let out = t.translate_batch(&texts(&["a", "b", "c"]), "en", "sk").unwrap();
    let got: Vec<String> = out.into_iter().map(Result::unwrap).collect();
    assert_eq!(got, vec!["<a>", "<b>", "<c>"]);
    let log = stub.log.lock().unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].path, "/translate");
    assert_eq!(log[0].auth.as_deref(), Some("Bearer secret"));
    assert_eq!(log[0].body["source_lang"], "en");
    assert_eq!(log[0].body["target_lang"], "sk");
    let mut sizes: Vec<usize> = log.iter().map(|r| r.body["texts"].as_array().unwrap().len()).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![1, 2]);
}

#[test]
fn qe_unsupported_language_is_per_item() {
    let stub = Stub::start(|_, body| {
        if body["target_lang"] == "mt" {
            (422, json!({ "error": "unsupported_language" }))
        } else {
            let n = body["pairs"].as_array().unwrap().len();
            (200, json!({ "scores": vec![0.9; n] }))
        }
    });
    let qe = HttpQe::new(&stub.url, "stub").with_retry(RetryPolicy::none());
    let pairs = vec![QePair::new("I am tidy.", "Som upratany."), QePair::new("x", "y")];
    let ok = qe.qe_batch(&pairs, "sk").unwrap();
    assert!(ok.iter().all(|r| r.as_ref().unwrap().value() == 0.9));
    let unsupported = qe.qe_batch(&pairs, "mt").unwrap();
    assert_eq!(unsupported.len(), 2);
    assert!(unsupported
        .iter()
        .all(|r| matches!(r, Err(BackendError::UnsupportedLanguage(l)) if l == "mt")));
    let log = stub.log.lock().unwrap();
    assert_eq!(log[0].path, "/qe");
    assert_eq!(log[0].body["pairs"][0]["src"], "I am tidy.");
    assert_eq!(log[0].body["pairs"][0]["mt"], "Som upratany.");
}

#[test]
fn qe_scores_outside_unit_interval_are_rejected() {
    let stub = Stub::start(|_, _| (200, json!({ "scores": [1.5] })));
    let qe = HttpQe::new(&stub.url, "stub").with_retry(RetryPolicy::none());
    let r = qe.qe_batch(&[QePair::new("a", "b")], "sk").unwrap();
    assert!(r[0].is_err());
}

#[test]
fn score_request_shape() {
    let stub = Stub::start(|_, body| (200, score_reply(body)));
    let s = HttpScorer::new(&stub.url, "stub").with_retry(RetryPolicy::none());
    let out = s
        .score_batch(&texts(&["The man said hi", "", "one"]), &ModelRef::new("m1"))
        .unwrap();
    assert_eq!(out[0].as_ref().unwrap().len(), 4);
    assert!(matches!(out[1], Err(BackendError::Precondition(_))));
    assert_eq!(out[2].as_ref().unwrap().logprobs(), &[-0.5]);
    let log = stub.log.lock().unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].path, "/score");
    assert_eq!(log[0].body["model"], "m1");
    assert_eq!(log[0].body["texts"], json!(["The man said hi", "one"]));
}

#[test]
fn score_model_endpoint_overrides_base_url() {
    let stub = Stub::start(|_, body| (200, score_reply(body)));
    let s = HttpScorer::new("http://127.0.0.1:9", "stub").with_retry(RetryPolicy::none());
    let mut model = ModelRef::new("m1");
    model.endpoint = Some(stub.url.clone());
    assert!(s.score_batch(&texts(&["a b"]), &model).unwrap()[0].is_ok());
    assert_eq!(stub.requests(), 1);
}

#[test]
fn score_413_is_truncation() {
    let stub = Stub::start(|_, _| (413, json!({ "error": "too_long", "limit": 8 })));
    let s = HttpScorer::new(&stub.url, "stub").with_retry(RetryPolicy::none());
    let out = s.score_batch(&texts(&["a", "b"]), &ModelRef::new("m")).unwrap();
    assert!(out.iter().all(|r| matches!(r, Err(BackendError::Truncated))));
}

#[test]
fn score_without_logprobs_is_fatal() {
    let stub = Stub::start(|_, _| (200, json!({ "results": [{ "tokens": ["a"] }] })));
    let s = HttpScorer::new(&stub.url, "stub").with_retry(RetryPolicy::none());
    let err = s.score_batch(&texts(&["a"]), &ModelRef::new("m")).unwrap_err();
    assert!(err.is_fatal(), "{err:?}");
}

#[test]
fn score_positive_logprob_fails_the_item() {
    let stub = Stub::start(|_, _| {
        (200, json!({ "results": [{ "tokens": ["a"], "logprobs": [0.3] }] }))
    });
    let s = HttpScorer::new(&stub.url, "stub").with_retry(RetryPolicy::none());
    let out = s.score_batch(&texts(&["a"]), &ModelRef::new("m")).unwrap();
    assert!(out[0].is_err());
}

#[test]
fn transient_errors_are_retried() {
    let calls = Arc::new(Mutex::new(0));
    let c = calls.clone();
    let stub = Stub::start(move |_, body| {
        let mut n = c.lock().unwrap();
        *n += 1;
        if *n < 3 {
            (503, json!({ "error": "busy" }))
        } else {
            (200, score_reply(body))
        }
    });
    let retry = RetryPolicy { max_retries: 3, base_delay_ms: 1, max_delay_ms: 2 };
    let s = HttpScorer::new(&stub.url, "stub").with_retry(retry);
    let out = s.score_batch(&texts(&["a b"]), &ModelRef::new("m")).unwrap();
    assert!(out[0].is_ok());
    assert_eq!(*calls.lock().unwrap(), 3);
}

#[test]
fn one_bad_item_fails_only_itself() {
    let stub = Stub::start(|_, body| {
        let texts = body["texts"].as_array().unwrap();
        if texts.iter().any(|t| t == "poison") {
            (400, json!({ "error": "bad input" }))
        } else {
            (200, score_reply(body))
        }
    });
    let s = HttpScorer::new(&stub.url, "stub").with_retry(RetryPolicy::none());
    let out = s
        .score_batch(&texts(&["a", "poison", "b c"]), &ModelRef::new("m"))
        .unwrap();
    assert!(out[0].is_ok());
    assert!(matches!(out[1], Err(BackendError::Status { status: 400, .. })));
    assert_eq!(out[2].as_ref().unwrap().len(), 2);
}

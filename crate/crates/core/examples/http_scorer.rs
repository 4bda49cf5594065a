// Talking to a `/score` endpoint over HTTP, with a response cache in
// front. A small in-process server stands in for the model service.

use std::sync::Arc;
use std::thread;

use stereobench::backends::{CachedScorer, HttpScorer, ModelRef, ResponseCache, RetryPolicy, Scorer};

fn serve(server: tiny_http::Server, requests: usize) {
    for mut req in server.incoming_requests().take(requests) {
        let mut body = String::new();
        req.as_reader().read_to_string(&mut body).unwrap();
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        let results: Vec<serde_json::Value> = v["texts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| {
                let words: Vec<&str> = t.as_str().unwrap().split(' ').collect();
                let lps: Vec<f64> = words.iter().map(|w| -(w.len() as f64) / 4.0).collect();
                serde_json::json!({ "tokens": words, "logprobs": lps })
            })
            .collect();
        let resp = tiny_http::Response::from_string(serde_json::json!({ "results": results }).to_string());
        req.respond(resp).unwrap();
    }
}


pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let server = tiny_http::Server::http("127.0.0.1:0").map_err(|e| e.to_string())?;
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let handle = thread::spawn(move || serve(server, 1));

    let http = HttpScorer::new(&url, "local-shim").with_retry(RetryPolicy::none());
    let scorer = CachedScorer::new(http, Arc::new(ResponseCache::in_memory()));
    let model = ModelRef::new("tiny-lm");
    let texts = vec!["The man said \"I am tidy.\"".to_string(), "The woman said \"I am tidy.\"".to_string()];

    let first = scorer.score_batch(&texts, &model)?;
    for (t, r) in texts.iter().zip(&first) {
        let r = r.as_ref().map_err(|e| e.to_string())?;
        println!("{t}: {} tokens, logprobs {:?}", r.len(), r.logprobs());
    }
    handle.join().unwrap();
    // The server has gone; these come from the cache.
    let again = scorer.score_batch(&texts, &model)?;
    assert_eq!(format!("{first:?}"), format!("{again:?}"));
    Ok(())
}

fn main() {
    run_example().unwrap();
}

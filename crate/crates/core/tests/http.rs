//! HTTP backends against a minimal in-process server that serves a
//! synthetic model.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use baco::backends::http::{HttpModel, HttpModelConfig, HttpScorer, HttpScorerConfig};
use baco::backends::synthetic::SyntheticModel;
use baco::backends::{BackendError, ChatPrompt, Embedder, Judge, ModelBackend, NliModel, RewardModel};
use baco::decoder::{Decoder, Method};
use baco::GenerationConfig;
use common::{prompt, story_pair};
use serde_json::{json, Value};

type Handler = dyn Fn(&str, &Value) -> (u16, String) + Send + Sync;

/// Serve `handler` on an ephemeral port; returns the base URL.
fn serve(handler: Arc<Handler>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = handler.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).is_err() {
                    return;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let (status, text) = handler(&path, &body);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    format!("http://{addr}")
}

fn ids(v: &Value) -> Vec<u32> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as u32).collect()
}

/// Route the model endpoints to one of two synthetic models by name.
fn model_handler(models: Arc<[SyntheticModel; 2]>) -> Arc<Handler> {
    Arc::new(move |path: &str, body: &Value| {
        let m = if body["model"] == "base" { &models[0] } else { &models[1] };
        let out = match path {
            "/v1/info" => json!({
                "vocab_size": m.vocab_size(),
                "eos": [m.eos().id, m.eos().surface],
                "context_limit": m.context_limit(),
                "vocab_fingerprint": m.vocab_fingerprint(),
            }),
            "/v1/tokenize" => {
                let toks = if let Some(text) = body["text"].as_str() {
                    m.tokenize(text).unwrap().into_iter().map(|t| json!([t.id, t.surface])).collect::<Vec<_>>()
                } else {
                    let chat = ChatPrompt { system: None, user: body["chat"]["user"].as_str().unwrap().into() };
                    m.encode_prompt(&chat).unwrap().into_iter().map(|id| json!([id, ""])).collect()
                };
                json!({ "tokens": toks })
            }
            "/v1/next_token" => {
                let d = m.next_token_distribution(&ids(&body["context"])).unwrap();
                let entries: Vec<Value> = d.entries().iter().map(|(t, p)| json!([t.id, t.surface, p])).collect();
                json!({ "entries": entries, "residual_mass": 0.0 })
            }
            "/v1/seq_logprob" => {
                json!({ "logprob": m.sequence_logprob(&ids(&body["context"]), &ids(&body["continuation"])).unwrap() })
            }
            _ => return (404, "{}".into()),
        };
        (200, out.to_string())
    })
}

fn http_config(url: &str, model: &str) -> HttpModelConfig {
    serde_json::from_value(json!({ "url": url, "model": model, "top_k": 100000, "chat_template": "native" })).unwrap()
}

#[test]
fn http_models_decode_like_local_models() {
    let (base, aligned) = story_pair(0.7, 1e-3);
    let url = serve(model_handler(Arc::new([base, aligned])));
    let hb = HttpModel::connect(http_config(&url, "base")).unwrap();
    let ha = HttpModel::connect(http_config(&url, "aligned")).unwrap();
    let (base, aligned) = story_pair(0.7, 1e-3);
    assert_eq!(hb.vocab_fingerprint(), base.vocab_fingerprint());
    let cfg = GenerationConfig { samples_per_prompt: 4, seed: 9, max_tokens: 30, ..Default::default() };
    let method = Method::Baco { strategy: "P-Punc:0.6".parse().unwrap() };
    let remote = Decoder::new(&hb, &ha, method.clone(), cfg.clone()).unwrap().decode_group(&prompt("h")).unwrap();
    let local = Decoder::new(&base, &aligned, method, cfg).unwrap().decode_group(&prompt("h")).unwrap();
    for (r, l) in remote.traces.iter().zip(&local.traces) {
        assert_eq!(r.tokens, l.tokens);
        assert_eq!(r.text, l.text);
        assert!((r.gen_logprob - l.gen_logprob).abs() < 1e-12);
    }
    let ctx = ha.encode_prompt(&ChatPrompt::user("x")).unwrap();
    let cont: Vec<u32> = ha.tokenize(&local.traces[0].text).unwrap().into_iter().map(|t| t.id).collect();
    let lp = ha.sequence_logprob(&ctx, &cont).unwrap();
    assert!((lp - aligned.sequence_logprob(&ctx, &cont).unwrap()).abs() < 1e-12);
}

#[test]
fn scorer_endpoints() {
    let url = serve(Arc::new(|path: &str, body: &Value| {
        let out = match path {
            "/v1/embed" => json!({ "embedding": [body["text"].as_str().unwrap().len() as f64, 1.0] }),
            "/v1/nli" => json!({ "entailment": 0.7, "neutral": 0.2, "contradiction": 0.1 }),
            "/v1/reward" => json!({ "reward": 2.5 }),
            "/v1/chat" => json!({ "reply": format!("yes ({})", body["messages"][0]["role"].as_str().unwrap()) }),
            _ => return (404, "{}".into()),
        };
        (200, out.to_string())
    }));
    let s = HttpScorer::new(&HttpScorerConfig { url, model: "m".into(), timeout_secs: 5 }).unwrap();
    assert_eq!(s.embed("abc").unwrap(), vec![3.0, 1.0]);
    assert_eq!(s.classify("a", "b").unwrap().entailment, 0.7);
    assert_eq!(RewardModel::reward(&s, "p", "o").unwrap(), 2.5);
    assert_eq!(s.chat("q").unwrap(), "yes (user)");
}

#[test]
fn status_codes_map_to_error_kinds() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let url = serve(Arc::new(move |path: &str, _: &Value| {
        c.fetch_add(1, Ordering::SeqCst);
        match path {
            "/v1/embed" => (503, "overloaded".into()),
            "/v1/reward" => (400, "bad request".into()),
            "/v1/chat" => (200, "not json".into()),
            "/v1/nli" => (200, json!({ "entailment": 0.9, "neutral": 0.9, "contradiction": 0.9 }).to_string()),
            _ => (404, "{}".into()),
        }
    }));
    let s = HttpScorer::new(&HttpScorerConfig { url, model: "m".into(), timeout_secs: 5 }).unwrap();
    let e = s.embed("x").unwrap_err();
    assert!(matches!(e, BackendError::Transport(_)) && e.is_retryable(), "{e:?}");
    assert!(matches!(RewardModel::reward(&s, "p", "o").unwrap_err(), BackendError::Input(_)));
    assert!(matches!(s.chat("q").unwrap_err(), BackendError::Protocol(_)));
    assert!(matches!(s.classify("a", "b").unwrap_err(), BackendError::Protocol(_)));
    assert_eq!(calls.load(Ordering::SeqCst), 4);
}

#[test]
fn unreachable_server_is_retryable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let err = HttpModel::connect(http_config(&url, "base")).err().expect("no server");
    assert!(err.is_retryable(), "{err:?}");
}

//! HTTP backend against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use animetric_core::artifacts::Frame;
use animetric_core::gateway::{BackendError, Gateway, GatewayConfig, GatewayError, QARequest, Verdict};
use serde_json::Value;

struct Captured {
    headers: Vec<String>,
    body: Value,
}

/// Serves one scripted `(status, body)` per connection, then stops.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Captured {
                headers,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn completion(content: Value) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

fn gateway(url: &str, key_env: &str) -> Gateway {
    let mut cfg = GatewayConfig::new(url, "judge-test");
    cfg.backoff_ms = 0;
    cfg.max_retries = 2;
    cfg.timeout_secs = 10.0;
    cfg.api_key_env = key_env.into();
    Gateway::http(cfg).unwrap()
}

fn request() -> QARequest {
    QARequest {
        case_id: "c1".into(),
        system_context: "Judge the character's look.".into(),
        question: "Is the fox orange?".into(),
        frames: vec![Frame::new("f0.png", b"\x89PNG fake".to_vec())],
    }
}

#[test]
fn sends_chat_body_and_parses_answer() {
    std::env::set_var("ANIMETRIC_TEST_KEY_A", "sekrit");
    let (url, seen, h) = serve(vec![(200, completion(Value::from(r#"{"answer": "yes"}"#)))]);
    let gw = gateway(&url, "ANIMETRIC_TEST_KEY_A");
    let ans = gw.ask_yes_no(&request()).unwrap();
    h.join().unwrap();
    assert_eq!(ans.verdict, Verdict::Yes);

    let seen = seen.lock().unwrap();
    let req = &seen[0];
    assert!(req.headers.iter().any(|h| h.eq_ignore_ascii_case("authorization: Bearer sekrit")));
    assert_eq!(req.body["model"], "judge-test");
    assert_eq!(req.body["temperature"], 0);
    let messages = req.body["messages"].as_array().unwrap();
    assert_eq!(messages[0]["role"], "system");
    let parts = messages[1]["content"].as_array().unwrap();
    assert!(parts[0]["text"].as_str().unwrap().starts_with("Is the fox orange?"));
    assert!(parts[1]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
}

#[test]
fn content_parts_are_joined() {
    let parts = serde_json::json!([{ "type": "text", "text": "{\"answer\": " }, { "type": "text", "text": "\"no\"}" }]);
    let (url, _, h) = serve(vec![(200, completion(parts))]);
    let ans = gateway(&url, "").ask_yes_no(&request()).unwrap();
    h.join().unwrap();
    assert_eq!(ans.verdict, Verdict::No);
}

#[test]
fn retries_server_errors() {
    let (url, _, h) = serve(vec![
        (503, "busy".into()),
        (429, "slow down".into()),
        (200, completion(Value::from(r#"{"answer": "yes"}"#))),
    ]);
    let gw = gateway(&url, "");
    let ans = gw.ask_yes_no(&request()).unwrap();
    h.join().unwrap();
    assert_eq!(ans.verdict, Verdict::Yes);
    assert_eq!(gw.backend_calls(), 3);
}

#[test]
fn bare_reply_is_reasked_once() {
    let (url, seen, h) = serve(vec![
        (200, completion(Value::from("Yes, it is."))),
        (200, completion(Value::from(r#"{"answer": "yes"}"#))),
    ]);
    let gw = gateway(&url, "");
    let ans = gw.ask_yes_no(&request()).unwrap();
    h.join().unwrap();
    assert_eq!(ans.verdict, Verdict::Yes);
    let seen = seen.lock().unwrap();
    let first = seen[0].body["messages"][1]["content"][0]["text"].as_str().unwrap().to_string();
    let second = seen[1].body["messages"][1]["content"][0]["text"].as_str().unwrap();
    assert!(second.starts_with(&first) && second.len() > first.len());
}

#[test]
fn gives_up_after_max_retries() {
    let (url, _, h) = serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into())]);
    let gw = gateway(&url, "");
    let err = gw.ask_yes_no(&request()).unwrap_err();
    h.join().unwrap();
    match err {
        GatewayError::Transport { attempts, last } => {
            assert_eq!(attempts, 3);
            assert_eq!(last, BackendError::Status { status: 500, body: "c".into() });
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, _, h) = serve(vec![(401, "bad key".into())]);
    let gw = gateway(&url, "");
    let err = gw.ask_yes_no(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, GatewayError::Auth(ref m) if m == "bad key"), "{err:?}");
    assert_eq!(gw.backend_calls(), 1);
}

#[test]
fn missing_key_variable_is_an_auth_error() {
    let cfg = GatewayConfig {
        api_key_env: "ANIMETRIC_TEST_KEY_UNSET".into(),
        ..GatewayConfig::new("http://127.0.0.1:9/", "judge")
    };
    assert!(matches!(Gateway::http(cfg), Err(GatewayError::Auth(_))));
}

#[test]
fn malformed_body_is_reported() {
    let (url, _, h) = serve(vec![(200, r#"{"choices": []}"#.into())]);
    let err = gateway(&url, "").ask_yes_no(&request()).unwrap_err();
    h.join().unwrap();
    assert!(
        matches!(err, GatewayError::Transport { last: BackendError::Malformed(_), attempts: 1 }),
        "{err:?}"
    );
}

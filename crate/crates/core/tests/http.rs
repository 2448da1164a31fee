//! The ureq transport against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use herdsim_core::agents::gateway::{logprob_reply, HttpTransport, Transport, TransportError};
use herdsim_core::agents::{GatewayClient, GatewayLimits};
use herdsim_core::agents::prompt::Message;
use serde_json::Value;

struct Seen {
    headers: Vec<String>,
    body: Value,
}

/// Serves `replies` in order, one connection each, recording what arrives.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { headers, body: serde_json::from_slice(&buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen, handle)
}

#[test]
fn posts_json_with_bearer_key() {
    let reply = logprob_reply(&[("A", -0.1), ("B", -2.3)]).to_string();
    let (url, seen, handle) = serve(vec![(200, reply)]);
    let t = HttpTransport::new(url, Some("sekret".into()), Duration::from_secs(5));
    let got = t.post_json(&serde_json::json!({"model": "m"})).unwrap();
    handle.join().unwrap();
    assert_eq!(got, logprob_reply(&[("A", -0.1), ("B", -2.3)]));
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].body["model"], "m");
    assert!(seen[0].headers.iter().any(|h| h.eq_ignore_ascii_case("authorization: Bearer sekret")));
}

#[test]
fn status_errors_carry_code_and_body() {
    let (url, _, handle) = serve(vec![(404, "{\"error\":\"nope\"}".into())]);
    let t = HttpTransport::new(url, None, Duration::from_secs(5));
    match t.post_json(&serde_json::json!({})) {
        Err(TransportError::Status { code, body }) => {
            assert_eq!(code, 404);
            assert!(body.contains("nope"));
        }
        other => panic!("{other:?}"),
    }
    handle.join().unwrap();
}

#[test]
fn client_retries_server_errors_then_extracts() {
    let ok = logprob_reply(&[(" B", -0.2), ("A", -1.9)]).to_string();
    let (url, seen, handle) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, ok)]);
    let limits = GatewayLimits { backoff_base_ms: 1, requests_per_second: 1000.0, burst: 10.0, ..GatewayLimits::default() };
    let client = GatewayClient::new(Arc::new(HttpTransport::new(url, None, Duration::from_secs(5))), limits);
    let logits = client.choice_logits("m", &[Message::user("Q")], 2).unwrap();
    handle.join().unwrap();
    assert_eq!(logits.values(), &[-1.9, -0.2]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let body = &seen[2].body;
    assert_eq!(body["max_tokens"], 1);
    assert_eq!(body["logprobs"], true);
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["top_logprobs"], 20);
}

#[test]
fn unreachable_endpoint_is_a_network_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let t = HttpTransport::new(format!("http://127.0.0.1:{port}/"), None, Duration::from_secs(2));
    let err = t.post_json(&serde_json::json!({})).unwrap_err();
    assert!(matches!(err, TransportError::Network(_)));
    assert!(err.retryable());
}

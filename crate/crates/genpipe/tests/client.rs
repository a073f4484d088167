mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use aura_genpipe::client::{ClientError, GenerationParams};
use aura_genpipe::{vlm_generate, GenError, HttpClient, MockClient, RetryPolicy, VlmClient, VlmRequest};
use common::*;

fn request(dir: &std::path::Path) -> VlmRequest {
    let source = sources(dir, 1).remove(0);
    VlmRequest {
        prompt: "describe".into(),
        image_ref: source.image_path.clone(),
        params: GenerationParams::default(),
        annotations: aura_genpipe::ObjectAnnotationBundle::from_sample(&source.sample, source.image_path),
    }
}

#[test]
fn canned_response_succeeds_first_time() {
    let dir = tempfile::tempdir().unwrap();
    let resp = vlm_generate(&MockClient::canned("{}"), &request(dir.path()), &RetryPolicy::immediate(3)).unwrap();
    assert_eq!(resp.text, "{}");
    assert_eq!(resp.attempts, 1);
}

#[test]
fn two_failures_then_success_takes_three_attempts() {
    let dir = tempfile::tempdir().unwrap();
    let client = MockClient::failing_then(2, "ok");
    let resp = vlm_generate(&client, &request(dir.path()), &RetryPolicy::immediate(3)).unwrap();
    assert_eq!((resp.text.as_str(), resp.attempts), ("ok", 3));
}

#[test]
fn persistent_failure_exhausts_attempts() {
    let dir = tempfile::tempdir().unwrap();
    let client = MockClient::always_failing();
    let req = request(dir.path());
    match vlm_generate(&client, &req, &RetryPolicy::immediate(3)) {
        Err(GenError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected a transport error, got {other:?}"),
    }
    assert_eq!(client.attempts_for(&req.annotations.sample_id), 3);
}

#[test]
fn authentication_failure_is_not_retried() {
    let dir = tempfile::tempdir().unwrap();
    let client = MockClient::from_fn(|_, _| Err(ClientError::Auth("bad key".into())));
    let req = request(dir.path());
    assert!(matches!(vlm_generate(&client, &req, &RetryPolicy::immediate(5)), Err(GenError::Auth(_))));
    assert_eq!(client.attempts_for(&req.annotations.sample_id), 1);
}

#[test]
fn backoff_doubles_up_to_the_cap() {
    let r = RetryPolicy {
        max_attempts: 6,
        initial_backoff: Duration::from_millis(100),
        max_backoff: Duration::from_millis(500),
    };
    let delays: Vec<u128> = (1..=5).map(|a| r.backoff(a).as_millis()).collect();
    assert_eq!(delays, [100, 200, 400, 500, 500]);
}

/// Answers each connection with the next canned `(status, body)`.
fn stub_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(format!("{auth}\n{}", String::from_utf8(buf).unwrap()));
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
        bodies
    });
    (url, handle)
}

#[test]
fn http_client_retries_server_errors_and_reads_content() {
    let dir = tempfile::tempdir().unwrap();
    let ok = r#"{"choices": [{"message": {"role": "assistant", "content": "{\"qa_pairs\": []}"}}]}"#;
    let (url, server) = stub_server(vec![(503, "{}".into()), (200, ok.into())]);
    let client = HttpClient::new(&url, "secret".into(), Duration::from_secs(5));
    let resp = vlm_generate(&client, &request(dir.path()), &RetryPolicy::immediate(3)).unwrap();
    assert_eq!(resp.text, "{\"qa_pairs\": []}");
    assert_eq!(resp.attempts, 2);
    let bodies = server.join().unwrap();
    assert!(bodies[1].starts_with("Authorization: Bearer secret") || bodies[1].starts_with("authorization: Bearer secret"));
    assert!(bodies[1].contains("data:image/png;base64,"));
    assert!(bodies[1].contains("\"describe\""));
}

#[test]
fn http_client_fails_fast_on_unauthorized() {
    let dir = tempfile::tempdir().unwrap();
    let (url, server) = stub_server(vec![(401, "{}".into())]);
    let client = HttpClient::new(&url, "wrong".into(), Duration::from_secs(5));
    let err = client.generate(&request(dir.path())).unwrap_err();
    assert!(matches!(err, ClientError::Auth(_)));
    server.join().unwrap();
}

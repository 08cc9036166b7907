use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use vma::remote::{RemoteBackend, RemoteConfig, RetryPolicy};
use vma_core::backend::{ChatRequest, Message, ModelBackend, ModelTurnWire};

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Answer: C"}}]}"#;

/// Serves one canned response per connection and records request bodies.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<String>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut request_body = vec![0; length];
            reader.read_exact(&mut request_body).unwrap();
            seen.lock().unwrap().push(String::from_utf8(request_body).unwrap());
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let mut stream = stream;
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, bodies, handle)
}

fn backend(url: String) -> RemoteBackend {
    let mut config = RemoteConfig::new(url);
    config.api_key = Some("k".into());
    config.timeout = Duration::from_secs(5);
    config.retry = RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    };
    RemoteBackend::new(config)
}

fn request() -> ChatRequest {
    ChatRequest::new("agent", vec![Message::system("s"), Message::user("q")])
}

#[test]
fn retries_transient_statuses_then_succeeds() {
    let (url, bodies, server) = serve(vec![(503, "busy"), (429, "slow down"), (200, OK_BODY)]);
    let turn = backend(url).complete(&request()).unwrap();
    server.join().unwrap();
    assert_eq!(turn, ModelTurnWire::text("Answer: C"));
    let bodies = bodies.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    assert!(bodies.iter().all(|b| b == &bodies[0]), "retries resend the same body");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, bodies, server) = serve(vec![(400, "bad request")]);
    let err = backend(url).complete(&request()).unwrap_err();
    server.join().unwrap();
    assert!(!err.is_retryable());
    assert!(err.to_string().contains("400"), "{err}");
    assert_eq!(bodies.lock().unwrap().len(), 1);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let (url, bodies, server) = serve(vec![(500, "down"); 4]);
    let err = backend(url).complete(&request()).unwrap_err();
    server.join().unwrap();
    assert!(err.to_string().contains("gave up after 3 retries"), "{err}");
    assert_eq!(bodies.lock().unwrap().len(), 4);
}

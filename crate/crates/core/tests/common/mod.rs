//! Shared stub chat-completion server for transport tests.
#![allow(dead_code)] // each test target uses a different subset

use std::sync::{Arc, Mutex};

/// A scripted HTTP stub: replays `(status, body)` pairs in order,
/// repeating the last one, and captures every request body.
pub struct StubServer {
    pub endpoint: String,
    pub requests: Arc<Mutex<Vec<serde_json::Value>>>,
    shutdown: Arc<std::sync::atomic::AtomicBool>,
    server: Arc<tiny_http::Server>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(responses: Vec<(u16, String)>) -> Self {
        let server =
            Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub server"));
        let port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => unreachable!("tcp listener"),
        };
        let endpoint = format!("http://127.0.0.1:{port}/v1/chat/completions");
        let requests: Arc<Mutex<Vec<serde_json::Value>>> = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(std::sync::atomic::AtomicBool::new(false));

        let srv = Arc::clone(&server);
        let reqs = Arc::clone(&requests);
        let stop = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            let mut served = 0usize;
            loop {
                if stop.load(std::sync::atomic::Ordering::SeqCst) {
                    break;
                }
                let Ok(Some(mut request)) =
                    srv.recv_timeout(std::time::Duration::from_millis(50))
                else {
                    continue;
                };
                let mut body = String::new();
                let _ = std::io::Read::read_to_string(request.as_reader(), &mut body);
                if let Ok(parsed) = serde_json::from_str::<serde_json::Value>(&body) {
                    reqs.lock().unwrap().push(parsed);
                }
                let (status, text) = responses
                    .get(served.min(responses.len().saturating_sub(1)))
                    .cloned()
                    .unwrap_or((200, completion("{}")));
                served += 1;
                let response = tiny_http::Response::from_string(text)
                    .with_status_code(status)
                    .with_header(
                        tiny_http::Header::from_bytes(
                            &b"Content-Type"[..],
                            &b"application/json"[..],
                        )
                        .unwrap(),
                    );
                let _ = request.respond(response);
            }
        });

        StubServer {
            endpoint,
            requests,
            shutdown,
            server,
            handle: Some(handle),
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown
            .store(true, std::sync::atomic::Ordering::SeqCst);
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Wrap assistant text in the chat-completion response envelope.
pub fn completion(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

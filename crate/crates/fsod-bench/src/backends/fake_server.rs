//! Scriptable in-process HTTP server speaking the wire protocol. Used by the
//! conformance tests and handy for trying the CLI against a live endpoint
//! without any real model.
//!
//! The server records every request (path and raw body), tracks the
//! concurrent-connection high-water mark, can delay responses, and serves
//! either a queue of scripted responses or a default responder closure.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// One recorded request.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub path: String,
    pub body: String,
    /// Header names lowercased.
    pub headers: Vec<(String, String)>,
}

/// A canned response popped once per request.
#[derive(Debug, Clone)]
pub struct ScriptedResponse {
    pub status: u16,
    pub body: String,
}

type Responder = Box<dyn Fn(&str, &str) -> (u16, String) + Send + Sync>;

struct Shared {
    script: Mutex<VecDeque<ScriptedResponse>>,
    default: Mutex<Option<Responder>>,
    requests: Mutex<Vec<RecordedRequest>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    delay: Mutex<Duration>,
    stop: AtomicBool,
}

pub struct FakeServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
}

impl FakeServer {
    pub fn start() -> std::io::Result<FakeServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            script: Mutex::new(VecDeque::new()),
            default: Mutex::new(None),
            requests: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            delay: Mutex::new(Duration::ZERO),
            stop: AtomicBool::new(false),
        });
        let accept_shared = shared.clone();
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let conn_shared = accept_shared.clone();
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &conn_shared);
                });
            }
        });
        Ok(FakeServer {
            addr,
            shared,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    /// Queue one response; queued responses are served before the default
    /// responder, one per request, in order.
    pub fn enqueue(&self, status: u16, body: impl Into<String>) {
        self.shared
            .script
            .lock()
            .unwrap()
            .push_back(ScriptedResponse {
                status,
                body: body.into(),
            });
    }

    /// Install the fallback responder, called with (path, body).
    pub fn set_default(&self, f: impl Fn(&str, &str) -> (u16, String) + Send + Sync + 'static) {
        *self.shared.default.lock().unwrap() = Some(Box::new(f));
    }

    /// Delay every response, letting tests accumulate concurrent requests.
    pub fn set_delay(&self, delay: Duration) {
        *self.shared.delay.lock().unwrap() = delay;
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.shared.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().unwrap().len()
    }

    /// Highest number of simultaneously open requests seen so far.
    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // poke the accept loop awake
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    if shared.stop.load(Ordering::SeqCst) {
        return Ok(());
    }
    let cur = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.max_in_flight.fetch_max(cur, Ordering::SeqCst);
    let result = serve_one(stream, shared);
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    result
}

fn serve_one(mut stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);

    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_string();

    let mut content_length = 0usize;
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            headers.push((name.to_ascii_lowercase(), value.trim().to_string()));
        }
        if let Some(v) = line
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(str::trim)
        {
            content_length = v.parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();

    shared.requests.lock().unwrap().push(RecordedRequest {
        path: path.clone(),
        body: body.clone(),
        headers,
    });

    let delay = *shared.delay.lock().unwrap();
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }

    let scripted = shared.script.lock().unwrap().pop_front();
    let (status, response_body) = match scripted {
        Some(s) => (s.status, s.body),
        None => match shared.default.lock().unwrap().as_ref() {
            Some(f) => f(&path, &body),
            None => (404, "{\"error\":\"no responder configured\"}".to_string()),
        },
    };
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Response",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
        response_body.len()
    )?;
    stream.flush()
}

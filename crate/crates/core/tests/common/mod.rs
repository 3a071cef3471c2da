//! A scripted stand-in for an OpenAI-compatible `/chat/completions` endpoint.
//!
//! One request per connection. Queued responses are served first; after that
//! every request gets the fallback reply. Each request is logged with its
//! headers, body, and the time reported by an optional shared clock.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use datagen::llm::Clock;

#[derive(Debug, Clone)]
pub struct Received {
    pub headers: Vec<(String, String)>,
    pub body: serde_json::Value,
    pub at: Option<Duration>,
}

impl Received {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn prompt(&self) -> &str {
        self.body.pointer("/messages/0/content").and_then(|v| v.as_str()).unwrap_or("")
    }
}

type Fallback = dyn Fn(&Received) -> (u16, String) + Send + Sync;

struct State {
    script: Mutex<VecDeque<(u16, String)>>,
    fallback: Box<Fallback>,
    log: Mutex<Vec<Received>>,
    clock: Option<Arc<dyn Clock>>,
    delay: Duration,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

pub struct FakeServer {
    addr: String,
    state: Arc<State>,
}

pub fn completion_body(content: &str, finish_reason: &str) -> String {
    serde_json::json!({
        "id": "cmpl-test",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": finish_reason,
        }],
    })
    .to_string()
}

pub struct FakeServerBuilder {
    script: VecDeque<(u16, String)>,
    fallback: Box<Fallback>,
    clock: Option<Arc<dyn Clock>>,
    delay: Duration,
}

impl FakeServer {
    pub fn builder() -> FakeServerBuilder {
        FakeServerBuilder {
            script: VecDeque::new(),
            fallback: Box::new(|_| (200, completion_body("ok", "stop"))),
            clock: None,
            delay: Duration::ZERO,
        }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> Vec<Received> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.log.lock().unwrap().len()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.state.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl FakeServerBuilder {
    pub fn respond(mut self, status: u16, body: impl Into<String>) -> Self {
        self.script.push_back((status, body.into()));
        self
    }

    pub fn fallback(mut self, f: impl Fn(&Received) -> (u16, String) + Send + Sync + 'static) -> Self {
        self.fallback = Box::new(f);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    /// Real time spent holding each request before answering.
    pub fn delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn start(self) -> FakeServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let state = Arc::new(State {
            script: Mutex::new(self.script),
            fallback: self.fallback,
            log: Mutex::new(Vec::new()),
            clock: self.clock,
            delay: self.delay,
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        });
        let shared = Arc::clone(&state);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let state = Arc::clone(&shared);
                thread::spawn(move || serve(stream, &state));
            }
        });
        FakeServer { addr, state }
    }
}

fn serve(stream: TcpStream, state: &State) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let (k, v) = (k.trim().to_owned(), v.trim().to_owned());
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }

    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    let received = Received {
        headers,
        body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
        at: state.clock.as_ref().map(|c| c.now()),
    };
    let scripted = state.script.lock().unwrap().pop_front();
    let (status, reply) = scripted.unwrap_or_else(|| (state.fallback)(&received));
    state.log.lock().unwrap().push(received);
    if !state.delay.is_zero() {
        thread::sleep(state.delay);
    }
    state.in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut stream = stream;
    let response = format!(
        "HTTP/1.1 {status} Status\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use tabattr::backend::{SyntheticOracle, SyntheticOracleSpec};

/// Minimal HTTP/1.1 server answering each request through `handler`.
pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<String>>>,
}

impl MockServer {
    pub fn start<H>(handler: H) -> Self
    where
        H: Fn(usize, &str) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/logprobs", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let handler = Arc::new(handler);
        let (h, b) = (hits.clone(), bodies.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let n = h.fetch_add(1, Ordering::SeqCst);
                let (handler, b) = (handler.clone(), b.clone());
                thread::spawn(move || serve(stream, n, &*handler, &b));
            }
        });
        Self { url, hits, bodies }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(
    mut stream: TcpStream,
    n: usize,
    handler: &dyn Fn(usize, &str) -> (u16, String),
    bodies: &Mutex<Vec<String>>,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                len = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    let body = String::from_utf8(body).unwrap();
    bodies.lock().unwrap().push(body.clone());
    let (status, payload) = handler(n, &body);
    let resp = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.write_all(resp.as_bytes());
}

/// Oracle over `k` features `f0..f{k-1}` with the given weights.
pub fn oracle(weights: &[f64], bias: f64) -> SyntheticOracle {
    let spec = SyntheticOracleSpec::binary(
        weights.iter().enumerate().map(|(i, w)| (format!("f{i}"), *w)),
        bias,
    );
    SyntheticOracle::new(spec).unwrap()
}

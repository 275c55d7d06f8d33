//! Query an HTTP logprob endpoint.
//!
//! With no argument a local mock server answers from a synthetic oracle.
//! Pass an endpoint URL to query a real server speaking the same JSON shape:
//!
//! cargo run --example http_backend [-- http://host:port/v1/logprobs]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use tabattr::backend::{
    HttpBackend, HttpConfig, LogprobBackend, QueryRequest, QueryResponse, SyntheticOracle, SyntheticOracleSpec,
};
use tabattr::tabular::{build_prompt, PromptTemplate};
use tabattr::verbalizer::{class_distribution, VerbalizerMap};

fn serve(oracle: SyntheticOracle) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind a local port");
    let url = format!("http://{}/v1/logprobs", listener.local_addr().unwrap());
    thread::spawn(move || {
        for mut stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 && line != "\r\n" {
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                line.clear();
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req: QueryRequest = serde_json::from_slice(&body).unwrap();
            let dist = oracle.query(&req.prompt, req.top_k).unwrap();
            let payload = serde_json::to_string(&QueryResponse { tokens: dist.entries().to_vec() }).unwrap();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    url
}

fn main() -> tabattr::Result<()> {
    let spec = SyntheticOracleSpec::binary([("score", 1.3), ("region", -0.6)].map(|(k, w)| (k.to_string(), w)), 0.1);
    let oracle = SyntheticOracle::new(spec)?;
    let inst = oracle.generate_instances(1, 4).remove(0);
    let endpoint = std::env::args().nth(1).unwrap_or_else(|| serve(oracle));

    let backend = HttpBackend::new(HttpConfig {
        endpoint,
        timeout: Duration::from_secs(30),
        ..Default::default()
    })?;
    let prompt = build_prompt(&PromptTemplate::default(), inst.fields())?;
    let topk = backend.query(&prompt, 5)?;
    println!("top-k: {:?}", topk.entries());
    let (dist, degenerate) = class_distribution(&topk, &VerbalizerMap::yes_no())?;
    println!("P(yes, no) = {:?} degenerate={degenerate}", dist.probs());
    Ok(())
}

#![allow(dead_code)]

use blackbox_calib::oracle::{Oracle, PredictRequest, SyntheticModel};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

/// Minimal `/predict` server backed by a synthetic model. The first
/// `fail_first` requests get a 500.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

pub fn serve(model: SyntheticModel, fail_first: usize) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let model = Arc::new(model);
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let model = model.clone();
            let counter = counter.clone();
            thread::spawn(move || handle(stream, &model, &counter, fail_first));
        }
    });
    StubServer { url, hits }
}

fn handle(stream: TcpStream, model: &SyntheticModel, hits: &AtomicUsize, fail_first: usize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut stream = stream;
    loop {
        let mut len = 0usize;
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h).unwrap_or(0) == 0 {
                return;
            }
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    len = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).unwrap();
        let n = hits.fetch_add(1, Ordering::SeqCst);
        let (status, reply) = if n < fail_first {
            ("500 Internal Server Error", "{}".to_string())
        } else {
            let req: PredictRequest = serde_json::from_slice(&body).unwrap();
            let label = model.top1(&req.to_image().unwrap()).unwrap();
            ("200 OK", format!("{{\"label\":{}}}", label.0))
        };
        let resp = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{reply}",
            reply.len()
        );
        if stream.write_all(resp.as_bytes()).is_err() {
            return;
        }
    }
}

pub fn bbcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbcal"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("bbcal runs")
}

/// Runs `bbcal`, asserts success and returns the parsed summary line.
pub fn bbcal_ok(args: &[&str]) -> serde_json::Value {
    let out = bbcal(args);
    assert!(
        out.status.success(),
        "bbcal {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.trim()).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

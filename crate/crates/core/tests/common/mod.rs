#![allow(dead_code)]

use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const MAX_BODY: usize = 8 << 20;

#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// Seeded function of the request bytes.
    Echo,
    Zeros,
    /// Responds with this many tokens regardless of `l_f`.
    TokenCount(usize),
    /// Reports and returns this hidden width.
    HiddenDim(usize),
    /// Every request fails with this status.
    Status(u16),
    /// 200 with a body that is not JSON.
    Garbage,
}

#[derive(Clone, Debug)]
pub struct BridgeSpec {
    pub l_f: usize,
    pub d_h: usize,
    pub n_text: usize,
    pub mode: Mode,
}

impl BridgeSpec {
    pub fn new(l_f: usize, d_h: usize, n_text: usize, mode: Mode) -> Self {
        BridgeSpec { l_f, d_h, n_text, mode }
    }
}

/// In-process stand-in for the bridge service, speaking the same protocol.
pub struct FakeBridge {
    pub url: String,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for FakeBridge {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn spawn(spec: BridgeSpec) -> FakeBridge {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind"));
    let port = server.server_addr().to_ip().expect("ip").port();
    let s = server.clone();
    let handle = std::thread::spawn(move || {
        for req in s.incoming_requests() {
            respond(&spec, req);
        }
    });
    FakeBridge {
        url: format!("http://127.0.0.1:{port}"),
        server,
        handle: Some(handle),
    }
}

fn reply(req: tiny_http::Request, status: u16, body: Vec<u8>) {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
    let _ = req.respond(tiny_http::Response::from_data(body).with_status_code(status).with_header(header));
}

fn error_body(msg: &str) -> Vec<u8> {
    serde_json::to_vec(&json!({ "error": msg })).unwrap()
}

fn respond(spec: &BridgeSpec, mut req: tiny_http::Request) {
    if let Mode::Status(code) = spec.mode {
        return reply(req, code, error_body("forced failure"));
    }
    let d_h = match spec.mode {
        Mode::HiddenDim(n) => n,
        _ => spec.d_h,
    };
    match (req.method(), req.url()) {
        (tiny_http::Method::Get, "/health") => {
            let body = json!({ "status": "ok", "model": "echo", "l_f": spec.l_f, "d_h": d_h });
            reply(req, 200, serde_json::to_vec(&body).unwrap());
        }
        (tiny_http::Method::Post, "/embed") => {
            let mut body = Vec::new();
            let _ = req.as_reader().take(MAX_BODY as u64 + 1).read_to_end(&mut body);
            if body.len() > MAX_BODY {
                return reply(req, 413, error_body("payload exceeds 8 MiB"));
            }
            match validate(&body) {
                Ok((bytes, text)) => {
                    if spec.mode == Mode::Garbage {
                        return reply(req, 200, b"not json".to_vec());
                    }
                    reply(req, 200, embed_body(spec, d_h, &bytes, &text));
                }
                Err(path) => reply(req, 400, error_body(&path)),
            }
        }
        _ => reply(req, 404, error_body("no such route")),
    }
}

/// Checks the request schema, returning the decoded pixels and text or a
/// message naming the offending field.
pub fn validate(body: &[u8]) -> Result<(Vec<u8>, String), String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| format!("$: invalid JSON ({e})"))?;
    let obj = v.as_object().ok_or("$: expected an object")?;
    let int = |k: &str| -> Result<usize, String> {
        obj.get(k)
            .ok_or(format!("{k}: missing"))?
            .as_u64()
            .map(|n| n as usize)
            .ok_or(format!("{k}: expected a non-negative integer"))
    };
    let string = |k: &str| -> Result<&str, String> {
        obj.get(k).ok_or(format!("{k}: missing"))?.as_str().ok_or(format!("{k}: expected a string"))
    };
    let (h, w, c) = (int("height")?, int("width")?, int("channels")?);
    let text = string("text")?.to_string();
    let bytes = STANDARD.decode(string("image")?).map_err(|_| "image: not base64".to_string())?;
    if bytes.len() != h * w * c {
        return Err(format!("image: {} bytes for {h}x{w}x{c}", bytes.len()));
    }
    Ok((bytes, text))
}

/// Echo-mode tokens: multiples of 1/1024 drawn from a generator seeded by
/// the request, so the JSON text is exact.
pub fn echo_tokens(l_f: usize, d_h: usize, bytes: &[u8], text: &str) -> Vec<Vec<f64>> {
    let digest = Sha256::new().chain_update(bytes).chain_update(text.as_bytes()).finalize();
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()));
    (0..l_f)
        .map(|_| (0..d_h).map(|_| rng.random_range(-1024i32..=1024) as f64 / 1024.0).collect())
        .collect()
}

fn embed_body(spec: &BridgeSpec, d_h: usize, bytes: &[u8], text: &str) -> Vec<u8> {
    let l_f = match spec.mode {
        Mode::TokenCount(n) => n,
        _ => spec.l_f,
    };
    let tokens = match spec.mode {
        Mode::Zeros => vec![vec![0.0; d_h]; l_f],
        _ => echo_tokens(l_f, d_h, bytes, text),
    };
    let types: Vec<&str> = (0..l_f).map(|i| if i < spec.n_text { "text" } else { "visual" }).collect();
    serde_json::to_vec(&json!({ "tokens": tokens, "token_types": types })).unwrap()
}

/// A port nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = l.local_addr().unwrap().port();
    drop(l);
    format!("http://127.0.0.1:{port}")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Writes `rows` of a timestamped CSV with the given value columns.
pub fn write_csv(path: &Path, columns: &[&str], rows: usize, f: impl Fn(usize, usize) -> f64) {
    let mut s = format!("date,{}\n", columns.join(","));
    for t in 0..rows {
        let vals: Vec<String> = (0..columns.len()).map(|c| f(t, c).to_string()).collect();
        s.push_str(&format!("t{t},{}\n", vals.join(",")));
    }
    std::fs::write(path, s).unwrap();
}

/// A small but complete run config for fast end-to-end tests.
pub fn small_config(data: &str, extra_data: &str, extra: &str) -> String {
    format!(
        r#"seed = 11

[data]
path = "{data}"
name = "toy"
periodicity = 12
{extra_data}

[model]
seq_len = 32
pred_len = 8
patch_len = 8
stride = 4
padding = 4
d_model = 16
n_heads = 2
e_layers = 1
memory_capacity = 32
top_k = 2
image_size = 16
hidden_dim = 4
d_fusion = 16

[encoder]
fused_len = 20
hidden_dim = 16
n_text = 4

[train]
batch_size = 16
epochs = 3
patience = 2
{extra}
"#
    )
}

/// A temp directory holding `series.csv` (two seasonal columns) and
/// `run.toml`.
pub fn small_run(extra_data: &str, extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_csv(&dir.path().join("series.csv"), &["a", "b"], 240, |t, c| {
        let phase = std::f64::consts::TAU * t as f64 / 12.0;
        if c == 0 { 10.0 + phase.sin() } else { 0.5 * phase.cos() + 0.01 * t as f64 }
    });
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, small_config("series.csv", extra_data, extra)).unwrap();
    (dir, cfg)
}

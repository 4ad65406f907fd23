//! Probes an encoder bridge: `cargo run --example bridge_client -- http://127.0.0.1:8000`.
//! Falls back to TVLM_BRIDGE_URL.

use tvlm::encoder::{EncoderDescriptor, EncoderKind, RemoteEncoder};

fn main() -> tvlm::Result<()> {
    let url = std::env::args()
        .nth(1)
        .or_else(|| std::env::var(tvlm::cli::BRIDGE_ENV).ok())
        .unwrap_or_else(|| "http://127.0.0.1:8000".into());
    let desc = EncoderDescriptor { kind: EncoderKind::Remote, endpoint: Some(url), ..EncoderDescriptor::default() };
    let enc = RemoteEncoder::new(desc)?;
    let report = enc.check(3, 64);
    if let Some(h) = &report.health {
        println!("health: {} model={} L_f={} d_h={}", h.status, h.model, h.l_f, h.d_h);
    }
    if let Some((l, d, t)) = report.embed_shape {
        println!("embed: {l} tokens x {d}, {t} text");
    }
    for p in &report.problems {
        println!("problem: {p}");
    }
    println!("{}", if report.ok() { "bridge OK" } else { "bridge not usable" });
    Ok(())
}

//! Frozen multimodal encoders: a seeded in-process mock and an HTTP client
//! for an external bridge service.

mod mock;
mod remote;
pub mod wire;

pub use mock::{MockEncoder, TEXT_BUCKETS};
pub use remote::{BridgeReport, RemoteEncoder};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenType {
    Text,
    Visual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mock,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderDescriptor {
    pub kind: EncoderKind,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub fused_len: usize,
    pub hidden_dim: usize,
    pub n_text: usize,
    pub timeout_secs: u64,
}

impl Default for EncoderDescriptor {
    fn default() -> Self {
        EncoderDescriptor {
            kind: EncoderKind::Mock,
            seed: 0,
            endpoint: None,
            fused_len: 156,
            hidden_dim: 768,
            n_text: 11,
            timeout_secs: 30,
        }
    }
}

impl EncoderDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("encoder hidden_dim must be positive".into()));
        }
        if self.n_text >= self.fused_len {
            return Err(Error::Config(format!(
                "n_text {} leaves no visual tokens in fused_len {}",
                self.n_text, self.fused_len
            )));
        }
        if self.kind == EncoderKind::Remote && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Config("remote encoder needs an endpoint".into()));
        }
        Ok(())
    }

    pub fn visual_tokens(&self) -> usize {
        self.fused_len - self.n_text
    }

    /// Text tokens first, then visual tokens.
    pub fn token_types(&self) -> Vec<TokenType> {
        let mut t = vec![TokenType::Text; self.n_text];
        t.resize(self.fused_len, TokenType::Visual);
        t
    }

    /// Stable text form used in checksums and checkpoint fingerprints.
    /// Where and how patiently the encoder is reached does not identify it,
    /// so the endpoint and timeout are left out.
    pub fn canonical(&self) -> String {
        let identity = EncoderDescriptor {
            endpoint: None,
            timeout_secs: 0,
            ..self.clone()
        };
        serde_json::to_string(&identity).expect("descriptor serialises")
    }
}

/// Encoder output for one batch.
#[derive(Clone, Debug)]
pub struct MultimodalEmbedding {
    /// `[B, L_f, d_h]`.
    pub tokens: Var,
    pub token_types: Vec<TokenType>,
}

pub trait Encoder {
    fn descriptor(&self) -> &EncoderDescriptor;

    /// Whether gradients reach the image pixels.
    fn differentiable(&self) -> bool;

    /// Encodes a `[B, C, H, W]` image batch with one prompt per image.
    fn encode(&self, g: &mut Graph, images: Var, texts: &[String]) -> Result<MultimodalEmbedding>;

    /// SHA-256 over the frozen state; must never change.
    fn checksum(&self) -> String;
}

pub(crate) fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    format!("{:x}", h.finalize())
}

/// Builds the encoder named by `desc` for images of `channels × size²`.
pub fn build(desc: &EncoderDescriptor, channels: usize, image_size: usize) -> Result<Box<dyn Encoder>> {
    desc.validate()?;
    Ok(match desc.kind {
        EncoderKind::Mock => Box::new(MockEncoder::new(desc.clone(), channels, image_size)?),
        EncoderKind::Remote => Box::new(RemoteEncoder::new(desc.clone())?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_types() {
        let d = EncoderDescriptor::default();
        let t = d.token_types();
        assert_eq!(t.len(), 156);
        assert_eq!(t.iter().filter(|&&x| x == TokenType::Text).count(), 11);
        assert!(t[..11].iter().all(|&x| x == TokenType::Text));
    }

    #[test]
    fn remote_needs_endpoint() {
        let d = EncoderDescriptor { kind: EncoderKind::Remote, ..Default::default() };
        assert!(matches!(d.validate(), Err(Error::Config(_))));
        let d = EncoderDescriptor { n_text: 156, ..Default::default() };
        assert!(d.validate().is_err());
    }
}

use std::fmt;
use std::time::Duration;

use ureq::Agent;

use super::wire::{decode_response, embed_request, EmbedRequest, EmbedResponse, Health};
use super::{sha256_hex, Encoder, EncoderDescriptor, MultimodalEmbedding, TokenType};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

const MAX_BODY: u64 = 256 << 20;

/// Forward-only client for an embedding bridge. Gradients do not reach the
/// image pixels through this encoder.
pub struct RemoteEncoder {
    desc: EncoderDescriptor,
    base: String,
    agent: Agent,
}

impl fmt::Debug for RemoteEncoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteEncoder").field("base", &self.base).finish()
    }
}

impl RemoteEncoder {
    pub fn new(desc: EncoderDescriptor) -> Result<Self> {
        let base = desc
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config("remote encoder needs an endpoint".into()))?
            .trim_end_matches('/')
            .to_string();
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(desc.timeout_secs.max(1))))
            .build()
            .into();
        Ok(RemoteEncoder { desc, base, agent })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn transport(&self, e: ureq::Error) -> Error {
        Error::Transport {
            endpoint: self.base.clone(),
            detail: e.to_string(),
        }
    }

    fn read_body<T: serde::de::DeserializeOwned>(&self, path: &str, mut resp: ureq::http::Response<ureq::Body>) -> Result<T> {
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Error::HttpStatus {
                endpoint: format!("{}{path}", self.base),
                status,
            });
        }
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_string()
            .map_err(|e| self.transport(e))?;
        serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("{path}: {e}")))
    }

    pub fn health(&self) -> Result<Health> {
        let resp = self
            .agent
            .get(format!("{}/health", self.base))
            .call()
            .map_err(|e| self.transport(e))?;
        self.read_body("/health", resp)
    }

    pub fn embed_raw(&self, req: &EmbedRequest) -> Result<EmbedResponse> {
        let resp = self
            .agent
            .post(format!("{}/embed", self.base))
            .send_json(req)
            .map_err(|e| self.transport(e))?;
        self.read_body("/embed", resp)
    }

    /// Embeds one `[C, H, W]` image, returning `[L_f, d_h]` and token types.
    pub fn embed(&self, img: &Tensor, text: &str) -> Result<(Tensor, Vec<TokenType>)> {
        let resp = self.embed_raw(&embed_request(img, text)?)?;
        let tokens = decode_response(&resp, &self.desc)?;
        Ok((tokens, resp.token_types))
    }

    /// Conformance run: `/health` then `/embed` on a zero image.
    pub fn check(&self, channels: usize, image_size: usize) -> BridgeReport {
        let mut report = BridgeReport::default();
        match self.health() {
            Ok(h) => {
                if h.status != "ok" {
                    report.problems.push(format!("health status {:?}", h.status));
                }
                if h.l_f != self.desc.fused_len {
                    report.problems.push(format!("health l_f: expected {}, got {}", self.desc.fused_len, h.l_f));
                }
                if h.d_h != self.desc.hidden_dim {
                    report.problems.push(format!("health d_h: expected {}, got {}", self.desc.hidden_dim, h.d_h));
                }
                report.health = Some(h);
            }
            Err(e) => {
                report.transport |= matches!(e, Error::Transport { .. });
                report.problems.push(format!("health: {e}"));
            }
        }
        let img = Tensor::zeros(&[channels, image_size, image_size]);
        match self.embed(&img, "conformance check") {
            Ok((tokens, types)) => {
                let text = types.iter().filter(|&&t| t == TokenType::Text).count();
                if text + types.iter().filter(|&&t| t == TokenType::Visual).count() != self.desc.fused_len {
                    report.problems.push("token_types do not partition l_f".into());
                }
                report.embed_shape = Some((tokens.shape()[0], tokens.shape()[1], text));
            }
            Err(e) => {
                report.transport |= matches!(e, Error::Transport { .. });
                report.problems.push(format!("embed: {e}"));
            }
        }
        report
    }
}

/// Outcome of a bridge conformance run.
#[derive(Clone, Debug, Default)]
pub struct BridgeReport {
    pub health: Option<Health>,
    /// `(l_f, d_h, text tokens)` of the `/embed` response.
    pub embed_shape: Option<(usize, usize, usize)>,
    pub problems: Vec<String>,
    pub transport: bool,
}

impl BridgeReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

impl fmt::Display for BridgeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (true, Some((lf, dh, _))) = (self.ok(), self.embed_shape) {
            return write!(f, "OK L_f={lf} d_h={dh}");
        }
        for (i, p) in self.problems.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "FAIL {p}")?;
        }
        Ok(())
    }
}

impl Encoder for RemoteEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.desc
    }

    fn differentiable(&self) -> bool {
        false
    }

    fn encode(&self, g: &mut Graph, images: Var, texts: &[String]) -> Result<MultimodalEmbedding> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || texts.len() != s[0] {
            return Err(Error::dim("encode", format!("{} prompts for images {s:?}", texts.len())));
        }
        let per = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(s[0] * self.desc.fused_len * self.desc.hidden_dim);
        let mut types = None;
        for (i, text) in texts.iter().enumerate() {
            let img = Tensor::new(&s[1..], g.value(images).data()[i * per..(i + 1) * per].to_vec())?;
            let (tokens, t) = self.embed(&img, text)?;
            data.extend_from_slice(tokens.data());
            types.get_or_insert(t);
        }
        let tokens = g.constant(Tensor::new(&[s[0], self.desc.fused_len, self.desc.hidden_dim], data)?)?;
        Ok(MultimodalEmbedding {
            tokens,
            token_types: types.unwrap_or_else(|| self.desc.token_types()),
        })
    }

    fn checksum(&self) -> String {
        sha256_hex(&[b"remote", self.desc.canonical().as_bytes()])
    }
}

//! JSON bodies of the bridge protocol (`POST /embed`, `GET /health`).

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{EncoderDescriptor, TokenType};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::val::quantize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    /// Base64 of 8-bit pixels, row-major, channels interleaved.
    pub image: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub tokens: Vec<Vec<f64>>,
    pub token_types: Vec<TokenType>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
    pub l_f: usize,
    pub d_h: usize,
}

/// Interleaved 8-bit bytes of a `[C, H, W]` image.
pub fn image_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::dim("embed request", format!("expected [C, H, W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(img.data()[(ch * h + y) * w + x]));
            }
        }
    }
    Ok(out)
}

pub fn embed_request(img: &Tensor, text: &str) -> Result<EmbedRequest> {
    let bytes = image_bytes(img)?;
    let s = img.shape();
    Ok(EmbedRequest {
        image: STANDARD.encode(bytes),
        height: s[1],
        width: s[2],
        channels: s[0],
        text: text.to_string(),
    })
}

/// Checks a response against the descriptor and returns `[L_f, d_h]`.
pub fn decode_response(resp: &EmbedResponse, desc: &EncoderDescriptor) -> Result<Tensor> {
    let shape_err = |what: &str, expected: usize, actual: usize| Error::Shape {
        what: what.to_string(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    };
    if resp.tokens.len() != desc.fused_len {
        return Err(shape_err("token count (l_f)", desc.fused_len, resp.tokens.len()));
    }
    if resp.token_types.len() != desc.fused_len {
        return Err(shape_err("token_types length", desc.fused_len, resp.token_types.len()));
    }
    let mut data = Vec::with_capacity(desc.fused_len * desc.hidden_dim);
    for row in &resp.tokens {
        if row.len() != desc.hidden_dim {
            return Err(shape_err("token width (d_h)", desc.hidden_dim, row.len()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("non-finite token value".into()));
        }
        data.extend_from_slice(row);
    }
    Tensor::new(&[desc.fused_len, desc.hidden_dim], data)
}

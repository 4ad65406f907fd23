//! Cross-modal fusion: temporal tokens query the projected multimodal
//! tokens, and a sigmoid gate mixes the attended result with the pooled
//! multimodal summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;
use crate::params::ParamStore;
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// `2d → d_fusion → d` with GELU in between.
    TwoLayer,
    /// `2d → d`.
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub d_fusion: usize,
    pub gate: GateKind,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d_fusion: 256,
            gate: GateKind::TwoLayer,
        }
    }
}

pub fn register(store: &mut ParamStore, d_model: usize, d_mm: usize, cfg: &FusionConfig) {
    nn::register_linear(store, "fusion.proj_tem", d_model, d_model, true);
    nn::register_linear(store, "fusion.proj_mm", d_mm, d_model, true);
    nn::register_attention(store, "fusion.attn", d_model);
    nn::register_layer_norm(store, "fusion.norm", d_model);
    match cfg.gate {
        GateKind::TwoLayer => nn::register_mlp(store, "fusion.gate", 2 * d_model, cfg.d_fusion, d_model),
        GateKind::Single => nn::register_linear(store, "fusion.gate", 2 * d_model, d_model, true),
    }
}

/// Repeats each of `n` batch entries `times` times along the first axis:
/// `[n, ...] → [n·times, ...]`, entry `i·times + j` copies `i`.
pub fn repeat_instances(g: &mut Graph, x: Var, times: usize) -> Result<Var> {
    if times == 1 {
        return Ok(x);
    }
    let s = g.shape(x).to_vec();
    let mut wide = vec![s[0], 1];
    wide.extend_from_slice(&s[1..]);
    let r = g.reshape(x, &wide)?;
    wide[1] = times;
    let e = g.expand(r, &wide)?;
    let mut out = vec![s[0] * times];
    out.extend_from_slice(&s[1..]);
    g.reshape(e, &out)
}

/// Projects temporal `[n, N_p, d]` and multimodal `[n, L_f, d_h]` tokens
/// into the shared `d`-dimensional space.
pub fn project_shared(g: &mut Graph, store: &ParamStore, f_tem: Var, f_mm: Var) -> Result<(Var, Var)> {
    let (ts, ms) = (g.shape(f_tem).to_vec(), g.shape(f_mm).to_vec());
    if ts.len() != 3 || ms.len() != 3 || ts[0] != ms[0] {
        return Err(Error::dim(
            "project_shared",
            format!("temporal {ts:?} and multimodal {ms:?} must be [n, t, d] with matching n"),
        ));
    }
    let q = nn::linear(g, store, "fusion.proj_tem", f_tem)?;
    let kv = nn::linear(g, store, "fusion.proj_mm", f_mm)?;
    Ok((q, kv))
}

/// `LN(q + MHA(q, kv, kv))`; also returns the attention weights.
pub fn cross_modal_attention(g: &mut Graph, store: &ParamStore, q: Var, kv: Var, heads: usize) -> Result<(Var, Var)> {
    let (a, w) = nn::multi_head_attention(g, store, "fusion.attn", q, kv, heads)?;
    let r = g.add(q, a)?;
    Ok((nn::layer_norm(g, store, "fusion.norm", r)?, w))
}

/// `G = σ(gate([q; pooled]))`, `fused = G⊙attn + (1−G)⊙pooled`, with the
/// `[n, d]` pooled summary broadcast over tokens. Returns `(fused, G)`.
pub fn gated_fuse(g: &mut Graph, store: &ParamStore, q: Var, pooled: Var, attn: Var, gate: GateKind) -> Result<(Var, Var)> {
    let qs = g.shape(q).to_vec();
    let ps = g.shape(pooled).to_vec();
    if ps.len() != 2 || ps[0] != qs[0] || ps[1] != qs[2] || g.shape(attn) != qs.as_slice() {
        return Err(Error::dim(
            "gated_fuse",
            format!("query {qs:?}, pooled {ps:?}, attention {:?}", g.shape(attn)),
        ));
    }
    let pr = g.reshape(pooled, &[qs[0], 1, qs[2]])?;
    let pb = g.expand(pr, &qs)?;
    let cat = g.concat(&[q, pb], 2)?;
    let logits = match gate {
        GateKind::TwoLayer => nn::mlp(g, store, "fusion.gate", cat, nn::Activation::Gelu)?,
        GateKind::Single => nn::linear(g, store, "fusion.gate", cat)?,
    };
    let gv = g.sigmoid(logits)?;
    let diff = g.sub(attn, pb)?;
    let mixed = g.mul(gv, diff)?;
    Ok((g.add(pb, mixed)?, gv))
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub fused: Var,
    pub attended: Var,
    pub pooled: Var,
    pub gate: Var,
    pub weights: Var,
}

/// Full fusion of `[B·D, N_p, d]` temporal features with `[B, L_f, d_h]`
/// multimodal tokens shared by the `D` variables of each window.
pub fn forward(
    g: &mut Graph,
    store: &ParamStore,
    f_tem: Var,
    f_mm: Var,
    vars: usize,
    heads: usize,
    cfg: &FusionConfig,
) -> Result<FusionOutput> {
    let f_mm = repeat_instances(g, f_mm, vars)?;
    let (q, kv) = project_shared(g, store, f_tem, f_mm)?;
    let (attended, weights) = cross_modal_attention(g, store, q, kv, heads)?;
    let pooled = g.mean_axis(kv, 1)?;
    let (fused, gate) = gated_fuse(g, store, q, pooled, attended, cfg.gate)?;
    Ok(FusionOutput {
        fused,
        attended,
        pooled,
        gate,
        weights,
    })
}

//! Small layers shared by the learners: affine maps, a two-layer MLP and
//! multi-head scaled dot-product attention.

use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};
use crate::tensor::{Graph, Var};

pub fn register_linear(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, bias: bool) {
    store.register(&format!("{prefix}.weight"), &[d_in, d_out], Init::FanIn(d_in));
    if bias {
        store.register(&format!("{prefix}.bias"), &[d_out], Init::Zeros);
    }
}

/// `x·W (+ b)` over the last axis of `x`.
pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let y = g.matmul_last(x, w)?;
    let bias_name = format!("{prefix}.bias");
    if store.get(&bias_name).is_some() {
        let b = g.param(store, &bias_name)?;
        g.add(y, b)
    } else {
        Ok(y)
    }
}

impl Graph {
    /// Applies a `[k, n]` matrix to the last axis of an arbitrary-rank `x`.
    pub fn matmul_last(&mut self, x: Var, w: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        match shape.len() {
            0 => Err(Error::dim("matmul", "scalar input")),
            1 => {
                let r = self.reshape(x, &[1, shape[0]])?;
                let y = self.matmul(r, w)?;
                let n = self.shape(y)[1];
                self.reshape(y, &[n])
            }
            _ => self.matmul(x, w),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Identity,
}

pub fn register_mlp(store: &mut ParamStore, prefix: &str, d_in: usize, d_hidden: usize, d_out: usize) {
    register_linear(store, &format!("{prefix}.fc1"), d_in, d_hidden, true);
    register_linear(store, &format!("{prefix}.fc2"), d_hidden, d_out, true);
}

pub fn mlp(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, act: Activation) -> Result<Var> {
    let h = linear(g, store, &format!("{prefix}.fc1"), x)?;
    let h = match act {
        Activation::Gelu => g.gelu(h)?,
        Activation::Identity => h,
    };
    linear(g, store, &format!("{prefix}.fc2"), h)
}

pub fn register_attention(store: &mut ParamStore, prefix: &str, d_model: usize) {
    for m in ["wq", "wk", "wv", "wo"] {
        store.register(&format!("{prefix}.{m}"), &[d_model, d_model], Init::FanIn(d_model));
    }
}

/// Multi-head scaled dot-product attention. `query` is `[n, tq, d]`,
/// `context` is `[n, tk, d]`. Returns the `[n, tq, d]` output and the
/// `[n, heads, tq, tk]` attention weights.
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    query: Var,
    context: Var,
    heads: usize,
) -> Result<(Var, Var)> {
    let qs = g.shape(query).to_vec();
    let ks = g.shape(context).to_vec();
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
        return Err(Error::dim(
            "attention",
            format!("query {qs:?} and context {ks:?} must be [n, t, d] with matching n and d"),
        ));
    }
    let (n, tq, d) = (qs[0], qs[1], qs[2]);
    let tk = ks[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("d_model {d} is not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let split = |g: &mut Graph, x: Var, t: usize| -> Result<Var> {
        let r = g.reshape(x, &[n, t, heads, dk])?;
        g.permute(r, &[0, 2, 1, 3])
    };
    let wq = g.param(store, &format!("{prefix}.wq"))?;
    let wk = g.param(store, &format!("{prefix}.wk"))?;
    let wv = g.param(store, &format!("{prefix}.wv"))?;
    let wo = g.param(store, &format!("{prefix}.wo"))?;
    let q = g.matmul(query, wq)?;
    let q = split(g, q, tq)?;
    let k = g.matmul(context, wk)?;
    let k = split(g, k, tk)?;
    let v = g.matmul(context, wv)?;
    let v = split(g, v, tk)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let weights = g.softmax(scores, 3)?;
    let heads_out = g.matmul(weights, v)?;
    let merged = g.permute(heads_out, &[0, 2, 1, 3])?;
    let merged = g.reshape(merged, &[n, tq, d])?;
    let out = g.matmul(merged, wo)?;
    Ok((out, weights))
}

/// Inverted dropout with a constant mask drawn from `rng`.
pub fn dropout(g: &mut Graph, x: Var, p: f64, rng: &mut impl rand::Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - p;
    let mask = crate::tensor::Tensor::from_fn(g.shape(x), |_| {
        if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }
    });
    let m = g.constant(mask)?;
    g.mul(x, m)
}

pub fn register_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.register(&format!("{prefix}.gain"), &[d], Init::Ones);
    store.register(&format!("{prefix}.bias"), &[d], Init::Zeros);
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn layer_norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gain = g.param(store, &format!("{prefix}.gain"))?;
    let bias = g.param(store, &format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

//! Retrieval-augmented learner: channel-independent patch embeddings, a
//! circular memory bank of past patch summaries, top-k local retrieval and
//! self-attention global memory.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation};
use crate::params::{Init, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
    pub padding: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub e_layers: usize,
    pub num_queries: usize,
    /// Prepend `num_queries` learned tokens to the global-memory attention.
    pub use_queries: bool,
    pub dropout: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch_len: 16,
            stride: 8,
            padding: 8,
            d_model: 128,
            n_heads: 4,
            e_layers: 2,
            num_queries: 8,
            use_queries: false,
            dropout: 0.1,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_len < 1 {
            return bad("patch_len must be at least 1".into());
        }
        if self.stride < 1 || self.stride > self.patch_len {
            return bad(format!("stride {} must lie in 1..={}", self.stride, self.patch_len));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.use_queries && self.num_queries == 0 {
            return bad("use_queries needs num_queries ≥ 1".into());
        }
        Ok(())
    }

    /// Number of patches for a series of length `len`.
    pub fn num_patches(&self, len: usize) -> Result<usize> {
        let padded = len + self.padding;
        if padded < self.patch_len {
            return Err(Error::Config(format!(
                "series length {len} plus padding {} is shorter than patch_len {}",
                self.padding, self.patch_len
            )));
        }
        Ok((padded - self.patch_len) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Cosine,
    Dot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub capacity: usize,
    pub top_k: usize,
    pub similarity: Similarity,
    pub activation: Activation,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            capacity: 256,
            top_k: 5,
            similarity: Similarity::Cosine,
            activation: Activation::Gelu,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Splits every variable of a `[B, L, D]` batch into overlapping patches.
/// The last value is repeated `padding` times before patching. The result is
/// `[B·D, N_p, patch_len]`, instance `b·D + d`.
pub fn patchify(x: &Tensor, cfg: &PatchConfig) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::dim("patchify", format!("expected [B, L, D], got {s:?}")));
    }
    let (b, l, d) = (s[0], s[1], s[2]);
    if l == 0 {
        return Err(Error::dim("patchify", "empty series"));
    }
    let np = cfg.num_patches(l)?;
    let pl = cfg.patch_len;
    let xs = x.data();
    let mut out = Vec::with_capacity(b * d * np * pl);
    for bi in 0..b {
        for di in 0..d {
            let at = |t: usize| xs[(bi * l + t.min(l - 1)) * d + di];
            for p in 0..np {
                out.extend((0..pl).map(|j| at(p * cfg.stride + j)));
            }
        }
    }
    Tensor::new(&[b * d, np, pl], out)
}

pub fn register_embedding(store: &mut ParamStore, cfg: &PatchConfig, max_patches: usize) {
    nn::register_linear(store, "ral.embed", cfg.patch_len, cfg.d_model, true);
    store.register("ral.embed.position", &[max_patches, cfg.d_model], Init::Normal(0.02));
}

/// `patches·W + b + position[0..N_p]`.
pub fn embed_patches(g: &mut Graph, store: &ParamStore, patches: Var) -> Result<Var> {
    let np = g.shape(patches)[1];
    let cap = store.value("ral.embed.position")?.shape()[0];
    if np > cap {
        return Err(Error::Capacity(format!(
            "{np} patches exceed the positional table of {cap}"
        )));
    }
    let proj = nn::linear(g, store, "ral.embed", patches)?;
    let pos = g.param(store, "ral.embed.position")?;
    let pos = g.narrow(pos, 0, 0, np)?;
    g.add(proj, pos)
}

/// Fixed-capacity circular store of detached patch summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    entries: Tensor,
    cursor: usize,
    filled: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize, d_model: usize) -> Self {
        assert!(capacity > 0, "memory bank capacity must be positive");
        MemoryBank {
            entries: Tensor::zeros(&[capacity, d_model]),
            cursor: 0,
            filled: 0,
        }
    }

    pub fn from_parts(entries: Tensor, cursor: usize, filled: usize) -> Result<Self> {
        let cap = entries.shape().first().copied().unwrap_or(0);
        if entries.ndim() != 2 || cap == 0 || cursor >= cap || filled > cap {
            return Err(Error::Checkpoint(format!(
                "inconsistent memory bank: shape {:?}, cursor {cursor}, filled {filled}",
                entries.shape()
            )));
        }
        Ok(MemoryBank { entries, cursor, filled })
    }

    pub fn capacity(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn d_model(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        let d = self.d_model();
        &self.entries.data()[i * d..(i + 1) * d]
    }

    /// Appends each row of `rows` (`[n, d_model]`), overwriting the oldest
    /// entry once the bank is full.
    pub fn write(&mut self, rows: &Tensor) -> Result<()> {
        let d = self.d_model();
        if rows.ndim() != 2 || rows.shape()[1] != d {
            return Err(Error::dim(
                "memory_update",
                format!("rows {:?} do not match bank width {d}", rows.shape()),
            ));
        }
        let cap = self.capacity();
        for row in rows.data().chunks(d) {
            let c = self.cursor;
            self.entries.data_mut()[c * d..(c + 1) * d].copy_from_slice(row);
            self.cursor = (c + 1) % cap;
            self.filled = (self.filled + 1).min(cap);
        }
        Ok(())
    }

    /// Writes the temporal mean of every instance of a `[n, N_p, d]` batch.
    pub fn update(&mut self, embeddings: &Tensor) -> Result<()> {
        self.write(&patch_means(embeddings)?)
    }

    /// Live entries from oldest to newest.
    pub fn oldest_first(&self) -> Vec<Vec<f64>> {
        let cap = self.capacity();
        let start = if self.filled < cap { 0 } else { self.cursor };
        (0..self.filled)
            .map(|i| self.slot((start + i) % cap).to_vec())
            .collect()
    }

    /// Indices of the `k` live slots most similar to `query`, best first.
    /// Ties go to the lowest slot index.
    pub fn top_k(&self, query: &[f64], k: usize, sim: Similarity) -> Vec<usize> {
        let qn = norm(query);
        let mut scored: Vec<(f64, usize)> = (0..self.filled)
            .map(|s| {
                let e = self.slot(s);
                let dot: f64 = query.iter().zip(e).map(|(a, b)| a * b).sum();
                let score = match sim {
                    Similarity::Dot => dot,
                    Similarity::Cosine => {
                        let den = qn * norm(e);
                        if den > 0.0 { dot / den } else { 0.0 }
                    }
                };
                (score, s)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k.min(self.filled)).map(|(_, s)| s).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean over the patch axis of `[n, N_p, d]`.
pub fn patch_means(emb: &Tensor) -> Result<Tensor> {
    let s = emb.shape();
    if s.len() != 3 || s[1] == 0 {
        return Err(Error::dim("memory_update", format!("expected [n, N_p, d], got {s:?}")));
    }
    let (n, np, d) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for p in 0..np {
            let row = &emb.data()[(i * np + p) * d..(i * np + p + 1) * d];
            for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o += v / np as f64;
            }
        }
    }
    Tensor::new(&[n, d], out)
}

pub fn register_local_memory(store: &mut ParamStore, d_model: usize) {
    nn::register_mlp(store, "ral.local", d_model, d_model, d_model);
}

/// Local memory: per patch, the mean of the top-k most similar bank
/// entries is passed through a two-layer MLP, averaged over patches and
/// added back to the embeddings. An empty bank returns `emb` unchanged.
pub fn retrieve_local(g: &mut Graph, store: &ParamStore, bank: &MemoryBank, emb: Var, cfg: &MemoryConfig) -> Result<Var> {
    if cfg.top_k < 1 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if bank.filled() == 0 {
        return Ok(emb);
    }
    let shape = g.shape(emb).to_vec();
    if shape.len() != 3 || shape[2] != bank.d_model() {
        return Err(Error::dim(
            "retrieve_local",
            format!("embeddings {shape:?} vs bank width {}", bank.d_model()),
        ));
    }
    let (n, np, d) = (shape[0], shape[1], shape[2]);
    let values = g.value(emb).data();
    let mut retrieved = vec![0.0; n * np * d];
    for (row, dst) in values.chunks(d).zip(retrieved.chunks_mut(d)) {
        let hits = bank.top_k(row, cfg.top_k, cfg.similarity);
        for &s in &hits {
            for (o, v) in dst.iter_mut().zip(bank.slot(s)) {
                *o += v / hits.len() as f64;
            }
        }
    }
    let retrieved = g.constant(Tensor::new(&shape, retrieved)?)?;
    let feats = nn::mlp(g, store, "ral.local", retrieved, cfg.activation)?;
    let pooled = g.mean_axis(feats, 1)?;
    let pooled = g.reshape(pooled, &[n, 1, d])?;
    g.add(emb, pooled)
}

pub fn register_global_memory(store: &mut ParamStore, cfg: &PatchConfig) {
    for l in 0..cfg.e_layers {
        nn::register_layer_norm(store, &format!("ral.global.{l}.norm"), cfg.d_model);
        nn::register_attention(store, &format!("ral.global.{l}.attn"), cfg.d_model);
    }
    if cfg.use_queries {
        store.register("ral.global.queries", &[cfg.num_queries, cfg.d_model], Init::Normal(0.02));
    }
}

/// Global memory: `e_layers` pre-norm self-attention blocks over the patch
/// sequence, averaged over time. Returns `[n, d]` and each block's weights.
pub fn global_memory(g: &mut Graph, store: &ParamStore, emb: Var, cfg: &PatchConfig) -> Result<(Var, Vec<Var>)> {
    let shape = g.shape(emb).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim("global_memory", format!("expected [n, N_p, d], got {shape:?}")));
    }
    let mut x = emb;
    if cfg.use_queries {
        let q = g.param(store, "ral.global.queries")?;
        let q = g.reshape(q, &[1, cfg.num_queries, shape[2]])?;
        let q = g.expand(q, &[shape[0], cfg.num_queries, shape[2]])?;
        x = g.concat(&[q, x], 1)?;
    }
    let mut weights = Vec::with_capacity(cfg.e_layers);
    for l in 0..cfg.e_layers {
        let h = nn::layer_norm(g, store, &format!("ral.global.{l}.norm"), x)?;
        let (a, w) = nn::multi_head_attention(g, store, &format!("ral.global.{l}.attn"), h, h, cfg.n_heads)?;
        weights.push(w);
        x = g.add(x, a)?;
    }
    Ok((g.mean_axis(x, 1)?, weights))
}

/// Hierarchical memory output for one batch.
#[derive(Clone, Copy, Debug)]
pub struct MemoryFeatures {
    pub local: Var,
    pub global_summary: Var,
    pub fused: Var,
}

/// `fused[i, p, :] = local[i, p, :] + global[i, :]`.
pub fn fuse_memory(g: &mut Graph, local: Var, global_summary: Var) -> Result<MemoryFeatures> {
    let (ls, gs) = (g.shape(local).to_vec(), g.shape(global_summary).to_vec());
    if ls.len() != 3 || gs.len() != 2 || ls[0] != gs[0] || ls[2] != gs[1] {
        return Err(Error::dim(
            "fuse_memory",
            format!("local {ls:?} and global {gs:?} do not align"),
        ));
    }
    let gr = g.reshape(global_summary, &[gs[0], 1, gs[1]])?;
    let fused = g.add(local, gr)?;
    Ok(MemoryFeatures {
        local,
        global_summary,
        fused,
    })
}

pub fn register(store: &mut ParamStore, patch: &PatchConfig, max_patches: usize) {
    register_embedding(store, patch, max_patches);
    register_local_memory(store, patch.d_model);
    register_global_memory(store, patch);
}

/// Full learner output.
#[derive(Debug)]
pub struct RalOutput {
    pub embeddings: Var,
    pub memory: MemoryFeatures,
    /// Detached per-instance patch means to be written to the bank.
    pub writes: Tensor,
}

/// Runs the learner on a normalised `[B, L, D]` batch. Pass a generator to
/// enable dropout on the patch embeddings.
pub fn forward<R: Rng>(
    g: &mut Graph,
    store: &ParamStore,
    bank: &MemoryBank,
    x: &Tensor,
    patch: &PatchConfig,
    memory: &MemoryConfig,
    dropout_rng: Option<&mut R>,
) -> Result<RalOutput> {
    let patches = g.constant(patchify(x, patch)?)?;
    let mut emb = embed_patches(g, store, patches)?;
    if let Some(rng) = dropout_rng {
        emb = nn::dropout(g, emb, patch.dropout, rng)?;
    }
    let writes = patch_means(g.value(emb))?;
    let local = retrieve_local(g, store, bank, emb, memory)?;
    let (global, _) = global_memory(g, store, emb, patch)?;
    let memory = fuse_memory(g, local, global)?;
    Ok(RalOutput {
        embeddings: emb,
        memory,
        writes,
    })
}

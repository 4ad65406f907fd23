//! The assembled forecaster: memory learner, image and text learners, a
//! frozen encoder, gated fusion and a linear head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, Encoder, EncoderDescriptor};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig, GateKind};
use crate::nn::Activation;
use crate::params::ParamStore;
use crate::predictor::{self, instance_normalize, NormState};
use crate::ral::{self, MemoryBank, MemoryConfig, PatchConfig, Similarity};
use crate::tal::{self, PromptContext};
use crate::tensor::{Graph, Tensor, Var};
use crate::val::{self, Channel, ImageConfig};

/// Architecture hyperparameters, flat as they appear in the `[model]`
/// section of a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub pred_len: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub padding: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub e_layers: usize,
    pub num_queries: usize,
    pub use_queries: bool,
    pub dropout: f64,
    pub memory_capacity: usize,
    pub top_k: usize,
    pub similarity: Similarity,
    pub memory_activation: Activation,
    pub image_size: usize,
    pub hidden_dim: usize,
    pub out_channels: usize,
    pub image_eps: f64,
    pub channels: Vec<Channel>,
    pub d_fusion: usize,
    pub gate: GateKind,
    pub norm_const: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = PatchConfig::default();
        let m = MemoryConfig::default();
        let i = ImageConfig::default();
        let f = FusionConfig::default();
        ModelConfig {
            seq_len: 512,
            pred_len: 96,
            patch_len: p.patch_len,
            stride: p.stride,
            padding: p.padding,
            d_model: p.d_model,
            n_heads: p.n_heads,
            e_layers: p.e_layers,
            num_queries: p.num_queries,
            use_queries: p.use_queries,
            dropout: p.dropout,
            memory_capacity: m.capacity,
            top_k: m.top_k,
            similarity: m.similarity,
            memory_activation: m.activation,
            image_size: i.image_size,
            hidden_dim: i.hidden_dim,
            out_channels: i.out_channels,
            image_eps: i.eps,
            channels: i.channels,
            d_fusion: f.d_fusion,
            gate: f.gate,
            norm_const: 0.4,
        }
    }
}

impl ModelConfig {
    pub fn patch(&self) -> PatchConfig {
        PatchConfig {
            patch_len: self.patch_len,
            stride: self.stride,
            padding: self.padding,
            d_model: self.d_model,
            n_heads: self.n_heads,
            e_layers: self.e_layers,
            num_queries: self.num_queries,
            use_queries: self.use_queries,
            dropout: self.dropout,
        }
    }

    pub fn memory(&self) -> MemoryConfig {
        MemoryConfig {
            capacity: self.memory_capacity,
            top_k: self.top_k,
            similarity: self.similarity,
            activation: self.memory_activation,
        }
    }

    pub fn image(&self, periodicity: usize) -> ImageConfig {
        ImageConfig {
            image_size: self.image_size,
            periodicity,
            hidden_dim: self.hidden_dim,
            out_channels: self.out_channels,
            eps: self.image_eps,
            channels: self.channels.clone(),
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            d_fusion: self.d_fusion,
            gate: self.gate,
        }
    }

    pub fn validate(&self, periodicity: usize) -> Result<()> {
        if self.seq_len == 0 || self.pred_len == 0 {
            return Err(Error::Config("seq_len and pred_len must be positive".into()));
        }
        if self.d_fusion == 0 {
            return Err(Error::Config("d_fusion must be positive".into()));
        }
        if !(self.norm_const.is_finite() && self.norm_const > 0.0) {
            return Err(Error::Config(format!("norm_const {} must be positive", self.norm_const)));
        }
        let patch = self.patch();
        patch.validate()?;
        patch.num_patches(self.seq_len)?;
        self.memory().validate()?;
        self.image(periodicity).validate()
    }
}

/// Output of one forward pass.
#[derive(Debug)]
pub struct Forward {
    /// `[B, H, D]` in input units.
    pub forecast: Var,
    /// `[B, H, D]` before denormalisation.
    pub normalized: Var,
    /// `[B, C, S, S]` in `[0, 255]`.
    pub image: Var,
    /// `[B, L_f, d_h]`.
    pub tokens: Var,
    pub prompts: Vec<String>,
    pub norm: NormState,
    /// Patch summaries to append to the memory bank after a training step.
    pub writes: Tensor,
}

/// One window as the image learner and prompt builder present it.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    /// `[C, S, S]` pixel intensities in `[0, 255]`.
    pub image: Tensor,
    pub prompt: String,
    /// Range of the resized map before min-max scaling.
    pub raw_min: f64,
    pub raw_max: f64,
}

pub struct TimeVlm {
    pub cfg: ModelConfig,
    pub vars: usize,
    pub context: PromptContext,
    pub store: ParamStore,
    pub bank: MemoryBank,
    encoder: Box<dyn Encoder>,
}

impl std::fmt::Debug for TimeVlm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TimeVlm")
            .field("cfg", &self.cfg)
            .field("vars", &self.vars)
            .field("params", &self.store.num_scalars())
            .finish()
    }
}

impl TimeVlm {
    pub fn new(cfg: ModelConfig, vars: usize, context: PromptContext, encoder: Box<dyn Encoder>, seed: u64) -> Result<Self> {
        cfg.validate(context.periodicity)?;
        if vars == 0 {
            return Err(Error::Config("dataset has no variables".into()));
        }
        if context.input_len != cfg.seq_len || context.horizon != cfg.pred_len {
            return Err(Error::Config("prompt context disagrees with seq_len/pred_len".into()));
        }
        let patch = cfg.patch();
        let np = patch.num_patches(cfg.seq_len)?;
        let mut store = ParamStore::new(seed);
        ral::register(&mut store, &patch, np);
        val::register(&mut store, &cfg.image(context.periodicity));
        fusion::register(&mut store, cfg.d_model, encoder.descriptor().hidden_dim, &cfg.fusion());
        predictor::register_head(&mut store, np, cfg.d_model, cfg.pred_len);
        let bank = MemoryBank::new(cfg.memory_capacity, cfg.d_model);
        Ok(TimeVlm {
            cfg,
            vars,
            context,
            store,
            bank,
            encoder,
        })
    }

    /// Builds the encoder from its descriptor as well.
    pub fn with_encoder(cfg: ModelConfig, vars: usize, context: PromptContext, desc: &EncoderDescriptor, seed: u64) -> Result<Self> {
        let enc = encoder::build(desc, cfg.out_channels, cfg.image_size)?;
        Self::new(cfg, vars, context, enc, seed)
    }

    pub fn encoder(&self) -> &dyn Encoder {
        self.encoder.as_ref()
    }

    pub fn image_config(&self) -> ImageConfig {
        self.cfg.image(self.context.periodicity)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[0] == 0 || s[1] != self.cfg.seq_len || s[2] != self.vars {
            return Err(Error::Shape {
                what: "input batch".into(),
                expected: format!("[B, {}, {}]", self.cfg.seq_len, self.vars),
                actual: format!("{s:?}"),
            });
        }
        Ok(())
    }

    /// Runs the model on a `[B, L, D]` batch. Passing a generator selects
    /// training behaviour (dropout on patch embeddings).
    pub fn forward(&self, g: &mut Graph, x: &Tensor, dropout: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        self.forward_with(&self.store, g, x, dropout)
    }

    /// [`forward`](Self::forward) with an explicit parameter set.
    pub fn forward_with(&self, store: &ParamStore, g: &mut Graph, x: &Tensor, dropout: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        self.check_input(x)?;
        let b = x.shape()[0];
        let (xn, norm) = instance_normalize(x, self.cfg.norm_const)?;
        let r = ral::forward(g, store, &self.bank, &xn, &self.cfg.patch(), &self.cfg.memory(), dropout)?;
        let image = val::forward(g, store, &xn, &self.image_config())?;
        let prompts = tal::batch_prompts(x, &self.context)?;
        let emb = self.encoder.encode(g, image, &prompts)?;
        let fused = fusion::forward(g, store, r.memory.fused, emb.tokens, self.vars, self.cfg.n_heads, &self.cfg.fusion())?;
        let normalized = predictor::predict(g, store, fused.fused, b, self.vars)?;
        let forecast = norm.denormalize_var(g, normalized)?;
        Ok(Forward {
            forecast,
            normalized,
            image,
            tokens: emb.tokens,
            prompts,
            norm,
            writes: r.writes,
        })
    }

    /// Evaluation-mode forecast in input units.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, x, None)?;
        Ok(g.value(out.forecast).clone())
    }

    /// The image and prompt the model sees for one `[L, D]` window.
    pub fn render(&self, window: &Tensor) -> Result<Rendering> {
        let x = window.reshape(&[1, self.cfg.seq_len, self.vars])?;
        let (xn, _) = instance_normalize(&x, self.cfg.norm_const)?;
        let cfg = self.image_config();
        let mut g = Graph::new();
        let feats = g.constant(val::encode_features(&xn, &cfg)?)?;
        let conv = val::multiscale_conv(&mut g, &self.store, feats)?;
        let resized = g.bilinear_resize(conv, cfg.image_size, cfg.image_size)?;
        let raw = g.value(resized);
        let raw_min = raw.data().iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = raw.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let img = g.min_max_scale(resized, val::PIXEL_MAX, cfg.eps)?;
        let s = g.shape(img)[1..].to_vec();
        Ok(Rendering {
            image: g.value(img).reshape(&s)?,
            prompt: tal::build_prompt(&tal::window_stats(window)?, &self.context),
            raw_min,
            raw_max,
        })
    }

    /// Identifies everything a checkpoint must agree with.
    pub fn fingerprint(&self) -> String {
        let cfg = serde_json::to_string(&self.cfg).expect("config serialises");
        let shape = format!("vars={} period={}", self.vars, self.context.periodicity);
        encoder::sha256_hex(&[cfg.as_bytes(), shape.as_bytes(), self.encoder.checksum().as_bytes()])
    }
}

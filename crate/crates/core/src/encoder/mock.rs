use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sha256_hex, Encoder, EncoderDescriptor, MultimodalEmbedding};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, Var};

pub const TEXT_BUCKETS: u64 = 65_536;
const LAYOUT_TAG: &str = "mock-v1";

/// Deterministic stand-in for a frozen vision-language model.
///
/// Visual tokens are a fixed random projection of non-overlapping image
/// patches on a square grid (image zero-padded at the bottom and right),
/// followed by the projection of the mean patch for any leftover slots.
/// Text tokens are seeded hash-bucket vectors of the first `n_text` words.
/// Unused text slots are zero.
#[derive(Clone, Debug)]
pub struct MockEncoder {
    desc: EncoderDescriptor,
    channels: usize,
    image_size: usize,
    grid: usize,
    patch: usize,
    frozen: ParamStore,
}

impl MockEncoder {
    pub fn new(desc: EncoderDescriptor, channels: usize, image_size: usize) -> Result<Self> {
        desc.validate()?;
        if channels == 0 || image_size == 0 {
            return Err(Error::Config("mock encoder needs a non-empty image".into()));
        }
        let nv = desc.visual_tokens();
        let grid = (nv as f64).sqrt().floor() as usize;
        let grid = if (grid + 1) * (grid + 1) <= nv { grid + 1 } else { grid };
        let patch = image_size.div_ceil(grid);
        let dim = channels * patch * patch;
        let mut rng = ChaCha8Rng::seed_from_u64(desc.seed);
        let w = Tensor::randn(&[dim, desc.hidden_dim], 1.0 / (dim as f64).sqrt(), &mut rng).map(|v| v / 255.0);
        let mut frozen = ParamStore::new(desc.seed);
        frozen.insert("encoder.visual.weight", w, false);
        Ok(MockEncoder {
            desc,
            channels,
            image_size,
            grid,
            patch,
            frozen,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn frozen_params(&self) -> &ParamStore {
        &self.frozen
    }

    /// FNV-1a bucket of a word, keyed by the seed.
    pub fn bucket(&self, word: &str) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in self.desc.seed.to_le_bytes().iter().chain(word.as_bytes()) {
            h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h % TEXT_BUCKETS
    }

    fn bucket_vector(&self, bucket: u64) -> Tensor {
        let key = self.desc.seed ^ (bucket + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        Tensor::randn(&[self.desc.hidden_dim], 1.0 / (self.desc.hidden_dim as f64).sqrt(), &mut rng)
    }

    /// `[n_text, d_h]` text tokens for one prompt.
    pub fn text_tokens(&self, text: &str) -> Tensor {
        let d = self.desc.hidden_dim;
        let mut out = Tensor::zeros(&[self.desc.n_text, d]);
        for (i, word) in text.split_whitespace().take(self.desc.n_text).enumerate() {
            let v = self.bucket_vector(self.bucket(word));
            out.data_mut()[i * d..(i + 1) * d].copy_from_slice(v.data());
        }
        out
    }

    fn visual_tokens(&self, g: &mut Graph, images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.image_size || s[3] != self.image_size {
            return Err(Error::Shape {
                what: "mock encoder image batch".into(),
                expected: format!("[B, {}, {}, {}]", self.channels, self.image_size, self.image_size),
                actual: format!("{s:?}"),
            });
        }
        let (b, c, gr, p) = (s[0], self.channels, self.grid, self.patch);
        let padded = gr * p;
        let extra = padded - self.image_size;
        let x = g.pad2d(images, [0, extra, 0, extra])?;
        let x = g.reshape(x, &[b, c, gr, p, gr, p])?;
        let x = g.permute(x, &[0, 2, 4, 1, 3, 5])?;
        let patches = g.reshape(x, &[b, gr * gr, c * p * p])?;
        let w = g.param(&self.frozen, "encoder.visual.weight")?;
        let grid_tokens = g.matmul(patches, w)?;
        let leftover = self.desc.visual_tokens() - gr * gr;
        if leftover == 0 {
            return Ok(grid_tokens);
        }
        let mean = g.mean_axis(patches, 1)?;
        let mean = g.reshape(mean, &[b, 1, c * p * p])?;
        let pooled = g.matmul(mean, w)?;
        let pooled = g.expand(pooled, &[b, leftover, self.desc.hidden_dim])?;
        g.concat(&[grid_tokens, pooled], 1)
    }
}

impl Encoder for MockEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.desc
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn encode(&self, g: &mut Graph, images: Var, texts: &[String]) -> Result<MultimodalEmbedding> {
        let visual = self.visual_tokens(g, images)?;
        let b = g.shape(images)[0];
        if texts.len() != b {
            return Err(Error::dim("encode", format!("{} prompts for {b} images", texts.len())));
        }
        let d = self.desc.hidden_dim;
        let mut text = Vec::with_capacity(b * self.desc.n_text * d);
        for t in texts {
            text.extend_from_slice(self.text_tokens(t).data());
        }
        let text = g.constant(Tensor::new(&[b, self.desc.n_text, d], text)?)?;
        let tokens = g.concat(&[text, visual], 1)?;
        Ok(MultimodalEmbedding {
            tokens,
            token_types: self.desc.token_types(),
        })
    }

    fn checksum(&self) -> String {
        let layout = format!("{LAYOUT_TAG} c={} s={} grid={} patch={}", self.channels, self.image_size, self.grid, self.patch);
        sha256_hex(&[
            self.frozen.checksum("").as_bytes(),
            self.desc.canonical().as_bytes(),
            layout.as_bytes(),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TokenType;
    use crate::tensor::grad_check;
    use std::collections::HashSet;

    fn small() -> MockEncoder {
        let desc = EncoderDescriptor {
            fused_len: 14,
            hidden_dim: 6,
            n_text: 3,
            seed: 9,
            ..Default::default()
        };
        MockEncoder::new(desc, 3, 8).unwrap()
    }

    #[test]
    fn default_layout() {
        let e = MockEncoder::new(EncoderDescriptor::default(), 3, 64).unwrap();
        assert_eq!((e.grid(), e.patch_size()), (12, 6));
        let mut g = Graph::new();
        let img = g.constant(Tensor::zeros(&[2, 3, 64, 64])).unwrap();
        let out = e.encode(&mut g, img, &["a b".into(), "c".into()]).unwrap();
        assert_eq!(g.shape(out.tokens), &[2, 156, 768]);
        assert_eq!(out.token_types.iter().filter(|&&t| t == TokenType::Text).count(), 11);
        // zero image → zero visual tokens
        let v = g.value(out.tokens);
        assert!(v.data()[11 * 768..156 * 768].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_and_frozen() {
        let e = small();
        let before = e.checksum();
        let img = Tensor::from_fn(&[1, 3, 8, 8], |i| (i % 256) as f64);
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(img.clone()).unwrap();
            let out = e.encode(&mut g, x, &["rising load".into()]).unwrap();
            g.value(out.tokens).clone()
        };
        assert_eq!(run(), run());
        assert_eq!(before, e.checksum());
        assert_eq!(before, small().checksum());
    }

    #[test]
    fn word_changes_move_text_tokens() {
        let e = MockEncoder::new(EncoderDescriptor { n_text: 11, fused_len: 20, hidden_dim: 16, ..Default::default() }, 1, 8).unwrap();
        let words: Vec<String> = (0..100).map(|i| format!("word{i}")).collect();
        let vecs: HashSet<Vec<u64>> = words
            .iter()
            .map(|w| e.text_tokens(w).data()[..16].iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(vecs.len(), 100);
        let a = e.text_tokens("flat trend over the window");
        let b = e.text_tokens("flat trend over this window");
        assert_ne!(a, b);
        // unused slots are zero
        assert!(a.data()[5 * 16..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_gradient_check() {
        let e = small();
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(2);
        let img = Tensor::uniform(&[1, 3, 8, 8], 255.0, &mut rng).map(f64::abs);
        let err = grad_check(
            |g, v| {
                let out = e.encode(g, v[0], &["x y".into()])?;
                let sq = g.mul(out.tokens, out.tokens)?;
                g.sum_all(sq)
            },
            &[img],
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn wrong_image_shape() {
        let e = small();
        let mut g = Graph::new();
        let img = g.constant(Tensor::zeros(&[1, 1, 8, 8])).unwrap();
        assert!(matches!(e.encode(&mut g, img, &["".into()]), Err(Error::Shape { .. })));
    }
}

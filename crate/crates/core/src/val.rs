//! Vision-augmented learner: turns a normalised window into a small
//! multi-channel image via frequency and periodicity channels, a 1-D and two
//! 2-D convolutions, bilinear resizing and min-max scaling to `[0, 255]`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};
use crate::tensor::{fft_real, Graph, Tensor, Var};

/// Feature channels stacked before the convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Raw,
    Freq,
    Sin,
    Cos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageConfig {
    pub image_size: usize,
    pub periodicity: usize,
    pub hidden_dim: usize,
    pub out_channels: usize,
    pub eps: f64,
    pub channels: Vec<Channel>,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            image_size: 64,
            periodicity: 24,
            hidden_dim: 16,
            out_channels: 3,
            eps: 1e-5,
            channels: vec![Channel::Raw, Channel::Freq, Channel::Sin, Channel::Cos],
        }
    }
}

pub const KERNEL_1D: usize = 3;
pub const KERNEL_2D: usize = 3;
pub const PIXEL_MAX: f64 = 255.0;

impl ImageConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 8 {
            return bad(format!("image_size {} is below 8", self.image_size));
        }
        if self.periodicity < 1 {
            return bad("periodicity must be at least 1".into());
        }
        if self.hidden_dim < 2 || !self.hidden_dim.is_multiple_of(2) {
            return bad(format!("hidden_dim {} must be even and at least 2", self.hidden_dim));
        }
        if self.out_channels == 0 {
            return bad("out_channels must be positive".into());
        }
        if self.eps <= 0.0 {
            return bad("eps must be positive".into());
        }
        if self.channels.is_empty() {
            return bad("at least one feature channel is required".into());
        }
        Ok(())
    }
}

/// DFT magnitudes of every `(b, d)` series of a `[B, L, D]` batch, laid out
/// index-wise along the time axis.
pub fn frequency_encode(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || s[1] == 0 {
        return Err(Error::dim("frequency_encode", format!("expected [B, L ≥ 1, D], got {s:?}")));
    }
    let (b, l, d) = (s[0], s[1], s[2]);
    let mut out = Tensor::zeros(s);
    let mut series = vec![0.0; l];
    for bi in 0..b {
        for di in 0..d {
            for (t, v) in series.iter_mut().enumerate() {
                *v = x.data()[(bi * l + t) * d + di];
            }
            let (re, im) = fft_real(&series)?;
            for t in 0..l {
                out.data_mut()[(bi * l + t) * d + di] = re[t].hypot(im[t]);
            }
        }
    }
    Ok(out)
}

/// `[L, 2]` table of `[sin(2πt/P), cos(2πt/P)]`.
pub fn periodicity_encode(len: usize, period: usize) -> Result<Tensor> {
    if period < 1 {
        return Err(Error::Config("periodicity must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(2 * len);
    for t in 0..len {
        let phase = 2.0 * PI * (t % period) as f64 / period as f64;
        out.extend([phase.sin(), phase.cos()]);
    }
    Tensor::new(&[len, 2], out)
}

/// Stacks the selected channels into `[B, L, D, F]`.
pub fn assemble_features(x: &Tensor, freq: &Tensor, per: &Tensor, channels: &[Channel]) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || freq.shape() != s || per.shape() != [s[1], 2] {
        return Err(Error::dim(
            "assemble_features",
            format!("series {s:?}, frequency {:?}, periodicity {:?}", freq.shape(), per.shape()),
        ));
    }
    let (b, l, d) = (s[0], s[1], s[2]);
    let f = channels.len();
    let mut out = Vec::with_capacity(b * l * d * f);
    for bi in 0..b {
        for t in 0..l {
            for di in 0..d {
                let i = (bi * l + t) * d + di;
                out.extend(channels.iter().map(|c| match c {
                    Channel::Raw => x.data()[i],
                    Channel::Freq => freq.data()[i],
                    Channel::Sin => per.data()[2 * t],
                    Channel::Cos => per.data()[2 * t + 1],
                }));
            }
        }
    }
    Tensor::new(&[b, l, d, f], out)
}

/// Full feature tensor for a `[B, L, D]` window batch.
pub fn encode_features(x: &Tensor, cfg: &ImageConfig) -> Result<Tensor> {
    let freq = frequency_encode(x)?;
    let per = periodicity_encode(x.shape()[1], cfg.periodicity)?;
    assemble_features(x, &freq, &per, &cfg.channels)
}

pub fn register(store: &mut ParamStore, cfg: &ImageConfig) {
    let (f, h, c) = (cfg.channels.len(), cfg.hidden_dim, cfg.out_channels);
    let half = h / 2;
    store.register("val.conv1.kernel", &[h, f, KERNEL_1D], Init::FanIn(f * KERNEL_1D));
    store.register("val.conv1.bias", &[h], Init::Zeros);
    store.register("val.conv2.kernel", &[half, 1, KERNEL_2D, KERNEL_2D], Init::FanIn(KERNEL_2D * KERNEL_2D));
    store.register("val.conv2.bias", &[half], Init::Zeros);
    store.register("val.conv3.kernel", &[c, half, KERNEL_2D, KERNEL_2D], Init::FanIn(half * KERNEL_2D * KERNEL_2D));
    store.register("val.conv3.bias", &[c], Init::Zeros);
}

fn channel_bias(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let b = g.param(store, name)?;
    let n = g.shape(b)[0];
    let mut shape = vec![1; g.shape(x).len()];
    shape[1] = n;
    let b = g.reshape(b, &shape)?;
    g.add(x, b)
}

/// `[B, L, D, F]` features to a `[B, C, H_hidden, L]` map.
pub fn multiscale_conv(g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
    let s = g.shape(features).to_vec();
    if s.len() != 4 {
        return Err(Error::dim("multiscale_conv", format!("expected [B, L, D, F], got {s:?}")));
    }
    let (b, l, d, f) = (s[0], s[1], s[2], s[3]);
    let k1 = g.param(store, "val.conv1.kernel")?;
    let ks = g.shape(k1).to_vec();
    if ks[1] != f {
        return Err(Error::dim("multiscale_conv", format!("{f} feature channels, kernel expects {}", ks[1])));
    }
    let hidden = ks[0];
    if !hidden.is_multiple_of(2) {
        return Err(Error::Config(format!("hidden_dim {hidden} must be even")));
    }
    let x = g.permute(features, &[0, 2, 3, 1])?;
    let x = g.reshape(x, &[b * d, f, l])?;
    let x = g.conv1d(x, k1, 1, KERNEL_1D / 2)?;
    let x = channel_bias(g, store, "val.conv1.bias", x)?;
    let x = g.reshape(x, &[b, d, hidden, l])?;
    let x = g.mean_axis(x, 1)?;
    let x = g.reshape(x, &[b, 1, hidden, l])?;
    let pad = (KERNEL_2D / 2, KERNEL_2D / 2);
    let k2 = g.param(store, "val.conv2.kernel")?;
    let x = g.conv2d(x, k2, (1, 1), pad)?;
    let x = channel_bias(g, store, "val.conv2.bias", x)?;
    let k3 = g.param(store, "val.conv3.kernel")?;
    let x = g.conv2d(x, k3, (1, 1), pad)?;
    channel_bias(g, store, "val.conv3.bias", x)
}

/// Bilinear resize to `image_size` squared, then per-image min-max scaling
/// to `[0, 255]` over all channels jointly.
pub fn to_image(g: &mut Graph, conv_out: Var, cfg: &ImageConfig) -> Result<Var> {
    let x = g.bilinear_resize(conv_out, cfg.image_size, cfg.image_size)?;
    g.min_max_scale(x, PIXEL_MAX, cfg.eps)
}

/// Window batch `[B, L, D]` to image batch `[B, C, S, S]`.
pub fn forward(g: &mut Graph, store: &ParamStore, x: &Tensor, cfg: &ImageConfig) -> Result<Var> {
    let feats = g.constant(encode_features(x, cfg)?)?;
    let conv = multiscale_conv(g, store, feats)?;
    to_image(g, conv, cfg)
}

/// 8-bit quantisation with round-half-up.
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, PIXEL_MAX) as u8
}

/// Binary PGM (`C = 1`) or PPM (`C = 3`) bytes for one `[C, H, W]` image.
pub fn encode_pnm(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::dim("render_image", format!("expected [1|3, H, W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(img.data()[(ch * h + y) * w + x]));
            }
        }
    }
    Ok(out)
}

pub fn render_image(img: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_pnm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a binary PGM/PPM written by [`render_image`] back to `[C, H, W]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: &str| Error::Protocol(format!("pnm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?.to_string());
    }
    pos += 1;
    let c = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(bad(&format!("unsupported magic {m}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let body = bytes.get(pos..).ok_or_else(|| bad("no pixel data"))?;
    if body.len() != c * h * w {
        return Err(bad("pixel count mismatch"));
    }
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        body[rest * c + ch] as f64
    }))
}

/// Text sidecar describing how an image was produced.
pub fn sidecar(raw_min: f64, raw_max: f64, cfg: &ImageConfig) -> String {
    format!(
        "min = {raw_min:e}\nmax = {raw_max:e}\neps = {:e}\nperiodicity = {}\nimage_size = {}\n",
        cfg.eps, cfg.periodicity, cfg.image_size
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dft_naive, grad_check_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_series_is_dc_only() {
        let x = Tensor::full(&[1, 10, 1], 2.5);
        let m = frequency_encode(&x).unwrap();
        assert!((m.data()[0] - 25.0).abs() < 1e-9);
        assert!(m.data()[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn cosine_bins() {
        let x = Tensor::from_fn(&[1, 32, 1], |t| (2.0 * PI * 4.0 * t as f64 / 32.0).cos());
        let m = frequency_encode(&x).unwrap();
        for (k, v) in m.data().iter().enumerate() {
            let want = if k == 4 || k == 28 { 16.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-9, "bin {k}: {v}");
        }
    }

    #[test]
    fn magnitudes_match_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(&[2, 37, 3], 1.0, &mut rng);
        let m = frequency_encode(&x).unwrap();
        for b in 0..2 {
            for d in 0..3 {
                let s: Vec<f64> = (0..37).map(|t| x.at(&[b, t, d])).collect();
                let (re, im) = dft_naive(&s);
                for t in 0..37 {
                    assert!((m.at(&[b, t, d]) - re[t].hypot(im[t])).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mean_only_moves_dc_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[1, 20, 1], 1.0, &mut rng);
        let shifted = x.map(|v| v + 3.0);
        let (a, b) = (frequency_encode(&x).unwrap(), frequency_encode(&shifted).unwrap());
        assert!((a.data()[0] - b.data()[0]).abs() > 1.0);
        for k in 1..20 {
            assert!((a.data()[k] - b.data()[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn periodicity_rows() {
        let p = periodicity_encode(100, 24).unwrap();
        assert_eq!(p.at(&[0, 0]), 0.0);
        assert_eq!(p.at(&[0, 1]), 1.0);
        assert!((p.at(&[6, 0]) - 1.0).abs() < 1e-12 && p.at(&[6, 1]).abs() < 1e-12);
        for t in 0..76 {
            assert!((p.at(&[t, 0]) - p.at(&[t + 24, 0])).abs() < 1e-9);
            assert!((p.at(&[t, 1]) - p.at(&[t + 24, 1])).abs() < 1e-9);
            let n = p.at(&[t, 0]).powi(2) + p.at(&[t, 1]).powi(2);
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(matches!(periodicity_encode(4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_series_features() {
        let cfg = ImageConfig { periodicity: 8, ..ImageConfig::default() };
        let f = encode_features(&Tensor::zeros(&[1, 8, 2]), &cfg).unwrap();
        assert_eq!(f.shape(), &[1, 8, 2, 4]);
        let per = periodicity_encode(8, 8).unwrap();
        for t in 0..8 {
            for d in 0..2 {
                assert_eq!(f.at(&[0, t, d, 0]), 0.0);
                assert_eq!(f.at(&[0, t, d, 1]), 0.0);
                assert_eq!(f.at(&[0, t, d, 2]), per.at(&[t, 0]));
                assert_eq!(f.at(&[0, t, d, 3]), per.at(&[t, 1]));
            }
        }
    }

    #[test]
    fn raw_channel_recovers_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randn(&[2, 9, 3], 1.0, &mut rng);
        let f = encode_features(&x, &ImageConfig::default()).unwrap();
        for i in 0..x.numel() {
            assert_eq!(f.data()[i * 4], x.data()[i]);
        }
    }

    #[test]
    fn mismatched_features_rejected() {
        let x = Tensor::zeros(&[1, 4, 2]);
        let per = periodicity_encode(5, 2).unwrap();
        assert!(assemble_features(&x, &x, &per, &ImageConfig::default().channels).is_err());
    }

    fn small_store(hidden: usize, f: usize) -> (ParamStore, ImageConfig) {
        let cfg = ImageConfig {
            hidden_dim: hidden,
            image_size: 8,
            periodicity: 4,
            channels: ImageConfig::default().channels[..f].to_vec(),
            ..ImageConfig::default()
        };
        let mut store = ParamStore::new(3);
        register(&mut store, &cfg);
        (store, cfg)
    }

    #[test]
    fn conv_shape_contract() {
        let (store, _) = small_store(16, 4);
        let mut g = Graph::new();
        let f = g.constant(Tensor::zeros(&[2, 512, 7, 4])).unwrap();
        let y = multiscale_conv(&mut g, &store, f).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 16, 512]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_hidden_rejected() {
        let mut store = ParamStore::new(0);
        store.register("val.conv1.kernel", &[3, 4, 3], Init::Zeros);
        let mut g = Graph::new();
        let f = g.constant(Tensor::zeros(&[1, 8, 1, 4])).unwrap();
        assert!(matches!(multiscale_conv(&mut g, &store, f), Err(Error::Config(_))));
    }

    #[test]
    fn conv_gradient_check() {
        let (store, _) = small_store(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let feats = Tensor::randn(&[1, 8, 2, 4], 1.0, &mut rng);
        let coords: Vec<(String, usize)> = store
            .iter()
            .flat_map(|(n, p)| (0..p.value.numel()).step_by(3).map(move |i| (n.clone(), i)))
            .collect();
        let err = grad_check_params(
            &store,
            &coords,
            |g, s| {
                let f = g.constant(feats.clone())?;
                multiscale_conv(g, s, f)
            },
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn image_range_and_extremes() {
        let cfg = ImageConfig { image_size: 8, ..ImageConfig::default() };
        for input in [
            Tensor::full(&[1, 3, 4, 4], 7.0),
            Tensor::from_fn(&[1, 3, 4, 4], |i| if i == 5 { 1.0 } else { 0.0 }),
            Tensor::from_fn(&[1, 3, 4, 4], |i| i as f64 * 1e6),
        ] {
            let mut g = Graph::new();
            let x = g.constant(input.clone()).unwrap();
            let y = to_image(&mut g, x, &cfg).unwrap();
            let v = g.value(y);
            assert!(v.is_finite() && v.min_value() >= 0.0 && v.max_value() <= 255.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 4, 4], -3.0)).unwrap();
        let y = to_image(&mut g, x, &cfg).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let (a, b) = (-2.0, 5.0);
        let x = g.constant(Tensor::from_fn(&[1, 1, 2, 2], |i| if i == 0 { a } else { b })).unwrap();
        let y = to_image(&mut g, x, &cfg).unwrap();
        assert_eq!(g.value(y).min_value(), 0.0);
        assert!((g.value(y).max_value() - 255.0 * (b - a) / (b - a + 1e-5)).abs() < 1e-9);
    }

    #[test]
    fn same_size_resize_preserves_order() {
        let cfg = ImageConfig { image_size: 8, ..ImageConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let input = Tensor::randn(&[1, 1, 8, 8], 3.0, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(input.clone()).unwrap();
        let y = to_image(&mut g, x, &cfg).unwrap();
        let out = g.value(y);
        for i in 0..64 {
            for j in 0..64 {
                if input.data()[i] < input.data()[j] {
                    assert!(out.data()[i] <= out.data()[j]);
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (store, cfg) = small_store(4, 4);
        let x = Tensor::from_fn(&[2, 16, 3], |i| (i as f64 * 0.3).sin());
        let run = || {
            let mut g = Graph::new();
            let y = forward(&mut g, &store, &x, &cfg).unwrap();
            g.value(y).clone()
        };
        let a = run();
        assert_eq!(a.shape(), &[2, 3, 8, 8]);
        assert_eq!(a, run());
    }

    #[test]
    fn pnm_header_and_rounding() {
        let zero = encode_pnm(&Tensor::zeros(&[1, 2, 3])).unwrap();
        assert_eq!(&zero[..11], b"P5\n3 2\n255\n");
        assert!(zero[11..].iter().all(|&b| b == 0));
        assert_eq!(zero.len(), 11 + 6);
        assert_eq!(quantize(127.5), 128);
        assert_eq!(quantize(127.49), 127);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
        let img = Tensor::from_fn(&[3, 2, 2], |i| (i * 20) as f64);
        let bytes = encode_pnm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(decode_pnm(&bytes).unwrap(), img);
        assert_eq!(bytes, encode_pnm(&img).unwrap());
        assert!(encode_pnm(&Tensor::zeros(&[2, 2, 2])).is_err());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = render_image(&Tensor::zeros(&[1, 2, 2]), Path::new("/nonexistent-dir/x.pgm"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}

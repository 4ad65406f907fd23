//! Save a model, restore it into a fresh one and compare predictions.

use tvlm::checkpoint::Checkpoint;
use tvlm::encoder::EncoderDescriptor;
use tvlm::model::{ModelConfig, TimeVlm};
use tvlm::tal::PromptContext;
use tvlm::tensor::Tensor;

fn build(seed: u64) -> tvlm::Result<TimeVlm> {
    let cfg = ModelConfig { seq_len: 48, pred_len: 12, d_model: 16, d_fusion: 32, image_size: 32, ..ModelConfig::default() };
    let ctx = PromptContext {
        dataset_name: "demo".into(),
        description: None,
        input_len: 48,
        horizon: 12,
        periodicity: 12,
    };
    let desc = EncoderDescriptor { fused_len: 24, hidden_dim: 32, n_text: 4, ..EncoderDescriptor::default() };
    TimeVlm::with_encoder(cfg, 2, ctx, &desc, seed)
}

fn main() -> tvlm::Result<()> {
    let a = build(1)?;
    let path = std::env::temp_dir().join("tvlm_demo.ckpt");
    Checkpoint::from_model(&a).save(&path)?;

    let mut b = build(2)?;
    let x = Tensor::from_fn(&[1, 48, 2], |i| (i as f64 * 0.37).sin());
    println!("before restore: max diff {:.3e}", a.predict(&x)?.max_abs_diff(&b.predict(&x)?));
    Checkpoint::load(&path)?.restore(&mut b)?;
    println!("after restore:  max diff {:.3e}", a.predict(&x)?.max_abs_diff(&b.predict(&x)?));
    println!("fingerprint {}", a.fingerprint());
    Ok(())
}

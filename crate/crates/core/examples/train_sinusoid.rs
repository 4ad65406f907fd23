//! End-to-end training on a noisy sinusoid, then scoring the test split.
//! Takes about a minute in release mode.

use tvlm::data::{prepare, sinusoid};
use tvlm::encoder::EncoderDescriptor;
use tvlm::model::{ModelConfig, TimeVlm};
use tvlm::predictor::{fit, fit::evaluate_mse, TrainConfig};
use tvlm::tal::PromptContext;

fn main() -> tvlm::Result<()> {
    let p = prepare(sinusoid(800, 24.0, 0.05, 7), None, 96, 16, false)?;
    let cfg = ModelConfig { seq_len: 96, pred_len: 16, d_model: 32, d_fusion: 64, ..ModelConfig::default() };
    let ctx = PromptContext {
        dataset_name: "sine".into(),
        description: Some("A noisy sine wave with period 24.".into()),
        input_len: 96,
        horizon: 16,
        periodicity: 24,
    };
    let mut model = TimeVlm::with_encoder(cfg, 1, ctx, &EncoderDescriptor::default(), 1)?;
    let train = TrainConfig { batch_size: 16, max_steps: Some(200), epochs: 50, patience: 50, ..TrainConfig::default() };
    let history = fit(&mut model, &p.train, &p.val, &train, 3)?;
    print!("{}", history.to_csv());
    println!("train mse {:.4} -> {:.4}", history.initial_train_mse, history.final_train_mse);
    println!("test mse {:.4}", evaluate_mse(&model, &p.test, 64)?);
    Ok(())
}

//! Renders one lookback window as an image plus prompt and writes both to
//! the system temp directory.

use tvlm::data::sinusoid;
use tvlm::encoder::EncoderDescriptor;
use tvlm::model::{ModelConfig, TimeVlm};
use tvlm::tal::PromptContext;
use tvlm::tensor::Tensor;
use tvlm::val::render_image;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig { seq_len: 96, pred_len: 24, image_size: 32, ..ModelConfig::default() };
    let ctx = PromptContext {
        dataset_name: "sine".into(),
        description: None,
        input_len: 96,
        horizon: 24,
        periodicity: 24,
    };
    let model = TimeVlm::with_encoder(cfg, 1, ctx, &EncoderDescriptor::default(), 0)?;
    let data = sinusoid(96, 24.0, 0.1, 3);
    let window = Tensor::new(&[96, 1], data.values.data().to_vec())?;
    let r = model.render(&window)?;
    let dir = std::env::temp_dir();
    let img = dir.join("tvlm_render.ppm");
    render_image(&r.image, &img)?;
    std::fs::write(dir.join("tvlm_render.txt"), format!("{}\n", r.prompt))?;
    println!("image {:?} in [{}, {}], raw range [{:.3}, {:.3}]", r.image.shape(), r.image.min_value(), r.image.max_value(), r.raw_min, r.raw_max);
    println!("wrote {}", img.display());
    println!("{}", r.prompt);
    Ok(())
}

//! The frozen stand-in encoder: token layout, types and the state checksum.

use tvlm::encoder::{build, EncoderDescriptor, TokenType};
use tvlm::tensor::{Graph, Tensor};

fn main() -> tvlm::Result<()> {
    let desc = EncoderDescriptor::default();
    let enc = build(&desc, 3, 64)?;
    let mut g = Graph::new();
    let img = g.constant(Tensor::from_fn(&[2, 3, 64, 64], |i| (i % 256) as f64))?;
    let prompts = ["rising load".to_string(), "flat night hours".to_string()];
    let out = enc.encode(&mut g, img, &prompts)?;
    let text = out.token_types.iter().filter(|&&t| t == TokenType::Text).count();
    println!("tokens {:?}: {text} text + {} visual", g.shape(out.tokens), out.token_types.len() - text);
    println!("differentiable: {}", enc.differentiable());
    println!("checksum {}", enc.checksum());
    Ok(())
}

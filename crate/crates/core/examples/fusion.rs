//! Gated cross-modal fusion of temporal features with encoder tokens.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tvlm::fusion::{forward, register, FusionConfig, GateKind};
use tvlm::params::ParamStore;
use tvlm::tensor::{Graph, Tensor};

fn main() -> tvlm::Result<()> {
    let (batch, vars, patches, d_model, tokens, d_mm) = (2, 3, 8, 16, 12, 24);
    let cfg = FusionConfig { d_fusion: 32, gate: GateKind::TwoLayer };
    let mut store = ParamStore::new(0);
    register(&mut store, d_model, d_mm, &cfg);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let f_tem = g.constant(Tensor::randn(&[batch * vars, patches, d_model], 1.0, &mut rng))?;
    let f_mm = g.constant(Tensor::randn(&[batch, tokens, d_mm], 1.0, &mut rng))?;
    let out = forward(&mut g, &store, f_tem, f_mm, vars, 4, &cfg)?;
    let gate = g.value(out.gate);
    println!("fused {:?}, attention weights {:?}", g.shape(out.fused), g.shape(out.weights));
    println!("gate mean {:.3} in [{:.3}, {:.3}]", gate.sum() / gate.numel() as f64, gate.min_value(), gate.max_value());
    Ok(())
}

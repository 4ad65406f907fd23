//! Short-horizon scores against the seasonal naive reference.

use tvlm::metrics::{mase, naive2, owa, smape};

fn main() -> tvlm::Result<()> {
    let insample: Vec<f64> = (0..24).map(|t| 100.0 + 10.0 * ((t % 6) as f64) + t as f64).collect();
    let truth: Vec<f64> = (24..30).map(|t| 100.0 + 10.0 * ((t % 6) as f64) + t as f64).collect();
    let pred: Vec<f64> = truth.iter().map(|v| v * 1.03).collect();
    let s = 6;
    let reference = naive2(&insample, s, truth.len())?;
    let (sm, ma) = (smape(&pred, &truth)?, mase(&pred, &truth, &insample, s)?);
    let (sm0, ma0) = (smape(&reference, &truth)?, mase(&reference, &truth, &insample, s)?);
    println!("model    smape {sm:.3}  mase {ma:.3}");
    println!("naive2   smape {sm0:.3}  mase {ma0:.3}");
    println!("owa {:.3}", owa(sm, ma, sm0, ma0)?);
    Ok(())
}

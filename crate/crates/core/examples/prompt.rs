//! Window statistics and the text prompt built from them.

use tvlm::tal::{build_prompt, compute_stats, PromptContext};

fn main() -> tvlm::Result<()> {
    let series: Vec<f64> = (0..48).map(|t| 20.0 + 0.3 * t as f64 + (t as f64 * 0.8).sin()).collect();
    let stats = compute_stats(&series)?;
    println!("min {:.3} max {:.3} median {:.3} slope {:.4} ({})", stats.min, stats.max, stats.median, stats.slope, stats.trend);
    let ctx = PromptContext {
        dataset_name: "Electricity".into(),
        description: Some("Hourly load of a single substation.".into()),
        input_len: 48,
        horizon: 24,
        periodicity: 24,
    };
    println!("{}", build_prompt(&stats, &ctx));
    Ok(())
}

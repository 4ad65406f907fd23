//! Few-shot training keeps the earliest fraction of training windows.

use tvlm::data::{few_shot_count, prepare, sinusoid};

fn main() -> tvlm::Result<()> {
    let p = prepare(sinusoid(1000, 24.0, 0.05, 0), None, 96, 24, true)?;
    println!("train windows: {}", p.train.len());
    for f in [0.05, 0.1, 0.5] {
        let sub = p.train.few_shot(f)?;
        println!("{:>4.0}% -> {} windows (ceil: {}), last start {}", f * 100.0, sub.len(), few_shot_count(p.train.len(), f), sub.starts().last().unwrap());
    }
    Ok(())
}

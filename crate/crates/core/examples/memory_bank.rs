//! The rolling memory bank: FIFO overwrites once full, cosine top-k lookup.

use tvlm::ral::{MemoryBank, Similarity};
use tvlm::tensor::Tensor;

fn main() -> tvlm::Result<()> {
    let mut bank = MemoryBank::new(4, 2);
    for step in 0..3 {
        let rows = Tensor::from_fn(&[2, 2], |i| (step * 2 + i / 2) as f64 + if i % 2 == 0 { 1.0 } else { -1.0 });
        bank.write(&rows)?;
        println!("after write {step}: filled={} cursor={} oldest first {:?}", bank.filled(), bank.cursor(), bank.oldest_first());
    }
    let query = [1.0, 0.2];
    let hits = bank.top_k(&query, 2, Similarity::Cosine);
    for i in hits {
        println!("slot {i}: {:?}", bank.slot(i));
    }
    Ok(())
}

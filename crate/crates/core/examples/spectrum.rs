//! Magnitude spectrum of a two-tone signal. Short inputs take the direct
//! transform, long ones the fast path; both agree.

use std::f64::consts::TAU;

use tvlm::tensor::fft_real;

fn peaks(n: usize) -> tvlm::Result<Vec<(usize, f64)>> {
    let x: Vec<f64> = (0..n)
        .map(|t| (TAU * 5.0 * t as f64 / n as f64).sin() + 0.5 * (TAU * 12.0 * t as f64 / n as f64).cos())
        .collect();
    let (re, im) = fft_real(&x)?;
    let mut mags: Vec<(usize, f64)> = (0..n / 2).map(|k| (k, re[k].hypot(im[k]) / n as f64)).collect();
    mags.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(mags[..2].to_vec())
}

fn main() -> tvlm::Result<()> {
    for n in [96, 2048] {
        let p = peaks(n)?;
        println!("n={n:5}  bin {:2}: {:.4}  bin {:2}: {:.4}", p[0].0, p[0].1, p[1].0, p[1].1);
    }
    Ok(())
}

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Lengths below this use the direct O(n²) transform.
pub const NAIVE_DFT_THRESHOLD: usize = 1024;

/// Discrete Fourier transform of a real series, `X[k] = Σ_t x[t]·e^{-2πikt/n}`.
///
/// Returns `(re, im)`, each of length `n`. Any `n ≥ 1` is accepted.
pub fn fft_real(series: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if series.is_empty() {
        return Err(Error::Domain("fft of an empty series".into()));
    }
    if series.len() < NAIVE_DFT_THRESHOLD {
        return Ok(dft_naive(series));
    }
    let n = series.len();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(buf.into_iter().map(|c| (c.re, c.im)).unzip())
}

/// Direct evaluation of the DFT sum. The twiddle angle is reduced with
/// `(k·t) mod n` so that the phase stays accurate for long inputs.
pub fn dft_naive(series: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = series.len();
    let twiddles: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let angle = -2.0 * PI * j as f64 / n as f64;
            (angle.cos(), angle.sin())
        })
        .collect();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        let mut j = 0usize;
        for &x in series {
            let (c, s) = twiddles[j];
            sr += x * c;
            si += x * s;
            j += k;
            if j >= n {
                j -= n;
            }
        }
        re[k] = sr;
        im[k] = si;
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_domain_error() {
        assert!(matches!(fft_real(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_series_is_dc_only() {
        let c = 2.5;
        let (re, im) = fft_real(&[c; 12]).unwrap();
        assert!((re[0] - 12.0 * c).abs() < 1e-9);
        for k in 1..12 {
            assert!(re[k].abs() < 1e-9 && im[k].abs() < 1e-9, "bin {k}");
        }
        assert!(im[0].abs() < 1e-9);
    }

    #[test]
    fn cosine_peaks_at_k_and_n_minus_k() {
        let (n, k) = (20usize, 3usize);
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * (k * t) as f64 / n as f64).cos())
            .collect();
        let (re, im) = fft_real(&x).unwrap();
        for bin in 0..n {
            let mag = re[bin].hypot(im[bin]);
            let expected = if bin == k || bin == n - k { n as f64 / 2.0 } else { 0.0 };
            assert!((mag - expected).abs() < 1e-9, "bin {bin}: {mag}");
        }
    }

    #[test]
    fn long_inputs_take_the_fast_path() {
        // 1536 is not a power of two and sits above the threshold.
        let x: Vec<f64> = (0..1536).map(|t| ((t * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let (re, im) = fft_real(&x).unwrap();
        let (nr, ni) = dft_naive(&x);
        for k in 0..x.len() {
            assert!((re[k] - nr[k]).abs() < 1e-7 && (im[k] - ni[k]).abs() < 1e-7);
        }
    }
}

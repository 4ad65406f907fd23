//! Text-augmented learner: window statistics rendered into a short,
//! deterministic prompt.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trend {
    Upward,
    Downward,
    Flat,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Upward => "upward",
            Trend::Downward => "downward",
            Trend::Flat => "flat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub trend: Trend,
    pub slope: f64,
}

pub const TREND_EPS: f64 = 1e-5;
pub const PROMPT_CAP: usize = 320;

/// Range, lower-middle median and least-squares slope of one series.
pub fn compute_stats(x: &[f64]) -> Result<WindowStats> {
    if x.is_empty() {
        return Err(Error::Domain("statistics of an empty series".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let median = sorted[(sorted.len() - 1) / 2];
    let n = x.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let x_mean = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let tau = 1e-6 * (max - min + TREND_EPS);
    let trend = if slope > tau {
        Trend::Upward
    } else if slope < -tau {
        Trend::Downward
    } else {
        Trend::Flat
    };
    Ok(WindowStats {
        min,
        max,
        median,
        trend,
        slope,
    })
}

/// Statistics of the variable-mean series of an `[L, D]` window.
pub fn window_stats(window: &Tensor) -> Result<WindowStats> {
    let s = window.shape();
    if s.len() != 2 || s[1] == 0 {
        return Err(Error::dim("window_stats", format!("expected [L, D], got {s:?}")));
    }
    let d = s[1];
    let mean: Vec<f64> = window.data().chunks(d).map(|r| r.iter().sum::<f64>() / d as f64).collect();
    compute_stats(&mean)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptContext {
    pub dataset_name: String,
    pub description: Option<String>,
    pub input_len: usize,
    pub horizon: usize,
    pub periodicity: usize,
}

/// Fixed template. Statistics come first so truncation only ever eats into
/// the free-text description.
pub fn build_prompt(stats: &WindowStats, ctx: &PromptContext) -> String {
    build_prompt_capped(stats, ctx, PROMPT_CAP)
}

pub fn build_prompt_capped(stats: &WindowStats, ctx: &PromptContext, cap: usize) -> String {
    let mut text = format!(
        "Statistics: range [{:.3}, {:.3}], median {:.3}, {} trend, slope {:.3} per step. \
         Input {} steps, forecast {} steps, cycle of {} steps. Dataset {}",
        stats.min, stats.max, stats.median, stats.trend, stats.slope, ctx.input_len, ctx.horizon, ctx.periodicity, ctx.dataset_name,
    );
    match &ctx.description {
        Some(d) if !d.trim().is_empty() => {
            text.push_str(": ");
            text.push_str(d.trim());
        }
        _ => text.push('.'),
    }
    truncate_words(&text, cap)
}

/// Cuts `text` to at most `cap` characters, backing off to a word boundary.
pub fn truncate_words(text: &str, cap: usize) -> String {
    if text.chars().count() <= cap {
        return text.to_string();
    }
    let cut: String = text.chars().take(cap + 1).collect();
    match cut.rfind(char::is_whitespace) {
        Some(i) => cut[..i].trim_end().to_string(),
        None => cut.chars().take(cap).collect(),
    }
}

/// Reads `name: description` lines. Blank lines and `#` comments are skipped.
pub fn parse_descriptions(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("description line {}: expected `name: text`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn load_descriptions(path: &Path) -> Result<BTreeMap<String, String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_descriptions(&text)
}

/// One prompt per window of a `[B, L, D]` batch in original units.
pub fn batch_prompts(x: &Tensor, ctx: &PromptContext) -> Result<Vec<String>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::dim("batch_prompts", format!("expected [B, L, D], got {s:?}")));
    }
    let per = s[1] * s[2];
    x.data()
        .chunks(per.max(1))
        .take(s[0])
        .map(|w| {
            let t = Tensor::new(&[s[1], s[2]], w.to_vec())?;
            Ok(build_prompt(&window_stats(&t)?, ctx))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx() -> PromptContext {
        PromptContext {
            dataset_name: "ETTh1".into(),
            description: None,
            input_len: 512,
            horizon: 96,
            periodicity: 24,
        }
    }

    #[test]
    fn constant_stats() {
        let s = compute_stats(&[5.0; 4]).unwrap();
        assert_eq!((s.min, s.max, s.median, s.trend), (5.0, 5.0, 5.0, Trend::Flat));
    }

    #[test]
    fn ramp_stats() {
        let s = compute_stats(&[0., 1., 2., 3.]).unwrap();
        assert!((s.slope - 1.0).abs() < 1e-12);
        assert_eq!(s.trend, Trend::Upward);
        assert_eq!(s.median, 1.0);
        assert_eq!(compute_stats(&[3., 2., 1., 0.]).unwrap().trend, Trend::Downward);
        assert!(matches!(compute_stats(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn flat_zero_prompt() {
        let s = compute_stats(&[0.0; 8]).unwrap();
        let p = build_prompt(&s, &ctx());
        for needle in ["range [0.000, 0.000]", "flat", "512", "96", "cycle of 24 steps"] {
            assert!(p.contains(needle), "{needle} missing from {p}");
        }
        assert_eq!(p, build_prompt(&s, &ctx()));
    }

    #[test]
    fn ramp_prompt_mentions_upward() {
        let s = compute_stats(&(0..20).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        assert!(build_prompt(&s, &ctx()).contains("upward"));
    }

    #[test]
    fn long_description_is_truncated_at_words() {
        let c = PromptContext {
            description: Some("hourly transformer load ".repeat(40)),
            ..ctx()
        };
        let p = build_prompt(&compute_stats(&[1., 2.]).unwrap(), &c);
        assert!(p.chars().count() <= PROMPT_CAP);
        assert!(p.starts_with("Statistics: range [1.000, 2.000]"));
        assert!(["hourly", "transformer", "load"].iter().any(|w| p.ends_with(w)));
    }

    #[test]
    fn descriptions_file() {
        let m = parse_descriptions("# comment\nETTh1: electricity transformer temperature\n\nWeather: climate").unwrap();
        assert_eq!(m["ETTh1"], "electricity transformer temperature");
        assert_eq!(m.len(), 2);
        assert!(parse_descriptions("nocolon").is_err());
    }

    #[test]
    fn multivariate_uses_mean_series() {
        let w = Tensor::new(&[2, 2], vec![0., 2., 4., 6.]).unwrap();
        let s = window_stats(&w).unwrap();
        assert_eq!((s.min, s.max), (1.0, 5.0));
    }

    fn numbers(p: &str) -> Vec<f64> {
        let re = regex::Regex::new(r"-?\d+\.\d{3}").unwrap();
        re.find_iter(p).map(|m| m.as_str().parse().unwrap()).collect()
    }

    proptest! {
        #[test]
        fn median_between_extremes(xs in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let s = compute_stats(&xs).unwrap();
            prop_assert!(s.min <= s.median && s.median <= s.max);
        }

        #[test]
        fn prompt_numbers_round_trip(xs in proptest::collection::vec(-1e3f64..1e3, 1..50), desc in "[a-z ]{0,400}") {
            let s = compute_stats(&xs).unwrap();
            let c = PromptContext { description: Some(desc), ..ctx() };
            let p = build_prompt(&s, &c);
            prop_assert!(p.chars().count() <= PROMPT_CAP);
            let n = numbers(&p);
            for (got, want) in n.iter().zip([s.min, s.max, s.median, s.slope]) {
                prop_assert!((got - want).abs() <= 5e-4 + 1e-12);
            }
        }
    }
}

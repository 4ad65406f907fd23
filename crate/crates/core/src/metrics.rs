//! Point-forecast accuracy metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(pred: &[f64], truth: &[f64], op: &'static str) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::dim(op, format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyData(format!("{op} of no values")));
    }
    Ok(())
}

fn same_shape(pred: &Tensor, truth: &Tensor, op: &'static str) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(op, format!("shapes {:?} and {:?}", pred.shape(), truth.shape())));
    }
    Ok(())
}

pub fn mse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    same_shape(pred, truth, "mse")?;
    mse_slice(pred.data(), truth.data())
}

pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    same_shape(pred, truth, "mae")?;
    mae_slice(pred.data(), truth.data())
}

pub fn mse_slice(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, "mse")?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn mae_slice(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, "mae")?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Symmetric MAPE in percent; terms with `|y| + |ŷ| = 0` contribute 0.
pub fn smape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, "smape")?;
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let den = p.abs() + t.abs();
            if den == 0.0 { 0.0 } else { (t - p).abs() / den }
        })
        .sum();
    Ok(200.0 * s / pred.len() as f64)
}

/// Mean in-sample seasonal-difference magnitude at lag `s`.
pub fn seasonal_scale(insample: &[f64], s: usize) -> Result<f64> {
    if s == 0 || insample.len() <= s {
        return Err(Error::Domain(format!(
            "in-sample length {} must exceed the season {s}",
            insample.len()
        )));
    }
    let n = insample.len() - s;
    Ok((s..insample.len()).map(|i| (insample[i] - insample[i - s]).abs()).sum::<f64>() / n as f64)
}

pub fn mase(pred: &[f64], truth: &[f64], insample: &[f64], s: usize) -> Result<f64> {
    check(pred, truth, "mase")?;
    let scale = seasonal_scale(insample, s)?;
    if scale == 0.0 {
        return Err(Error::ZeroDenominator("in-sample seasonal error is zero".into()));
    }
    Ok(mae_slice(pred, truth)? / scale)
}

/// Overall weighted average relative to a reference forecaster.
pub fn owa(smape: f64, mase: f64, smape_ref: f64, mase_ref: f64) -> Result<f64> {
    if smape_ref <= 0.0 || mase_ref <= 0.0 {
        return Err(Error::ZeroDenominator(format!(
            "reference SMAPE {smape_ref} and MASE {mase_ref} must be positive"
        )));
    }
    Ok(0.5 * (smape / smape_ref + mase / mase_ref))
}

/// Seasonal-naive reference forecast: repeats the last `s` observations.
pub fn naive2(insample: &[f64], s: usize, horizon: usize) -> Result<Vec<f64>> {
    if s == 0 || insample.len() < s {
        return Err(Error::Domain(format!(
            "in-sample length {} is shorter than the season {s}",
            insample.len()
        )));
    }
    let t = insample.len();
    Ok((0..horizon).map(|h| insample[t - s + h % s]).collect())
}

/// Per-series short-horizon scores averaged over series. Each series is a
/// `(insample, truth, pred)` triple.
pub fn short_horizon(series: &[(Vec<f64>, Vec<f64>, Vec<f64>)], s: usize) -> Result<Report> {
    if series.is_empty() {
        return Err(Error::EmptyData("no windows".into()));
    }
    let (mut sm, mut ma, mut sm_ref, mut ma_ref) = (0.0, 0.0, 0.0, 0.0);
    for (ins, truth, pred) in series {
        let naive = naive2(ins, s, truth.len())?;
        sm += smape(pred, truth)?;
        ma += mase(pred, truth, ins, s)?;
        sm_ref += smape(&naive, truth)?;
        ma_ref += mase(&naive, truth, ins, s)?;
    }
    let n = series.len() as f64;
    let (sm, ma, sm_ref, ma_ref) = (sm / n, ma / n, sm_ref / n, ma_ref / n);
    Ok(Report::new(vec![
        ("smape".into(), sm),
        ("mase".into(), ma),
        ("owa".into(), owa(sm, ma, sm_ref, ma_ref)?),
    ]))
}

/// Named metric values with CSV and aligned-text renderings.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<(String, f64)>,
}

impl Report {
    pub fn new(rows: Vec<(String, f64)>) -> Self {
        Report { rows }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (n, v) in &self.rows {
            let _ = writeln!(s, "{n},{v}");
        }
        s
    }

    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<w$}  {:>14}\n", "metric", "value");
        for (n, v) in &self.rows {
            let _ = writeln!(s, "{n:<w$}  {v:>14.6}");
        }
        s
    }
}

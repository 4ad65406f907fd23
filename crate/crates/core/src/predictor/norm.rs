use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const NORM_EPS: f64 = 1e-8;

/// Per-window, per-variable statistics of a `[B, L, D]` batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    /// `[B, 1, D]`.
    pub mean: Tensor,
    /// `[B, 1, D]`, population standard deviation.
    pub std: Tensor,
    pub norm_const: f64,
}

impl NormState {
    /// `std^c + 1e-8`, `[B, 1, D]`.
    pub fn denominator(&self) -> Tensor {
        let c = self.norm_const;
        self.std.map(|s| s.powf(c) + NORM_EPS)
    }

    /// Maps a normalised `[B, H, D]` tensor back to original units.
    pub fn denormalize(&self, y: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.constant(y.clone())?;
        let out = self.denormalize_var(&mut g, v)?;
        Ok(g.value(out).clone())
    }

    pub fn denormalize_var(&self, g: &mut Graph, y: Var) -> Result<Var> {
        let s = g.shape(y).to_vec();
        if s.len() != 3 || s[0] != self.mean.shape()[0] || s[2] != self.mean.shape()[2] {
            return Err(Error::dim(
                "denormalize",
                format!("forecast {s:?} does not match statistics {:?}", self.mean.shape()),
            ));
        }
        let den = g.constant(self.denominator())?;
        let mean = g.constant(self.mean.clone())?;
        let scaled = g.mul(y, den)?;
        g.add(scaled, mean)
    }
}

/// `(x − μ)/(σ^c + 1e-8)` per window and variable.
pub fn instance_normalize(x: &Tensor, norm_const: f64) -> Result<(Tensor, NormState)> {
    let s = x.shape();
    if s.len() != 3 || s[1] == 0 {
        return Err(Error::dim("instance_normalize", format!("expected [B, L ≥ 1, D], got {s:?}")));
    }
    let (b, l, d) = (s[0], s[1], s[2]);
    let mut mean = Tensor::zeros(&[b, 1, d]);
    let mut std = Tensor::zeros(&[b, 1, d]);
    for bi in 0..b {
        for di in 0..d {
            let at = |t: usize| x.data()[(bi * l + t) * d + di];
            let m = (0..l).map(at).sum::<f64>() / l as f64;
            let v = (0..l).map(|t| (at(t) - m).powi(2)).sum::<f64>() / l as f64;
            mean.data_mut()[bi * d + di] = m;
            std.data_mut()[bi * d + di] = v.sqrt();
        }
    }
    let state = NormState { mean, std, norm_const };
    let den = state.denominator();
    let out = Tensor::from_fn(s, |i| {
        let (bi, di) = (i / (l * d), i % d);
        (x.data()[i] - state.mean.data()[bi * d + di]) / den.data()[bi * d + di]
    });
    Ok((out, state))
}

use crate::error::{Error, Result};
use crate::nn;
use crate::params::ParamStore;
use crate::tensor::{Graph, Var};

pub fn register_head(store: &mut ParamStore, patches: usize, d_model: usize, horizon: usize) {
    nn::register_linear(store, "head", patches * d_model, horizon, true);
}

/// Channel-independent linear head: `[B·D, N_p, d] → [B, H, D]`.
pub fn predict(g: &mut Graph, store: &ParamStore, fused: Var, batch: usize, vars: usize) -> Result<Var> {
    let s = g.shape(fused).to_vec();
    if s.len() != 3 || s[0] != batch * vars {
        return Err(Error::dim(
            "predict",
            format!("features {s:?} do not hold {batch}×{vars} instances"),
        ));
    }
    let flat = g.reshape(fused, &[s[0], s[1] * s[2]])?;
    let y = nn::linear(g, store, "head", flat)?;
    let h = g.shape(y)[1];
    let y = g.reshape(y, &[batch, vars, h])?;
    g.permute(y, &[0, 2, 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_params, Tensor};

    #[test]
    fn zero_features_zero_forecast() {
        let mut s = ParamStore::new(0);
        register_head(&mut s, 64, 128, 96);
        let mut g = Graph::new();
        let f = g.constant(Tensor::zeros(&[14, 64, 128])).unwrap();
        let y = predict(&mut g, &s, f, 2, 7).unwrap();
        assert_eq!(g.shape(y), &[2, 96, 7]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variable_layout() {
        let mut s = ParamStore::new(0);
        register_head(&mut s, 1, 1, 2);
        s.set("head.weight", Tensor::new(&[1, 2], vec![1.0, 10.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        // instance b·D + d carries value 1 + b·D + d
        let f = g.constant(Tensor::new(&[4, 1, 1], vec![1., 2., 3., 4.]).unwrap()).unwrap();
        let y = predict(&mut g, &s, f, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2., 10., 20., 3., 4., 30., 40.]);
    }

    #[test]
    fn gradient_check() {
        let mut s = ParamStore::new(4);
        register_head(&mut s, 3, 2, 2);
        let feats = Tensor::from_fn(&[2, 3, 2], |i| (i as f64 * 0.7).cos());
        let coords: Vec<_> = (0..12).map(|i| ("head.weight".to_string(), i)).chain([("head.bias".to_string(), 1)]).collect();
        let err = grad_check_params(
            &s,
            &coords,
            |g, s| {
                let f = g.constant(feats.clone())?;
                predict(g, s, f, 1, 2)
            },
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

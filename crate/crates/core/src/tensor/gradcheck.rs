use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::{Graph, Tensor, Var};

/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Fixed projection weights that turn a tensor-valued output into a scalar,
/// so every output coordinate participates in the check.
fn projection(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let h = (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 40;
        (h as f64 / (1u64 << 24) as f64) * 2.0 - 1.0
    })
}

fn scalarize(g: &mut Graph, out: Var) -> Result<Var> {
    if g.value(out).numel() == 1 && g.shape(out).iter().all(|&d| d == 1) {
        return Ok(out);
    }
    let w = g.constant(projection(g.shape(out)))?;
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}

/// Central-difference check of `f` with respect to every coordinate of
/// every input. Tensor-valued outputs are contracted against fixed weights.
/// Returns the maximum relative error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor], track: bool| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = vals
            .iter()
            .map(|t| g.leaf(t.clone(), track))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        let loss = scalarize(&mut g, out)?;
        Ok((g, vars, loss))
    };
    let (g, vars, loss) = eval(inputs, true)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let (gp, _, lp) = eval(&work, false)?;
            work[i].data_mut()[j] = orig - step;
            let (gm, _, lm) = eval(&work, false)?;
            work[i].data_mut()[j] = orig;
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * step);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Central-difference check of a parameter-driven loss at selected
/// `(parameter name, flat index)` coordinates.
pub fn grad_check_params<F>(store: &ParamStore, coords: &[(String, usize)], f: F, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let loss = scalarize(&mut g, out)?;
    let grads = g.backward(loss)?.params();
    let mut work = store.clone();
    let mut worst = 0.0f64;
    for (name, idx) in coords {
        let orig = store.value(name)?.data().get(*idx).copied().ok_or_else(|| {
            Error::Contract(format!("coordinate {idx} out of range for {name}"))
        })?;
        let analytic = grads.get(name).map(|t| t.data()[*idx]).unwrap_or(0.0);
        let mut at = |v: f64| -> Result<f64> {
            work.value_mut(name)?.data_mut()[*idx] = v;
            let mut g = Graph::new();
            let out = f(&mut g, &work)?;
            let loss = scalarize(&mut g, out)?;
            Ok(g.value(loss).item())
        };
        let numeric = (at(orig + step)? - at(orig - step)?) / (2.0 * step);
        at(orig)?;
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(worst)
}

//! Reverse-mode gradients on a tiny regression loss, checked against
//! central differences.

use tvlm::tensor::{grad_check, Graph, Tensor};

fn main() -> tvlm::Result<()> {
    let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?;
    let w = Tensor::new(&[3, 1], vec![0.1, 0.2, -0.3])?;
    let y = Tensor::new(&[2, 1], vec![1.0, -1.0])?;

    let mut g = Graph::new();
    let xv = g.constant(x.clone())?;
    let wv = g.leaf(w.clone(), true)?;
    let yv = g.constant(y.clone())?;
    let h = g.matmul(xv, wv)?;
    let h = g.gelu(h)?;
    let loss = g.mse(h, yv)?;
    let grads = g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).item());
    println!("dL/dw = {:?}", grads.get(wv).unwrap().data());

    let err = grad_check(
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.gelu(h)?;
            let t = g.constant(y.clone())?;
            g.mse(h, t)
        },
        &[x, w],
        1e-6,
    )?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}

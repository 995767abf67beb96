//! Build a small graph, backpropagate, and check the gradient numerically.

use seisbench::tensor::{grad_check, Graph, Tensor};

fn main() -> seisbench::Result<()> {
    let x = Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.0, -0.3])?;
    let w = Tensor::new([3, 2], vec![0.2, -0.4, 1.0, 0.3, -0.7, 0.5])?;

    let mut g = Graph::<f64>::new();
    let xv = g.param(x.clone());
    let wv = g.constant(w.clone());
    let y = g.matmul(xv, wv, false, false)?;
    let a = g.gelu(y);
    let loss = g.mean(a);
    g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).item()?);
    println!("d loss / d x = {:?}", g.grad(xv).unwrap().data());

    let report = grad_check(
        |g, x| {
            let wv = g.constant(w.clone());
            let y = g.matmul(x, wv, false, false)?;
            let a = g.gelu(y);
            Ok(g.mean(a))
        },
        &x,
        1e-5,
        1e-4,
        None,
    )?;
    println!("finite differences agree: {} (max rel err {:.2e})", report.passed(), report.max_rel_err());
    Ok(())
}

//! Finite-difference gradient checking of a small composite computation:
//! build a two-layer network on the autodiff core, compare analytic and
//! numeric gradients for every parameter, and show what a failure report
//! looks like.

use saa::tensor::grad_check_params;
use saa::{Result, SaaRng, Tensor};

fn main() -> Result<()> {
    let mut rng = SaaRng::from_seed(1);
    let w1 = Tensor::param((0..4 * 6).map(|_| rng.xavier(4, 6)).collect(), &[4, 6])?;
    let b1 = Tensor::param(vec![0.0; 6], &[6])?;
    let w2 = Tensor::param((0..6 * 2).map(|_| rng.xavier(6, 2)).collect(), &[6, 2])?;
    let x = Tensor::new((0..3 * 4).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[3, 4])?;

    let f = {
        let (w1, b1, w2, x) = (w1.clone(), b1.clone(), w2.clone(), x.clone());
        move || {
            let h = x.matmul(&w1)?.add_row(&b1)?.relu();
            let y = h.matmul(&w2)?;
            Ok(y.mul(&y)?.sum())
        }
    };
    let named = [("w1", w1), ("b1", b1), ("w2", w2)];
    let report = grad_check_params(&f, &named, 1e-4)?;
    println!("max relative error: {:.3e}", report.max_rel_err);
    println!("worst coordinate:   {}", report);
    println!("passes 1e-4:        {}", report.passes(1e-4));
    Ok(())
}

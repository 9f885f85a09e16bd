//! The alignment loss: dynamic-programming forward recursion versus the
//! brute-force enumeration oracle on a small lattice, plus the gradient of
//! the loss with respect to the logits.

use saa::decoder::{rna_loss_bruteforce, rna_loss_dp, AlignmentLattice};
use saa::{Result, SaaRng, Tensor};

fn main() -> Result<()> {
    let mut rng = SaaRng::from_seed(3);
    let (frames, labels) = (5, 3); // blank id = 3, lattice dim 4
    let logits = Tensor::param(
        (0..frames * (labels + 1)).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        &[frames, labels + 1],
    )?;
    let lattice = AlignmentLattice { log_probs: logits.log_softmax_rows()? };
    let target = vec![0, 2, 1];

    let dp = rna_loss_dp(&lattice, &target, labels)?;
    let brute = rna_loss_bruteforce(&lattice, &target, labels)?;
    println!("target {:?} over {} frames", target, frames);
    println!("dp loss:    {:.12}", dp.item());
    println!("brute loss: {:.12}", brute);
    println!("difference: {:.3e}", (dp.item() - brute).abs());

    dp.backward()?;
    let g = logits.grad().expect("logits gradient");
    println!("d loss / d logits, frame 0: {:?}", g[..labels + 1].iter().map(|v| format!("{:.4}", v)).collect::<Vec<_>>());

    // infeasible targets are rejected, not silently zero
    let too_long = vec![0; frames + 1];
    println!("infeasible target: {}", rna_loss_dp(&lattice, &too_long, labels).unwrap_err());
    Ok(())
}

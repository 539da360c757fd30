//! Finite-difference check of the tape gradients for the three training losses.

use mmat::ndgrad::{finite_diff_check, Tensor};
use mmat::nets::Network;
use mmat::training::loss::{boosted_cross_entropy, cross_entropy, logit_sq_distance};

fn main() -> mmat::Result<()> {
    let net = Network::mlp(&[3, 8, 8, 4], 7)?;
    let x = Tensor::from_rows(&[[0.2, -0.4, 0.9], [1.1, 0.3, -0.7]])?;
    let labels = [2, 0];
    let teacher = Tensor::from_rows(&[[0.5, -1.0, 2.0, 0.0], [1.5, 0.2, -0.3, 0.4]])?;

    let ce = finite_diff_check(|g, v| Ok(cross_entropy(net.logits(g, v)?, &labels)?.mean()), &x, 1e-6)?;
    let bce = finite_diff_check(|g, v| Ok(boosted_cross_entropy(net.logits(g, v)?, &labels)?.mean()), &x, 1e-6)?;
    let mse = finite_diff_check(
        |g, v| Ok(logit_sq_distance(net.logits(g, v)?, g.constant(teacher.clone()))?.mean()),
        &x,
        1e-6,
    )?;
    println!("relative error w.r.t. inputs");
    println!("  ce   {ce:.2e}");
    println!("  bce  {bce:.2e}");
    println!("  mse  {mse:.2e}");
    Ok(())
}

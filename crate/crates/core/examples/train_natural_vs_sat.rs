//! Natural training against standard adversarial training on two Gaussian blobs.

use mmat::attacks::AttackSpec;
use mmat::data::gen_gaussians;
use mmat::evaluation::{natural_accuracy, robust_accuracy};
use mmat::nets::Network;
use mmat::training::{train, Method, TrainConfig};

fn main() -> mmat::Result<()> {
    let centers = vec![vec![-0.5, 0.0], vec![0.5, 0.0]];
    let train_set = gen_gaussians(300, &centers, 0.2, 1)?;
    let test = gen_gaussians(200, &centers, 0.2, 2)?;
    let eps = 0.15;
    let config = TrainConfig {
        epochs: 15,
        batch_size: 64,
        lr_drops: vec![],
        seed: 3,
        ..TrainConfig::default()
    };
    let init = Network::mlp(&[2, 16, 16, 2], 4)?;
    let pgd = AttackSpec::pgd20(eps, 5);
    for method in [Method::Natural, Method::sat(eps)] {
        let out = train(&config, init.clone(), &train_set, None, &method)?;
        println!(
            "{:>8}: NA {:.3}  RA {:.3}  final loss {:.4}",
            method.tag(),
            natural_accuracy(&out.final_net, &test)?.value(),
            robust_accuracy(&out.final_net, &test, &pgd)?.value(),
            out.batch_losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

//! Black-box transfer: examples crafted on one model, scored on another.

use mmat::attacks::AttackSpec;
use mmat::data::gen_rings;
use mmat::evaluation::{robust_accuracy, TransferSet};
use mmat::nets::Network;
use mmat::training::{train, Method, TrainConfig};

fn main() -> mmat::Result<()> {
    let train_set = gen_rings(300, &[1.0, 1.5], 0.1, 1)?;
    let test = gen_rings(200, &[1.0, 1.5], 0.1, 2)?;
    let config = TrainConfig {
        epochs: 15,
        lr: 0.01,
        lr_drops: vec![],
        seed: 3,
        train_metrics: false,
        ..TrainConfig::default()
    };
    let natural = train(&config, Network::mlp(&[2, 32, 32, 2], 4)?, &train_set, None, &Method::Natural)?.final_net;
    let sat = train(&config, Network::mlp(&[2, 32, 32, 2], 5)?, &train_set, None, &Method::sat(0.1))?.final_net;
    let spec = AttackSpec::pgd20(0.1, 6);

    let from_natural = TransferSet::craft(&natural, &test, &spec)?;
    let from_sat = TransferSet::craft(&sat, &test, &spec)?;
    println!(
        "white-box  natural {:.3}  sat {:.3}",
        robust_accuracy(&natural, &test, &spec)?.value(),
        robust_accuracy(&sat, &test, &spec)?.value()
    );
    println!("natural -> sat      {:.3}", from_natural.evaluate(&sat, &test)?.value());
    println!("sat -> natural      {:.3}", from_sat.evaluate(&natural, &test)?.value());
    Ok(())
}

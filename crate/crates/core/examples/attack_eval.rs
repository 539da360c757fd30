//! FGSM, PGD-20 and CW-20 evaluation report for one model.

use mmat::attacks::AttackSpec;
use mmat::data::gen_rings;
use mmat::evaluation::evaluate;
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
    let net = train(&config, Network::mlp(&[2, 32, 32, 2], 4)?, &train_set, None, &Method::sat(0.1))?.final_net;
    let eps = 0.1;
    let specs = [AttackSpec::fgsm(eps), AttackSpec::pgd20(eps, 5), AttackSpec::cw20(eps, 5)];
    let report = evaluate(&net, "sat", &test, &specs, 5, "example")?;
    print!("{}", report.to_json()?);
    Ok(())
}

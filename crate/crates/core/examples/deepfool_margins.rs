//! DeepFool margins of a trained model and their histogram.

use mmat::attacks::{deepfool_margin, DeepFoolConfig};
use mmat::data::gen_gaussians;
use mmat::evaluation::{margins, median_margin, MarginHistogram, MarginSubset};
use mmat::nets::Network;
use mmat::training::{train, Method, TrainConfig};

fn main() -> mmat::Result<()> {
    let data = gen_gaussians(200, &[vec![-0.5, 0.0], vec![0.5, 0.0]], 0.2, 1)?;
    let config = TrainConfig {
        epochs: 10,
        lr_drops: vec![],
        seed: 2,
        train_metrics: false,
        ..TrainConfig::default()
    };
    let net = train(&config, Network::mlp(&[2, 16, 2], 3)?, &data, None, &Method::Natural)?.final_net;

    let est = deepfool_margin(&net, data.x.row(0), &DeepFoolConfig::default())?;
    println!("example 0: {est:?}");

    let samples = margins(&net, &data, MarginSubset::Correct, &DeepFoolConfig::default())?;
    println!("median margin over correct examples: {:?}", median_margin(&samples));
    let hist = MarginHistogram::bin(&samples, 10, 0.05, "natural", MarginSubset::Correct)?;
    hist.write_csv(std::io::stdout())?;
    Ok(())
}

//! Natural vs SAT vs MMAT on noisy concentric rings.
//!
//! `cargo run --release --example tradeoff -- [seeds] [noise] [inner] [outer] [epochs] [lr] [wd]`

use mmat::study::{score, StudyConfig};

fn main() -> mmat::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seeds = arg(0, 1.0) as u64;
    let mut cfg = StudyConfig::default();
    cfg.noise = arg(1, cfg.noise);
    cfg.radii = vec![arg(2, cfg.radii[0]), arg(3, cfg.radii[1])];
    cfg.train.epochs = arg(4, cfg.train.epochs as f64) as usize;
    cfg.train.lr = arg(5, cfg.train.lr);
    cfg.train.weight_decay = arg(6, cfg.train.weight_decay);
    let e = cfg.train.epochs;
    cfg.train.lr_drops = vec![
        mmat::training::LrDrop {
            epoch: e * 3 / 4,
            factor: 0.1,
        },
        mmat::training::LrDrop {
            epoch: e * 9 / 10,
            factor: 0.1,
        },
    ];
    for seed in 0..seeds {
        let t = std::time::Instant::now();
        let zoo = cfg.train_zoo(seed)?;
        println!("seed {seed} ({:.1}s)", t.elapsed().as_secs_f64());
        for (name, net) in zoo.models() {
            let s = score(net, &zoo.test, seed)?;
            println!("  {name:>9}  NA {:.3}  RA {:.3}  median margin {:.4}", s.na, s.ra, s.median_margin);
        }
    }
    Ok(())
}

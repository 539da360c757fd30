use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::rng;

/// Isotropic Gaussian clusters, one class per center, `n` examples each.
/// Base budget is `sigma / 4`.
pub fn gen_gaussians(n: usize, centers: &[Vec<f64>], sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if centers.len() < 2 {
        return Err(Error::Contract("need at least two centers".into()));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Contract(format!("sigma must be positive, got {sigma}")));
    }
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::Contract("centers must share a positive dimension".into()));
    }
    let mut r = rng::stream_rng(seed, rng::stream::DATA, 0);
    let mut data = Vec::with_capacity(n * centers.len() * dim);
    let mut labels = Vec::with_capacity(n * centers.len());
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n {
            for &c in center {
                let z: f64 = r.sample(StandardNormal);
                data.push(c + sigma * z);
            }
            labels.push(class);
        }
    }
    let x = Tensor::matrix(labels.len(), dim, data)?;
    Dataset::new(
        x,
        labels,
        centers.len(),
        Domain::Unconstrained,
        format!("gaussians-s{seed}"),
        sigma / 4.0,
    )
}

/// Concentric noisy rings in the plane, class `k` on radius `radii[k]`.
/// Radial noise is Gaussian with standard deviation `noise`. Rings closer than
/// four noise widths are flagged in `warnings`. Base budget is `noise / 4`,
/// or `0.1` when `noise` is zero.
pub fn gen_rings(n: usize, radii: &[f64], noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if radii.len() < 2 {
        return Err(Error::Contract("need at least two radii".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::Contract(format!("noise must be nonnegative, got {noise}")));
    }
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract(format!("radii must be distinct: {radii:?}")));
    }
    let mut warnings = Vec::new();
    if let Some(gap) = sorted.windows(2).map(|w| w[1] - w[0]).reduce(f64::min) {
        if gap < 4.0 * noise {
            warnings.push(format!("rings overlap: closest radii differ by {gap} with noise {noise}"));
        }
    }

    let mut r = rng::stream_rng(seed, rng::stream::DATA, 0);
    let mut data = Vec::with_capacity(2 * n * radii.len());
    let mut labels = Vec::with_capacity(n * radii.len());
    for (class, &radius) in radii.iter().enumerate() {
        for _ in 0..n {
            let angle = r.random_range(0.0..std::f64::consts::TAU);
            let z: f64 = r.sample(StandardNormal);
            let rho = radius + noise * z;
            data.push(rho * angle.cos());
            data.push(rho * angle.sin());
            labels.push(class);
        }
    }
    let x = Tensor::matrix(labels.len(), 2, data)?;
    let base = if noise > 0.0 { noise / 4.0 } else { 0.1 };
    let mut ds = Dataset::new(x, labels, radii.len(), Domain::Unconstrained, format!("rings-s{seed}"), base)?;
    ds.warnings = warnings;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussians_are_reproducible() {
        let c = [vec![1.0, 0.0], vec![-1.0, 0.0]];
        let a = gen_gaussians(50, &c, 0.2, 3).unwrap();
        assert_eq!(a, gen_gaussians(50, &c, 0.2, 3).unwrap());
        assert_ne!(a.x, gen_gaussians(50, &c, 0.2, 4).unwrap().x);
        assert_eq!(a.len(), 100);
        assert_eq!(a.base_eps, 0.05);
    }

    #[test]
    fn gaussians_reject_bad_arguments() {
        let c = [vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert!(matches!(gen_gaussians(0, &c, 0.2, 1), Err(Error::EmptyDataset)));
        assert!(gen_gaussians(5, &c, 0.0, 1).is_err());
        assert!(gen_gaussians(5, &c[..1], 0.2, 1).is_err());
    }

    #[test]
    fn noiseless_rings_sit_on_circles() {
        let ds = gen_rings(40, &[1.0, 2.0], 0.0, 5).unwrap();
        for (row, &y) in ds.x.row_iter().zip(&ds.labels) {
            let rho = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!((rho - [1.0, 2.0][y]).abs() < 1e-12);
        }
        assert!(ds.warnings.is_empty());
    }

    #[test]
    fn rings_are_reproducible_and_flag_overlap() {
        assert_eq!(
            gen_rings(20, &[1.0, 2.0], 0.05, 1).unwrap(),
            gen_rings(20, &[1.0, 2.0], 0.05, 1).unwrap()
        );
        assert!(!gen_rings(20, &[1.0, 1.2], 0.1, 1).unwrap().warnings.is_empty());
        assert!(gen_rings(20, &[1.0, 1.0], 0.1, 1).is_err());
    }
}

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::nets::{argmax, Network};

use super::AttackSpec;
use crate::data::Domain;

/// Unit (L2) direction of the perturbation the given attack finds for one
/// labelled example.
pub fn adversarial_direction(net: &Network, x: &[f64], label: usize, spec: &AttackSpec, domain: Domain) -> Result<Vec<f64>> {
    if !(spec.eps > 0.0) {
        return Err(Error::Contract(format!("direction needs a positive budget, got {}", spec.eps)));
    }
    let xt = Tensor::matrix(1, x.len(), x.to_vec())?;
    let adv = spec.run(net, &xt, &[label], domain)?;
    let delta: Vec<f64> = adv.row(0).iter().zip(x).map(|(a, b)| a - b).collect();
    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::NoDirection);
    }
    Ok(delta.into_iter().map(|v| v / norm).collect())
}

const GRID_POINTS: usize = 256;

/// Smallest `|a| ≤ t_max` such that `x + a·v` is classified differently from
/// `x`, located by a signed grid scan and refined by bisection to `tol`.
/// Returns `None` when no flip occurs within `t_max` on the grid.
pub fn margin_along(net: &Network, x: &[f64], v: &[f64], t_max: f64, tol: f64) -> Result<Option<f64>> {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("direction must have unit L2 norm, got {norm}")));
    }
    if x.len() != v.len() {
        return Err(Error::shape("margin_along", &[x.len()], &[v.len()]));
    }
    if !(t_max > 0.0) || !(tol > 0.0) {
        return Err(Error::Contract("t_max and tol must be positive".into()));
    }
    let d = x.len();
    let class_at = |a: f64| -> Result<usize> {
        let p: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi + a * vi).collect();
        Ok(argmax(net.forward(&Tensor::matrix(1, d, p)?)?.row(0)))
    };
    let y0 = class_at(0.0)?;
    let h = t_max / GRID_POINTS as f64;
    for k in 1..=GRID_POINTS {
        for s in [1.0, -1.0] {
            let a = s * k as f64 * h;
            if class_at(a)? != y0 {
                let (mut lo, mut hi) = ((k - 1) as f64 * h, k as f64 * h);
                while hi - lo > tol {
                    let mid = 0.5 * (lo + hi);
                    if class_at(s * mid)? != y0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok(Some(hi));
            }
        }
    }
    Ok(None)
}

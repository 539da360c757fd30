use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Tensor};
use crate::nets::{argmax, Network};

/// Smallest usable gradient-difference norm.
const DENOM_FLOOR: f64 = 1e-12;

/// Added to every step length so an example sitting exactly on a boundary
/// still moves off it.
const MIN_STEP: f64 = 1e-9;

/// Which class scores the linearization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginSpace {
    /// Softmax probabilities `p_k`.
    Probability,
    /// Raw logits `z_k`.
    Logit,
}

/// Shape of each step `r · d` where `r = |f_l - f_y| / ‖w_l - w_y‖₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepForm {
    /// `d = sign(w_l - w_y)`: lands exactly on the linearized boundary in L∞.
    Sign,
    /// `d = w_l - w_y`: the raw gradient difference.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepFoolConfig {
    pub max_iter: usize,
    /// Factor applied to the accumulated perturbation before each flip check.
    pub overshoot: f64,
    pub space: MarginSpace,
    pub step: StepForm,
    /// Pull a found perturbation back along its own direction to the first
    /// flip (then reapply `overshoot`).
    #[serde(default = "default_refine")]
    pub refine: bool,
}

fn default_refine() -> bool {
    true
}

/// Grid resolution and bisection depth of the refinement line search.
const REFINE_GRID: usize = 64;
const REFINE_BISECTIONS: usize = 40;

impl Default for DeepFoolConfig {
    fn default() -> Self {
        DeepFoolConfig {
            max_iter: 50,
            overshoot: 1.02,
            space: MarginSpace::Logit,
            step: StepForm::Sign,
            refine: true,
        }
    }
}

impl DeepFoolConfig {
    /// Probability-space scores with raw gradient-difference steps.
    pub fn probability_raw() -> Self {
        DeepFoolConfig {
            space: MarginSpace::Probability,
            step: StepForm::Gradient,
            ..DeepFoolConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginEstimate {
    pub found: bool,
    /// `‖δ‖∞` when found.
    pub margin: Option<f64>,
    /// Accumulated perturbation δ when found.
    pub perturbation: Option<Vec<f64>>,
    pub iterations: usize,
    /// Class predicted at the clean input.
    pub original_class: usize,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Scores and their input Jacobian (`K × d`) at a single point.
fn scores_and_jacobian(net: &Network, point: &[f64], space: MarginSpace) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let g = Graph::new();
    let x = g.leaf(Tensor::matrix(1, point.len(), point.to_vec())?);
    let logits = net.logits(&g, x)?;
    let out = match space {
        MarginSpace::Logit => logits,
        MarginSpace::Probability => logits.softmax(),
    };
    let scores = out.value().into_data();
    let mut jac = Vec::with_capacity(scores.len());
    for k in 0..scores.len() {
        g.zero_grad();
        g.backward(out.pick(&[k])?.sum())?;
        jac.push(x.grad().map_or_else(|| vec![0.0; point.len()], Tensor::into_data));
    }
    Ok((scores, jac))
}

/// Smallest grid point `t` in `(0, overshoot]` with `x + t·acc` flipped,
/// bisected, then scaled by `overshoot` when that still flips.
fn refine<F>(predict_at: &F, x: &[f64], acc: &[f64], overshoot: f64, y0: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<usize>,
{
    let along = |t: f64| -> Vec<f64> { acc.iter().map(|a| t * a).collect() };
    let flips = |t: f64| -> Result<bool> {
        let p: Vec<f64> = x.iter().zip(along(t)).map(|(a, b)| a + b).collect();
        Ok(predict_at(&p)? != y0)
    };
    let h = overshoot / REFINE_GRID as f64;
    let grid = |k: usize| if k == REFINE_GRID { overshoot } else { k as f64 * h };
    let mut k = 1;
    while k < REFINE_GRID && !flips(grid(k))? {
        k += 1;
    }
    let (mut lo, mut hi) = (grid(k - 1), grid(k));
    for _ in 0..REFINE_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if flips(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t = if flips(overshoot * hi)? { overshoot * hi } else { hi };
    Ok(along(t))
}

/// DeepFool-style margin estimate for one example.
///
/// Each iteration linearizes the class scores at the current point, picks the
/// class `l ≠ y` with the smallest `|f_l - f_y| / ‖∇f_l - ∇f_y‖₁`, and steps
/// towards it. The loop stops once `x + overshoot·Σδ` is classified
/// differently from `x`; otherwise the estimate is reported as not found
/// after `max_iter` iterations. With `refine`, the found perturbation is then
/// shortened to the first flip along its direction.
pub fn deepfool_margin(net: &Network, x: &[f64], cfg: &DeepFoolConfig) -> Result<MarginEstimate> {
    if cfg.max_iter == 0 {
        return Err(Error::Contract("deepfool needs max_iter >= 1".into()));
    }
    let d = x.len();
    let predict_at = |p: &[f64]| -> Result<usize> {
        let z = net.forward(&Tensor::matrix(1, d, p.to_vec())?)?;
        Ok(argmax(z.row(0)))
    };
    let y0 = predict_at(x)?;
    let mut acc = vec![0.0; d];
    let mut point = x.to_vec();

    for iter in 1..=cfg.max_iter {
        let (f, jac) = scores_and_jacobian(net, &point, cfg.space)?;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in (0..f.len()).filter(|&k| k != y0) {
            let w: Vec<f64> = jac[k].iter().zip(&jac[y0]).map(|(a, b)| a - b).collect();
            let denom: f64 = w.iter().map(|v| v.abs()).sum();
            if denom < DENOM_FLOOR {
                continue;
            }
            let ratio = (f[k] - f[y0]).abs() / denom;
            if best.as_ref().is_none_or(|(r, _)| ratio < *r) {
                best = Some((ratio, w));
            }
        }
        let Some((ratio, w)) = best else {
            return Err(Error::DegenerateGeometry(format!(
                "every score-gradient difference has L1 norm below {DENOM_FLOOR:e} at iteration {iter}"
            )));
        };
        let r = ratio + MIN_STEP;
        for (a, wj) in acc.iter_mut().zip(&w) {
            *a += match cfg.step {
                StepForm::Sign => r * sign(*wj),
                StepForm::Gradient => r * wj,
            };
        }
        let delta: Vec<f64> = acc.iter().map(|a| cfg.overshoot * a).collect();
        let candidate: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        if predict_at(&candidate)? != y0 {
            let delta = if cfg.refine {
                refine(&predict_at, x, &acc, cfg.overshoot, y0)?
            } else {
                delta
            };
            let margin = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Ok(MarginEstimate {
                found: true,
                margin: Some(margin),
                perturbation: Some(delta),
                iterations: iter,
                original_class: y0,
            });
        }
        for ((p, xi), a) in point.iter_mut().zip(x).zip(&acc) {
            *p = xi + a;
        }
    }
    Ok(MarginEstimate {
        found: false,
        margin: None,
        perturbation: None,
        iterations: cfg.max_iter,
        original_class: y0,
    })
}

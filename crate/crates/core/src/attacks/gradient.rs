use rand_distr::{Distribution, StandardNormal};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::nets::Network;
use crate::rng;
use crate::training::loss::LossKind;

/// Standard deviation of the Gaussian random start.
pub const RANDOM_START_STD: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOptions {
    pub iterations: usize,
    pub random_start: bool,
    pub seed: u64,
    /// Added to the row number when deriving each example's noise stream, so
    /// a batch split into pieces draws the same noise as the whole.
    pub index_offset: usize,
    /// CE (and BCE) are ascended, CW is descended.
    pub loss: LossKind,
}

impl PgdOptions {
    pub fn new(iterations: usize, random_start: bool, seed: u64) -> Self {
        PgdOptions {
            iterations,
            random_start,
            seed,
            index_offset: 0,
            loss: LossKind::Ce,
        }
    }
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

/// Fast gradient sign: `clip(x + ε·sign(∇CE))`.
pub fn fgsm(net: &Network, x: &Tensor, labels: &[usize], eps: f64, domain: Domain) -> Result<Tensor> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Contract(format!("budget must be finite and nonnegative, got {eps}")));
    }
    let grad = net.per_example_input_gradient(x, labels, LossKind::Ce)?;
    let mut out = x.clone();
    for (o, g) in out.data_mut().iter_mut().zip(grad.data()) {
        *o = domain.clip(*o + eps * sign(*g));
    }
    Ok(out)
}

/// Projected gradient sign attack with a budget and a step size per example.
///
/// Each row starts at `x_i` (plus `0.001·N(0, I)` when `random_start`,
/// projected back into the ball) and takes `iterations` steps of
/// `α_i·sign(∇loss)`, each followed by projection onto the L∞ ball of radius
/// `ε_i` around `x_i` and, for `Box01` data, clipping to `[0, 1]`.
pub fn pgd(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    budgets: &[f64],
    steps: &[f64],
    opts: &PgdOptions,
    domain: Domain,
) -> Result<Tensor> {
    let n = x.rows();
    if budgets.len() != n || steps.len() != n || labels.len() != n {
        return Err(Error::shape("pgd", x.shape(), &[budgets.len(), steps.len(), labels.len()]));
    }
    for (i, (&eps, &alpha)) in budgets.iter().zip(steps).enumerate() {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::Contract(format!("budget of example {i} is {eps}")));
        }
        if opts.iterations > 0 && eps > 0.0 && !(alpha > 0.0) {
            return Err(Error::Contract(format!("step of example {i} is {alpha} with budget {eps}")));
        }
    }
    let d = x.cols();
    let direction = match opts.loss {
        LossKind::Cw => -1.0,
        LossKind::Ce | LossKind::Bce => 1.0,
    };

    let project = |adv: &mut Tensor| {
        for i in 0..n {
            let eps = budgets[i];
            let (orig, row) = (x.row(i), adv.row_mut(i));
            for j in 0..d {
                let v = row[j].clamp(orig[j] - eps, orig[j] + eps);
                row[j] = domain.clip(v);
            }
        }
    };

    let mut adv = x.clone();
    if opts.random_start {
        for i in 0..n {
            let mut r = rng::stream_rng(opts.seed, rng::stream::ATTACK, (opts.index_offset + i) as u64);
            for v in adv.row_mut(i) {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += RANDOM_START_STD * z;
            }
        }
        project(&mut adv);
    }

    if budgets.iter().all(|&e| e == 0.0) {
        return Ok(adv);
    }

    for _ in 0..opts.iterations {
        let grad = net.per_example_input_gradient(&adv, labels, opts.loss)?;
        for i in 0..n {
            let alpha = steps[i];
            let (row, g) = (adv.row_mut(i), grad.row(i));
            for j in 0..d {
                row[j] += direction * alpha * sign(g[j]);
            }
        }
        project(&mut adv);
    }
    Ok(adv)
}

/// PGD that descends the CW margin loss.
#[allow(clippy::too_many_arguments)]
pub fn cw_pgd(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    eps: f64,
    alpha: f64,
    iterations: usize,
    random_start: Option<u64>,
    domain: Domain,
) -> Result<Tensor> {
    let n = x.rows();
    let opts = PgdOptions {
        iterations,
        random_start: random_start.is_some(),
        seed: random_start.unwrap_or(0),
        index_offset: 0,
        loss: LossKind::Cw,
    };
    pgd(net, x, labels, &vec![eps; n], &vec![alpha; n], &opts, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::linf_distance;
    use crate::nets::{Activation, Layer};
    use rand::Rng;

    fn linear(w: [[f64; 2]; 2]) -> Network {
        // weights stored fan_in × fan_out: column k holds class k's weights
        let layer = Layer {
            weights: Tensor::from_rows(&[[w[0][0], w[1][0]], [w[0][1], w[1][1]]]).unwrap(),
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
        };
        Network::from_layers(vec![layer], 0).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Tensor {
        let mut r = rng::stream_rng(seed, "t", 0);
        Tensor::matrix(n, 2, (0..2 * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn fgsm_zero_budget_is_identity() {
        let net = Network::mlp(&[2, 8, 2], 1).unwrap();
        let x = batch(10, 1);
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        assert_eq!(fgsm(&net, &x, &y, 0.0, Domain::Unconstrained).unwrap(), x);
    }

    #[test]
    fn fgsm_on_linear_model_follows_closed_form_sign() {
        // z = W x with W = [[1, -1], [-1, 1]], y = 0:
        // ∇_x CE = Wᵀ(p - e_0) = (p_0 - 1)·[1, -1] + p_1·[-1, 1] = p_1·[-2, 2]
        let net = linear([[1.0, -1.0], [-1.0, 1.0]]);
        let x = Tensor::from_rows(&[[0.3, 0.1]]).unwrap();
        let adv = fgsm(&net, &x, &[0], 0.05, Domain::Unconstrained).unwrap();
        assert_eq!(adv.data(), &[0.3 - 0.05, 0.1 + 0.05]);
    }

    #[test]
    fn pgd_zero_budget_is_bit_exact_even_with_noise() {
        let net = Network::mlp(&[2, 8, 2], 1).unwrap();
        let x = batch(16, 2);
        let y: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let mut budgets = vec![0.1; 16];
        budgets[3] = 0.0;
        budgets[9] = 0.0;
        let steps: Vec<f64> = budgets.iter().map(|e| e / 4.0).collect();
        let adv = pgd(&net, &x, &y, &budgets, &steps, &PgdOptions::new(10, true, 5), Domain::Unconstrained).unwrap();
        assert_eq!(adv.row(3), x.row(3));
        assert_eq!(adv.row(9), x.row(9));
        for i in 0..16 {
            assert!(linf_distance(adv.row(i), x.row(i)) <= budgets[i] + 1e-12);
        }
    }

    #[test]
    fn pgd_without_steps_or_noise_is_identity() {
        let net = Network::mlp(&[2, 8, 2], 1).unwrap();
        let x = batch(4, 3);
        let adv = pgd(
            &net,
            &x,
            &[0, 1, 0, 1],
            &[0.2; 4],
            &[0.05; 4],
            &PgdOptions::new(0, false, 1),
            Domain::Unconstrained,
        )
        .unwrap();
        assert_eq!(adv, x);
    }

    #[test]
    fn pgd_rejects_negative_budget() {
        let net = Network::mlp(&[2, 4, 2], 1).unwrap();
        let x = batch(2, 3);
        let r = pgd(
            &net,
            &x,
            &[0, 1],
            &[0.1, -0.1],
            &[0.1, 0.1],
            &PgdOptions::new(3, false, 1),
            Domain::Unconstrained,
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn partitioned_batches_match_whole_batch() {
        let net = Network::mlp(&[2, 16, 2], 4).unwrap();
        let x = batch(12, 4);
        let y: Vec<usize> = (0..12).map(|i| (i / 3) % 2).collect();
        let eps = vec![0.15; 12];
        let steps = vec![0.03; 12];
        let opts = PgdOptions::new(7, true, 99);
        let whole = pgd(&net, &x, &y, &eps, &steps, &opts, Domain::Unconstrained).unwrap();
        for (lo, hi) in [(0, 5), (5, 12)] {
            let idx: Vec<usize> = (lo..hi).collect();
            let part_opts = PgdOptions {
                index_offset: lo,
                ..opts.clone()
            };
            let part = pgd(
                &net,
                &x.select_rows(&idx),
                &y[lo..hi],
                &eps[lo..hi],
                &steps[lo..hi],
                &part_opts,
                Domain::Unconstrained,
            )
            .unwrap();
            for (k, i) in idx.iter().enumerate() {
                assert_eq!(part.row(k), whole.row(*i));
            }
        }
    }

    #[test]
    fn box_domain_is_respected() {
        let net = Network::mlp(&[2, 8, 2], 3).unwrap();
        let x = Tensor::from_rows(&[[0.0, 1.0], [0.999, 0.001], [0.5, 0.5]]).unwrap();
        let adv = pgd(
            &net,
            &x,
            &[0, 1, 0],
            &[0.3; 3],
            &[0.1; 3],
            &PgdOptions::new(5, true, 2),
            Domain::Box01,
        )
        .unwrap();
        assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn cw_and_ce_agree_in_sign_on_binary_linear_model() {
        // both reduce to sign(Wᵀ(e_other - e_y)) for two classes
        let net = linear([[0.7, -1.3], [-0.2, 0.4]]);
        let x = batch(8, 6);
        let y: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let ce = net.per_example_input_gradient(&x, &y, LossKind::Ce).unwrap();
        let cw = net.per_example_input_gradient(&x, &y, LossKind::Cw).unwrap();
        let z = net.forward(&x).unwrap();
        for i in 0..8 {
            let other = 1 - y[i];
            if z.row(i)[y[i]] <= z.row(i)[other] {
                continue; // CW is flat once misclassified
            }
            for j in 0..2 {
                assert_eq!(sign(ce.row(i)[j]), -sign(cw.row(i)[j]));
            }
        }
        let a = cw_pgd(&net, &x, &y, 0.05, 0.05, 1, None, Domain::Unconstrained).unwrap();
        let b = fgsm(&net, &x, &y, 0.05, Domain::Unconstrained).unwrap();
        for i in 0..8 {
            if z.row(i)[y[i]] > z.row(i)[1 - y[i]] {
                assert_eq!(a.row(i), b.row(i));
            }
        }
    }

    #[test]
    fn cw_zero_budget_is_identity() {
        let net = Network::mlp(&[2, 8, 3], 3).unwrap();
        let x = batch(5, 8);
        let adv = cw_pgd(&net, &x, &[0, 1, 2, 0, 1], 0.0, 0.1, 10, Some(4), Domain::Unconstrained).unwrap();
        assert_eq!(adv, x);
    }
}

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compare the recorded gradient of a scalar function against central
/// differences. Returns the norm-wise relative error
/// `‖analytic - numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-12)`.
///
/// `f` receives a fresh graph and the point to evaluate, and must return a
/// scalar node built from it.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let analytic = {
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let root = f(&g, xv)?;
        g.backward(root)?;
        xv.grad().unwrap_or_else(|| Tensor::zeros(x.shape()))
    };

    let eval = |point: Tensor| -> Result<f64> {
        let g = Graph::new();
        let xv = g.constant(point);
        Ok(f(&g, xv)?.item())
    };

    let (mut diff, mut a_norm, mut n_norm) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        let xi = x.data()[i];
        let (up, down) = (xi + h, xi - h);
        let mut plus = x.clone();
        plus.data_mut()[i] = up;
        let mut minus = x.clone();
        minus.data_mut()[i] = down;
        // the representable step may differ slightly from 2h
        let numeric = (eval(plus)? - eval(minus)?) / (up - down);
        let a = analytic.data()[i];
        diff += (a - numeric).powi(2);
        a_norm += a * a;
        n_norm += numeric * numeric;
    }
    Ok(diff.sqrt() / a_norm.sqrt().max(n_norm.sqrt()).max(1e-12))
}

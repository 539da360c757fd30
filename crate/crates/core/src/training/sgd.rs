use crate::ndgrad::Tensor;
use crate::nets::Network;

/// One Nesterov-momentum SGD update of a flat parameter buffer:
///
/// ```text
/// g ← grad + wd·param
/// v ← μ·v + g
/// param ← param − η·(g + μ·v)
/// ```
pub fn sgd_step(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= lr * (g + momentum * *v);
    }
}

/// Momentum state for every layer of a network. Weight decay touches weights
/// only; biases are never decayed.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Sgd {
    pub fn new(net: &Network, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: net
                .layers()
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &[(Tensor, Tensor)], lr: f64) {
        for ((layer, (gw, gb)), (vw, vb)) in net.layers_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            sgd_step(layer.weights.data_mut(), gw.data(), vw, lr, self.momentum, self.weight_decay);
            sgd_step(&mut layer.bias, gb.data(), vb, lr, self.momentum, 0.0);
        }
    }
}

//! Multilayer-perceptron classifiers and their JSON checkpoints.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{softmax, Graph, Tensor, Var};
use crate::rng;
use crate::training::loss::{self, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "id")]
    Identity,
}

/// One dense layer: `act(x · W + b)` with `W` stored as `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weights.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    seed: u64,
}

/// A network whose parameters have been recorded in a graph.
pub struct BoundNetwork<'g> {
    pub weights: Vec<Var<'g>>,
    pub biases: Vec<Var<'g>>,
    pub activations: Vec<Activation>,
}

impl<'g> BoundNetwork<'g> {
    pub fn logits(&self, x: Var<'g>) -> Result<Var<'g>> {
        let mut h = x;
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            h = h.matmul(*w)?.add_row(*b)?;
            if *act == Activation::Relu {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Parameter gradients after a backward pass, in layer order
    /// `(dW, db)`. Missing gradients are reported as zeros.
    pub fn gradients(&self) -> Vec<(Tensor, Tensor)> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| {
                let gw = w.grad().unwrap_or_else(|| Tensor::zeros(&w.shape()));
                let gb = b.grad().unwrap_or_else(|| Tensor::zeros(&b.shape()));
                (gw, gb)
            })
            .collect()
    }
}

impl Network {
    /// Glorot-uniform weights drawn from the `init` stream of `seed`, zero
    /// biases, ReLU between layers and identity on the logits.
    pub fn mlp(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Contract(format!(
                "an MLP needs at least an input and an output size, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Contract(format!("layer sizes must be positive: {sizes:?}")));
        }
        let mut rng = rng::stream_rng(seed, rng::stream::INIT, 0);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                Layer {
                    weights: Tensor::matrix(fan_in, fan_out, data).expect("layer shape"),
                    bias: vec![0.0; fan_out],
                    activation: if i == last { Activation::Identity } else { Activation::Relu },
                }
            })
            .collect();
        Network::from_layers(layers, seed)
    }

    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Contract("a network needs at least one layer".into()));
        };
        if last.activation != Activation::Identity {
            return Err(Error::Contract("the final layer must produce raw logits".into()));
        }
        if last.fan_out() < 2 {
            return Err(Error::Contract(format!(
                "a classifier needs at least two classes, got {}",
                last.fan_out()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.rank() != 2 || layer.bias.len() != layer.fan_out() {
                return Err(Error::shape("layer", layer.weights.shape(), &[layer.bias.len()]));
            }
            if i > 0 && layers[i - 1].fan_out() != layer.fan_in() {
                return Err(Error::shape("layer chain", layers[i - 1].weights.shape(), layer.weights.shape()));
            }
        }
        Ok(Network { layers, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Layer::fan_out));
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Record the parameters in `g`; `trainable` decides whether they are
    /// gradient leaves or constants.
    pub fn bind<'g>(&self, g: &'g Graph, trainable: bool) -> BoundNetwork<'g> {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = layer.weights.clone();
            let b = Tensor::vector(layer.bias.clone());
            if trainable {
                weights.push(g.leaf(w));
                biases.push(g.leaf(b));
            } else {
                weights.push(g.constant(w));
                biases.push(g.constant(b));
            }
        }
        BoundNetwork {
            weights,
            biases,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::shape("network input", shape, &[0, self.input_dim()]));
        }
        Ok(())
    }

    /// Recorded logits with the parameters held constant.
    pub fn logits<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        self.check_input(&x.shape())?;
        self.bind(g, false).logits(x)
    }

    /// Logits without recording. Produces the same bits as [`Network::logits`].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = h.matmul(&layer.weights)?;
            for row in h.data_mut().chunks_mut(layer.bias.len()) {
                for (o, b) in row.iter_mut().zip(&layer.bias) {
                    *o += b;
                }
            }
            if layer.activation == Activation::Relu {
                for v in h.data_mut() {
                    if !(*v > 0.0) {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(h)
    }

    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        probs(&self.forward(x)?)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(x)?))
    }

    /// Gradient of the batch-mean loss with respect to the input rows.
    pub fn input_gradient(&self, x: &Tensor, labels: &[usize], kind: LossKind) -> Result<Tensor> {
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let losses = loss::per_example(kind, self.logits(&g, xv)?, labels)?;
        g.backward(losses.mean())?;
        Ok(xv.grad().unwrap_or_else(|| Tensor::zeros(x.shape())))
    }

    /// Gradient of the summed per-example loss with respect to the input rows.
    /// Row `i` depends only on example `i`, whatever the batch composition.
    pub(crate) fn per_example_input_gradient(&self, x: &Tensor, labels: &[usize], kind: LossKind) -> Result<Tensor> {
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let losses = loss::per_example(kind, self.logits(&g, xv)?, labels)?;
        g.backward(losses.sum())?;
        Ok(xv.grad().unwrap_or_else(|| Tensor::zeros(x.shape())))
    }
}

/// Softmax over each row of a logit matrix.
pub fn probs(z: &Tensor) -> Result<Tensor> {
    if z.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in logits".into()));
    }
    Ok(softmax(z))
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(z: &Tensor) -> Vec<usize> {
    z.row_iter().map(argmax).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Provenance stored next to the parameters in a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `natural`, `sat-<eps>` or `mmat`.
    pub method: String,
    pub epoch: usize,
    pub config_hash: String,
    pub seed: u64,
    pub init_seed: u64,
    pub artifact_version: String,
    pub input_dim: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub network: Network,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: Activation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    meta: CheckpointMeta,
    layers: Vec<LayerFile>,
}

impl Checkpoint {
    pub fn new(network: Network, method: impl Into<String>, epoch: usize, config_hash: impl Into<String>, seed: u64) -> Self {
        let meta = CheckpointMeta {
            method: method.into(),
            epoch,
            config_hash: config_hash.into(),
            seed,
            init_seed: network.seed(),
            artifact_version: crate::ARTIFACT_VERSION.to_string(),
            input_dim: network.input_dim(),
            classes: network.classes(),
        };
        Checkpoint { meta, network }
    }

    /// Short identifier used in reports.
    pub fn id(&self) -> String {
        format!("{}@{}:{}", self.meta.method, self.meta.epoch, self.meta.config_hash)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            meta: self.meta.clone(),
            layers: self
                .network
                .layers()
                .iter()
                .map(|l| LayerFile {
                    w: l.weights.to_rows(),
                    b: l.bias.clone(),
                    act: l.activation,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    weights: Tensor::from_rows(&l.w)?,
                    bias: l.b,
                    activation: l.act,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let network = Network::from_layers(layers, file.meta.init_seed)?;
        if network.input_dim() != file.meta.input_dim || network.classes() != file.meta.classes {
            return Err(Error::Contract(format!(
                "checkpoint meta says {}→{} but layers give {}→{}",
                file.meta.input_dim,
                file.meta.classes,
                network.input_dim(),
                network.classes()
            )));
        }
        Ok(Checkpoint { meta: file.meta, network })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

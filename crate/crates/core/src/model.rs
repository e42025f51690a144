//! Small dense networks with hand-written backpropagation, softmax
//! cross-entropy and plain mini-batch SGD.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SampleId;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metric::LogitStore;
use crate::scheduler::{EvalCounter, StepLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    ReLU,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::ReLU => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::ReLU => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::ReLU),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation {other:?}")),
        }
    }
}

/// One affine layer followed by an activation. Weights are row-major
/// `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Layer {
    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Layer {
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
            activation,
            input_dim,
            output_dim,
        }
    }

    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn uniform_init<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let weights = (0..input_dim * output_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Layer {
            weights,
            bias: vec![0.0; output_dim],
            activation,
            input_dim,
            output_dim,
        }
    }

    fn pre_activation(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.input_dim).zip(&self.bias).map(
            |(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b,
        ));
    }
}

/// Which shape of network to build for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ModelSpec {
    Linear,
    Mlp { hidden: usize },
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Linear => f.write_str("linear"),
            ModelSpec::Mlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s == "linear" {
            return Ok(ModelSpec::Linear);
        }
        if let Some(hidden) = s.strip_prefix("mlp:") {
            return match hidden.parse::<usize>() {
                Ok(h) if h > 0 => Ok(ModelSpec::Mlp { hidden: h }),
                _ => Err(format!("mlp hidden width must be a positive integer, got {hidden:?}")),
            };
        }
        Err(format!("unknown model {s:?} (linear, mlp:<hidden>)"))
    }
}

impl ModelSpec {
    pub fn build<R: Rng + ?Sized>(&self, input_dim: usize, classes: usize, rng: &mut R) -> DenseModel {
        match *self {
            ModelSpec::Linear => DenseModel::init(&[input_dim, classes], Activation::Identity, rng),
            ModelSpec::Mlp { hidden } => {
                DenseModel::init(&[input_dim, hidden, classes], Activation::ReLU, rng)
            }
        }
    }
}

/// Feed-forward network whose final layer emits raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    layers: Vec<Layer>,
}

/// Gradient of the loss with respect to every weight and bias, laid out like
/// the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl DenseModel {
    /// Checks that dimensions chain and the last activation is identity.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("model needs at least one layer"));
        }
        for layer in &layers {
            if layer.weights.len() != layer.input_dim * layer.output_dim {
                return Err(Error::DimensionMismatch {
                    expected: layer.input_dim * layer.output_dim,
                    actual: layer.weights.len(),
                });
            }
            if layer.bias.len() != layer.output_dim {
                return Err(Error::DimensionMismatch {
                    expected: layer.output_dim,
                    actual: layer.bias.len(),
                });
            }
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].output_dim,
                    actual: pair[1].input_dim,
                });
            }
        }
        let last = layers.last().expect("non-empty");
        if last.activation != Activation::Identity {
            return Err(Error::config(
                "activation",
                last.activation,
                "final layer must be identity so the model emits raw logits",
            ));
        }
        Ok(DenseModel { layers })
    }

    /// Layers of widths `dims`, hidden layers using `hidden_activation`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden_activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need input and output widths");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    hidden_activation
                };
                Layer::uniform_init(w[0], w[1], act, rng)
            })
            .collect();
        DenseModel { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.pre_activation(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        Ok(a)
    }

    /// Forward pass that keeps every layer's input and pre-activation.
    fn forward_cached(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.pre_activation(inputs.last().expect("input"), &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            inputs.push(a);
        }
        (inputs, pre)
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Mean softmax cross-entropy over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)]) -> Result<(f64, Gradients)> {
        let (loss, grads, _) = self.loss_grad_logits(batch)?;
        Ok((loss, grads))
    }

    /// Same as [`loss_and_grad`](Self::loss_and_grad) but also returns each
    /// sample's logits from this forward pass.
    fn loss_grad_logits(&self, batch: &[(&[f64], usize)]) -> Result<(f64, Gradients, Vec<Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::Empty("loss_and_grad needs a non-empty batch"));
        }
        let classes = self.output_dim();
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.zero_gradients();
        let mut total = 0.0;
        let mut all_logits = Vec::with_capacity(batch.len());

        for &(x, label) in batch {
            if x.len() != self.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim(),
                    actual: x.len(),
                });
            }
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            let (inputs, pre) = self.forward_cached(x);
            let logits = inputs.last().expect("output").clone();

            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
            let log_norm = max + sum_exp.ln();
            total += log_norm - logits[label];

            // d loss / d logits = softmax - onehot
            let mut delta: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(k, &l)| {
                    let p = (l - log_norm).exp();
                    (p - if k == label { 1.0 } else { 0.0 }) * scale
                })
                .collect();

            for (li, layer) in self.layers.iter().enumerate().rev() {
                if li + 1 < self.layers.len() {
                    for (d, &z) in delta.iter_mut().zip(&pre[li]) {
                        *d *= layer.activation.derivative(z);
                    }
                }
                let a_prev = &inputs[li];
                let gw = &mut grads.weights[li];
                for (o, &d) in delta.iter().enumerate() {
                    grads.biases[li][o] += d;
                    let row = &mut gw[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (g, &a) in row.iter_mut().zip(a_prev) {
                        *g += d * a;
                    }
                }
                if li > 0 {
                    let mut back = vec![0.0; layer.input_dim];
                    for (o, &d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                        for (b, &w) in back.iter_mut().zip(row) {
                            *b += w * d;
                        }
                    }
                    // Pre-activation derivative of the previous layer is
                    // applied at the top of the next iteration.
                    delta = back;
                }
            }
            all_logits.push(logits);
        }
        Ok((total * scale, grads, all_logits))
    }

    /// `params -= learning_rate * grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grads.weights[li]) {
                *w -= learning_rate * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.biases[li]) {
                *b -= learning_rate * g;
            }
        }
    }

    /// Every parameter in checkpoint order: per layer, weights then bias.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// SHA-256 over the bit patterns of every parameter, as lowercase hex.
    pub fn parameter_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for layer in &self.layers {
            hasher.update((layer.input_dim as u64).to_le_bytes());
            hasher.update((layer.output_dim as u64).to_le_bytes());
            for v in layer.weights.iter().chain(&layer.bias) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Text checkpoint: a header line, then per layer a
    /// `layer <in> <out> <activation>` line, one line of row-major weights and
    /// one line of biases. Values use Rust's shortest round-trip formatting.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("swiftlearn-dense 1 {}\n", self.layers.len());
        for layer in &self.layers {
            out.push_str(&format!(
                "layer {} {} {}\n",
                layer.input_dim, layer.output_dim, layer.activation
            ));
            push_values(&mut out, &layer.weights);
            push_values(&mut out, &layer.bias);
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or("empty checkpoint")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "swiftlearn-dense" || parts[1] != "1" {
            return Err(format!("line 1: bad header {header:?}"));
        }
        let count: usize = parts[2].parse().map_err(|_| "line 1: bad layer count")?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = lines.next().ok_or("truncated checkpoint")?;
            let p: Vec<&str> = line.split_whitespace().collect();
            if p.len() != 4 || p[0] != "layer" {
                return Err(format!("line {}: expected layer header", n + 1));
            }
            let input_dim: usize = p[1].parse().map_err(|_| format!("line {}: bad input dim", n + 1))?;
            let output_dim: usize = p[2].parse().map_err(|_| format!("line {}: bad output dim", n + 1))?;
            let activation: Activation = p[3].parse().map_err(|e| format!("line {}: {e}", n + 1))?;
            let weights = parse_values(lines.next(), input_dim * output_dim)?;
            let bias = parse_values(lines.next(), output_dim)?;
            layers.push(Layer {
                weights,
                bias,
                activation,
                input_dim,
                output_dim,
            });
        }
        DenseModel::from_layers(layers).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DenseModel::from_checkpoint(&text).map_err(|reason| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason,
        })
    }
}

fn push_values(out: &mut String, values: &[f64]) {
    let line: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

fn parse_values(line: Option<(usize, &str)>, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let (n, line) = line.ok_or("truncated checkpoint")?;
    let values = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: bad number {t:?}", n + 1)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(format!(
            "line {}: expected {expected} values, found {}",
            n + 1,
            values.len()
        ));
    }
    Ok(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.1,
            batch_size: 32,
            shuffle: true,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                "learning_rate",
                self.learning_rate,
                "must be finite and >= 0",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", 0, "must be >= 1"));
        }
        Ok(())
    }
}

/// One SGD pass over `ids`.
///
/// The ids are sorted, then shuffled with `rng` when `sgd.shuffle` is set, so
/// the visiting order depends only on the id set and the stream. Logits from
/// each batch's forward pass (taken before that batch's update) are recorded
/// into `store` under `epoch`. Returns the mean per-sample loss.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut DenseModel,
    dataset: &Dataset,
    ids: &[SampleId],
    sgd: &SgdConfig,
    rng: &mut R,
    store: Option<&mut LogitStore>,
    ledger: &mut StepLedger,
    epoch: usize,
) -> Result<f64> {
    sgd.validate()?;
    if ids.is_empty() {
        return Err(Error::Empty("train_epoch needs at least one sample"));
    }
    let mut order = ids.to_vec();
    order.sort_unstable();
    if sgd.shuffle {
        order.shuffle(rng);
    }
    let mut store = store;
    let mut loss_sum = 0.0;
    for chunk in order.chunks(sgd.batch_size) {
        let batch = chunk
            .iter()
            .map(|&id| dataset.sample(id))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads, logits) = model.loss_grad_logits(&batch)?;
        loss_sum += loss * chunk.len() as f64;
        if let Some(store) = store.as_deref_mut() {
            for (&id, l) in chunk.iter().zip(&logits) {
                store.record_logits(id, l, epoch)?;
            }
        }
        if sgd.learning_rate != 0.0 {
            model.apply_gradients(&grads, sgd.learning_rate);
        }
    }
    ledger.charge_training(epoch, order.len() as u64);
    Ok(loss_sum / order.len() as f64)
}

/// Fraction of `ids` whose argmax logit equals the label. Ties in the logits
/// resolve to the lowest class index.
pub fn evaluate(
    model: &DenseModel,
    dataset: &Dataset,
    ids: &[SampleId],
    counter: &mut EvalCounter,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Empty("evaluate needs at least one sample"));
    }
    let mut correct = 0usize;
    for &id in ids {
        let (x, label) = dataset.sample(id)?;
        let logits = model.forward(x)?;
        if argmax(&logits) == label {
            correct += 1;
        }
    }
    counter.forwards += ids.len() as u64;
    Ok(correct as f64 / ids.len() as f64)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

//! Fully connected ReLU classifier with hand-written forward and backward
//! passes, softmax cross-entropy, and plain SGD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Layout, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input width, hidden widths, then class count.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let spec = NetworkSpec {
            layer_sizes,
            activation: Activation::Relu,
            bias: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    /// Segment layout: `fc{i}.weight` (out x in, row-major) then `fc{i}.bias`.
    pub fn layout(&self) -> Layout {
        let mut parts = Vec::new();
        for (i, pair) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            parts.push((format!("fc{}.weight", i + 1), fan_in * fan_out));
            if self.bias {
                parts.push((format!("fc{}.bias", i + 1), fan_out));
            }
        }
        Layout::from_lengths(parts)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total_len()
    }
}

/// A mini-batch (or any labelled set of rows).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: ParamVector,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        ParamVector::zeros(layout).check_compatible(&params)?;
        Ok(Network { spec, params })
    }
}

/// Uniform fan-in initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(spec.layout());
    let mut offset = 0;
    let values = params.values_mut();
    for pair in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in &mut values[offset..offset + fan_in * fan_out] {
            *v = rng.random_range(-bound..=bound);
        }
        offset += fan_in * fan_out;
        if spec.bias {
            offset += fan_out;
        }
    }
    params
}

struct LayerView<'a> {
    weight: &'a [f64],
    bias: Option<&'a [f64]>,
    fan_in: usize,
    fan_out: usize,
}

fn layers<'a>(spec: &NetworkSpec, params: &'a ParamVector) -> Vec<LayerView<'a>> {
    let values = params.values();
    let mut offset = 0;
    spec.layer_sizes
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight = &values[offset..offset + fan_in * fan_out];
            offset += fan_in * fan_out;
            let bias = spec.bias.then(|| {
                let b = &values[offset..offset + fan_out];
                offset += fan_out;
                b
            });
            LayerView {
                weight,
                bias,
                fan_in,
                fan_out,
            }
        })
        .collect()
}

fn check_inputs(spec: &NetworkSpec, inputs: &Matrix, labels: &[usize]) -> Result<()> {
    if inputs.cols() != spec.input_size() {
        return Err(Error::Dimension(format!(
            "network expects {} input features, batch has {}",
            spec.input_size(),
            inputs.cols()
        )));
    }
    if inputs.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} input rows but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= spec.class_count()) {
        return Err(Error::Dimension(format!(
            "label {bad} out of range for {} classes",
            spec.class_count()
        )));
    }
    Ok(())
}

/// Pre-activations of every layer; `pre[l]` is the output of layer `l` before ReLU.
fn forward_pass(spec: &NetworkSpec, params: &ParamVector, inputs: &Matrix) -> Vec<Matrix> {
    let views = layers(spec, params);
    let mut pre: Vec<Matrix> = Vec::with_capacity(views.len());
    for (l, layer) in views.iter().enumerate() {
        let input = if l == 0 { inputs } else { &pre[l - 1] };
        let mut z = Matrix::zeros(input.rows(), layer.fan_out);
        for i in 0..input.rows() {
            let x = input.row(i);
            let zi = z.row_mut(i);
            for (o, out) in zi.iter_mut().enumerate() {
                let w = &layer.weight[o * layer.fan_in..(o + 1) * layer.fan_in];
                let dot = if l == 0 {
                    dot(w, x)
                } else {
                    w.iter().zip(x).map(|(a, b)| a * b.max(0.0)).sum()
                };
                *out = dot + layer.bias.map_or(0.0, |b| b[o]);
            }
        }
        pre.push(z);
    }
    pre
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and argmax accuracy on raw rows.
pub fn loss_and_accuracy(
    spec: &NetworkSpec,
    params: &ParamVector,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<(f64, f64)> {
    check_inputs(spec, inputs, labels)?;
    let pre = forward_pass(spec, params, inputs);
    let logits = pre.last().expect("at least one layer");
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        loss += log_sum_exp(row) - row[label];
        if argmax(row) == label {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn forward_loss(net: &Network, batch: &Batch) -> Result<(f64, f64)> {
    loss_and_accuracy(&net.spec, &net.params, &batch.inputs, &batch.labels)
}

/// Gradient of the mean cross-entropy with respect to every parameter.
pub fn gradient(
    spec: &NetworkSpec,
    params: &ParamVector,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<ParamVector> {
    check_inputs(spec, inputs, labels)?;
    let pre = forward_pass(spec, params, inputs);
    let views = layers(spec, params);
    let n = labels.len();
    let scale = 1.0 / n as f64;

    // dL/dz for the output layer: (softmax - onehot) / n
    let mut dz = pre.last().expect("at least one layer").clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = dz.row_mut(i);
        let lse = log_sum_exp(row);
        for z in row.iter_mut() {
            *z = (*z - lse).exp() * scale;
        }
        row[label] -= scale;
    }

    let mut grad = ParamVector::zeros(spec.layout());
    let mut offsets = Vec::with_capacity(views.len());
    let mut offset = 0;
    for layer in &views {
        offsets.push(offset);
        offset += layer.fan_in * layer.fan_out + if spec.bias { layer.fan_out } else { 0 };
    }

    for l in (0..views.len()).rev() {
        let layer = &views[l];
        let (fan_in, fan_out) = (layer.fan_in, layer.fan_out);
        let g = grad.values_mut();
        let (gw, rest) = g[offsets[l]..].split_at_mut(fan_in * fan_out);
        for i in 0..n {
            let dzi = dz.row(i);
            for (o, &d) in dzi.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                if l == 0 {
                    for (w, x) in row.iter_mut().zip(inputs.row(i)) {
                        *w += d * x;
                    }
                } else {
                    for (w, z) in row.iter_mut().zip(pre[l - 1].row(i)) {
                        *w += d * z.max(0.0);
                    }
                }
            }
        }
        if spec.bias {
            let gb = &mut rest[..fan_out];
            for i in 0..n {
                for (b, d) in gb.iter_mut().zip(dz.row(i)) {
                    *b += d;
                }
            }
        }
        if l == 0 {
            break;
        }
        // propagate through the weights and the ReLU of the previous layer
        let prev = &pre[l - 1];
        let mut dprev = Matrix::zeros(n, fan_in);
        for i in 0..n {
            let out = dprev.row_mut(i);
            for (o, &d) in dz.row(i).iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let w = &layer.weight[o * fan_in..(o + 1) * fan_in];
                for (acc, wv) in out.iter_mut().zip(w) {
                    *acc += d * wv;
                }
            }
            for (acc, z) in out.iter_mut().zip(prev.row(i)) {
                if *z <= 0.0 {
                    *acc = 0.0;
                }
            }
        }
        dz = dprev;
    }
    Ok(grad)
}

pub fn backward(net: &Network, batch: &Batch) -> Result<ParamVector> {
    gradient(&net.spec, &net.params, &batch.inputs, &batch.labels)
}

/// `params - eta * (grad + lambda * params)`.
pub fn sgd_step(
    params: &ParamVector,
    grad: &ParamVector,
    eta: f64,
    lambda: f64,
) -> Result<ParamVector> {
    params.check_compatible(grad)?;
    let values = params
        .values()
        .iter()
        .zip(grad.values())
        .map(|(&w, &g)| w - eta * (g + lambda * w))
        .collect();
    ParamVector::new(params.layout().clone(), values)
        .map_err(|_| Error::DegenerateData("SGD step produced a non-finite parameter".into()))
}

/// Gradient of the proximal penalty `(mu/2) * ||params - anchor||^2`.
pub fn prox_gradient_addend(
    params: &ParamVector,
    anchor: &ParamVector,
    mu: f64,
) -> Result<ParamVector> {
    params.check_compatible(anchor)?;
    let values = params
        .values()
        .iter()
        .zip(anchor.values())
        .map(|(&w, &a)| mu * (w - a))
        .collect();
    ParamVector::new(params.layout().clone(), values)
}

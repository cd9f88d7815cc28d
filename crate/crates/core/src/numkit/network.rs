use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layer::Layer;
use super::tensor::{cross_entropy, softmax, Tensor};
use crate::error::{Error, Result};
use crate::seed;

/// Samples per parallel gradient work item.
const GRAD_CHUNK: usize = 8;

/// A feed-forward chain of layers.
///
/// `feature_index` names the layer whose output is reported as the backbone
/// features by [`Network::forward`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    feature_index: usize,
}

/// Per-sample activations: `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always holds the input")
    }
}

/// Gradients aligned with [`Network::params`], grouped per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Vec<Tensor>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    l.params()
                        .iter()
                        .map(|p| Tensor::zeros(p.shape()))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flatten()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_scaled(&mut self, other: &GradientSet, factor: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += factor * y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// All gradient values concatenated in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Layer-by-layer network construction with seeded fan-in-scaled initialization.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    shape: Vec<usize>,
    layers: Vec<Layer>,
    feature_index: Option<usize>,
    seed: u64,
}

impl NetworkBuilder {
    fn init(&self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = seed::stream(self.seed, "init", self.layers.len() as u64);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::from_vec(shape, data).expect("shape product matches")
    }

    fn push(mut self, layer: Layer) -> Result<Self> {
        self.shape = layer.output_shape(&self.shape)?;
        self.layers.push(layer);
        Ok(self)
    }

    pub fn conv(self, out_channels: usize, stride: usize) -> Result<Self> {
        let Some(&c) = self.shape.first().filter(|_| self.shape.len() == 3) else {
            return Err(Error::Shape(format!(
                "conv needs [C,H,W], got {:?}",
                self.shape
            )));
        };
        let weight = self.init(&[out_channels, c, 3, 3], c * 9);
        let bias = Tensor::zeros(&[out_channels]);
        self.push(Layer::Conv3x3 {
            weight,
            bias,
            stride,
        })
    }

    pub fn dense(self, out: usize) -> Result<Self> {
        let fan_in: usize = self.shape.iter().product();
        let weight = self.init(&[out, fan_in], fan_in);
        self.push(Layer::Dense {
            weight,
            bias: Tensor::zeros(&[out]),
        })
    }

    /// Dense layer with all-zero weights and biases.
    pub fn dense_zero(self, out: usize) -> Result<Self> {
        let fan_in: usize = self.shape.iter().product();
        self.push(Layer::Dense {
            weight: Tensor::zeros(&[out, fan_in]),
            bias: Tensor::zeros(&[out]),
        })
    }

    pub fn relu(self) -> Result<Self> {
        self.push(Layer::Relu)
    }

    pub fn avg_pool(self) -> Result<Self> {
        self.push(Layer::AvgPool2)
    }

    pub fn global_avg_pool(self) -> Result<Self> {
        self.push(Layer::GlobalAvgPool)
    }

    /// Marks the most recently added layer as the feature output.
    pub fn features_here(mut self) -> Self {
        self.feature_index = Some(self.layers.len().saturating_sub(1));
        self
    }

    pub fn build(self) -> Result<Network> {
        let feature_index = self
            .feature_index
            .unwrap_or(self.layers.len().saturating_sub(1));
        Network::new(self.input_shape, self.layers, feature_index)
    }
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, feature_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        if feature_index >= layers.len() {
            return Err(Error::InvalidArgument(format!(
                "feature index {feature_index} out of range for {} layers",
                layers.len()
            )));
        }
        let mut shape = input_shape.clone();
        for l in &layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(Network {
            input_shape,
            layers,
            feature_index,
        })
    }

    pub fn builder(input_shape: &[usize], seed: u64) -> NetworkBuilder {
        NetworkBuilder {
            input_shape: input_shape.to_vec(),
            shape: input_shape.to_vec(),
            layers: Vec::new(),
            feature_index: None,
            seed,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn feature_index(&self) -> usize {
        self.feature_index
    }

    /// Per-sample shape of every activation, input first.
    pub fn activation_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.clone()];
        for l in &self.layers {
            let next = l
                .output_shape(shapes.last().unwrap())
                .expect("validated at construction");
            shapes.push(next);
        }
        shapes
    }

    pub fn output_len(&self) -> usize {
        self.activation_shapes().last().unwrap().iter().product()
    }

    pub fn feature_len(&self) -> usize {
        self.activation_shapes()[self.feature_index + 1]
            .iter()
            .product()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Appends layers after the current output; the feature index is unchanged.
    pub fn extended(&self, extra: Vec<Layer>) -> Result<Network> {
        let mut layers = self.layers.clone();
        layers.extend(extra);
        Network::new(self.input_shape.clone(), layers, self.feature_index)
    }

    /// Keeps layers `0..=upto`; the feature index is clamped to the new end.
    pub fn truncated(&self, upto: usize) -> Result<Network> {
        let layers = self.layers[..=upto.min(self.layers.len() - 1)].to_vec();
        let fi = self.feature_index.min(layers.len() - 1);
        Network::new(self.input_shape.clone(), layers, fi)
    }

    /// Full per-sample forward pass.
    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input of length {} does not match network input {:?}",
                x.len(),
                self.input_shape
            )));
        }
        let shapes = self.activation_shapes();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let next = l.forward(&shapes[i], &acts[i]);
            acts.push(next);
        }
        if !acts.last().unwrap().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("forward pass".into()));
        }
        Ok(Trace { acts })
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != self.input_shape[..]
        {
            return Err(Error::Shape(format!(
                "batch {:?} does not match network input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Returns `(features, logits)` for every row of `batch`.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_batch(batch)?;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..batch.rows())
            .into_par_iter()
            .map(|i| {
                let mut t = self.trace(batch.row(i))?;
                let logits = t.acts.pop().unwrap();
                let f = if self.feature_index + 1 == t.acts.len() {
                    logits.clone()
                } else {
                    t.acts.swap_remove(self.feature_index + 1)
                };
                Ok((f, logits))
            })
            .collect::<Result<_>>()?;
        let (feats, logits): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let shapes = self.activation_shapes();
        Ok((
            Tensor::stack(&shapes[self.feature_index + 1], &feats)?,
            Tensor::stack(shapes.last().unwrap(), &logits)?,
        ))
    }

    /// Output of layer `layer` for every row of `batch`, flattened per row.
    pub fn activations_at(&self, batch: &Tensor, layer: usize) -> Result<Tensor> {
        self.check_batch(batch)?;
        if layer >= self.layers.len() {
            return Err(Error::InvalidArgument(format!("no layer {layer}")));
        }
        let head = self.truncated(layer)?;
        let rows: Vec<Vec<f64>> = (0..batch.rows())
            .into_par_iter()
            .map(|i| head.trace(batch.row(i)).map(|mut t| t.acts.pop().unwrap()))
            .collect::<Result<_>>()?;
        let width = rows.first().map_or(0, |r| r.len());
        Tensor::stack(&[width], &rows)
    }

    /// Backpropagates `d_output` through one traced sample, accumulating into `grads`.
    ///
    /// Layers below `first_trainable` receive no parameter gradient and the
    /// pass stops there.
    pub fn backward_trace(
        &self,
        trace: &Trace,
        d_output: &[f64],
        grads: &mut GradientSet,
        first_trainable: usize,
    ) {
        let shapes = self.activation_shapes();
        let mut dy = d_output.to_vec();
        for i in (first_trainable..self.layers.len()).rev() {
            let need_input = i > first_trainable;
            let dx = self.layers[i].backward(
                &shapes[i],
                &trace.acts[i],
                &trace.acts[i + 1],
                &dy,
                &mut grads.layers[i],
                need_input,
            );
            match dx {
                Some(d) => dy = d,
                None => break,
            }
        }
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, GradientSet)> {
        self.loss_and_grad_from(batch, labels, 0)
    }

    pub(crate) fn loss_and_grad_from(
        &self,
        batch: &Tensor,
        labels: &[usize],
        first_trainable: usize,
    ) -> Result<(f64, GradientSet)> {
        self.check_batch(batch)?;
        if labels.len() != batch.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                batch.rows()
            )));
        }
        let classes = self.output_len();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let n = batch.rows().max(1) as f64;
        // Fixed-size chunks summed in order keep results independent of the thread count.
        let parts: Vec<(f64, GradientSet)> = labels
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut grads = GradientSet::zeros_like(self);
                let mut loss = 0.0;
                for (j, &y) in chunk.iter().enumerate() {
                    let t = self.trace(batch.row(c * GRAD_CHUNK + j))?;
                    let z = t.output();
                    loss += cross_entropy(z, y);
                    let mut dz = softmax(z);
                    dz[y] -= 1.0;
                    dz.iter_mut().for_each(|v| *v /= n);
                    self.backward_trace(&t, &dz, &mut grads, first_trainable);
                }
                Ok((loss, grads))
            })
            .collect::<Result<_>>()?;
        let mut grads = GradientSet::zeros_like(self);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            grads.add_scaled(g, 1.0);
        }
        if !grads.iter().all(|t| t.all_finite()) {
            return Err(Error::NonFinite("backward pass".into()));
        }
        Ok((loss / n, grads))
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let (_, logits) = self.forward(batch)?;
        let classes = self.output_len();
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            total += cross_entropy(logits.row(i), y);
        }
        Ok(total / labels.len().max(1) as f64)
    }

    /// Predicted class (argmax of logits) per row.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let (_, logits) = self.forward(batch)?;
        Ok((0..logits.rows())
            .map(|i| super::tensor::argmax(logits.row(i)))
            .collect())
    }
}

/// Gradient of the mean cross-entropy of `net` over `batch`.
pub fn backward(net: &Network, batch: &Tensor, labels: &[usize]) -> Result<GradientSet> {
    net.loss_and_grad(batch, labels).map(|(_, g)| g)
}

/// Largest relative discrepancy between analytic and central-difference gradients.
///
/// The relative error of each entry is `|a - n| / max(|a|, |n|, 1e-3)`, so
/// entries with near-zero gradient are compared in absolute terms.
pub fn finite_diff_check(net: &Network, batch: &Tensor, labels: &[usize], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "eps {eps} outside (0, 1e-2]"
        )));
    }
    let analytic = backward(net, batch, labels)?.flatten();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut k = 0;
    let counts: Vec<usize> = net.params().iter().map(|t| t.len()).collect();
    for (p, &count) in counts.iter().enumerate() {
        for j in 0..count {
            let orig = probe.params()[p].data()[j];
            probe.params_mut()[p].data_mut()[j] = orig + eps;
            let up = probe.loss(batch, labels)?;
            probe.params_mut()[p].data_mut()[j] = orig - eps;
            let down = probe.loss(batch, labels)?;
            probe.params_mut()[p].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
            k += 1;
        }
    }
    Ok(worst)
}

//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! All weights and biases of a [`DenseNet`] live in one flat buffer (the
//! parameter bundle). Gradients come back as a [`GradBundle`] with the same
//! layout, so optimizers work on plain slices.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub const LEAKY: Activation = Activation::LeakyRelu { slope: 0.2 };

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Layer widths and activations; `input` is the width of the first layer's input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: usize,
    pub layers: Vec<(usize, Activation)>,
}

impl NetSpec {
    /// `hidden` layers with a shared activation followed by an output head.
    pub fn mlp(input: usize, hidden: &[usize], hidden_act: Activation, output: usize, head: Activation) -> Self {
        let mut layers: Vec<(usize, Activation)> = hidden.iter().map(|&h| (h, hidden_act)).collect();
        layers.push((output, head));
        Self { input, layers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weight_offset: usize,
    bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Gradient of a scalar loss with respect to every parameter, aligned with
/// [`DenseNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle(pub Vec<f64>);

impl GradBundle {
    pub fn zeros(len: usize) -> Self {
        GradBundle(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradBundle, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }
}

/// Activations kept by [`DenseNet::forward`]; `activations[0]` is the input
/// batch and the last entry is the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().expect("cache holds at least the input")
    }
}

impl DenseNet {
    /// Xavier-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for shape in net.shapes.clone() {
            let bound = xavier_bound(shape.inputs, shape.outputs);
            let w = &mut net.params[shape.weight_offset..shape.bias_offset];
            for x in w.iter_mut() {
                *x = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(spec: &NetSpec) -> Result<Self> {
        if spec.input == 0 || spec.layers.is_empty() {
            return Err(Error::InvalidParam("network needs a positive input width and at least one layer".into()));
        }
        let mut shapes = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        let mut inputs = spec.input;
        for &(outputs, activation) in &spec.layers {
            if outputs == 0 {
                return Err(Error::InvalidParam("layer width must be positive".into()));
            }
            if let Activation::LeakyRelu { slope } = activation {
                if !(slope.is_finite() && slope >= 0.0) {
                    return Err(Error::InvalidParam(format!("leaky relu slope must be >= 0, got {slope}")));
                }
            }
            let weight_offset = offset;
            let bias_offset = weight_offset + inputs * outputs;
            offset = bias_offset + outputs;
            shapes.push(LayerShape { inputs, outputs, activation, weight_offset, bias_offset });
            inputs = outputs;
        }
        Ok(Self { shapes, params: vec![0.0; offset] })
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec {
            input: self.input_width(),
            layers: self.shapes.iter().map(|s| (s.outputs, s.activation)).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.shapes.last().map(|s| s.outputs).unwrap_or(0)
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.params.len()),
                got: params.len().to_string(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = self.shapes[layer];
        ArrayView2::from_shape((s.outputs, s.inputs), &self.params[s.weight_offset..s.bias_offset])
            .expect("weight block matches layer shape")
    }

    fn bias(&self, layer: usize) -> &[f64] {
        let s = self.shapes[layer];
        &self.params[s.bias_offset..s.bias_offset + s.outputs]
    }

    /// Mutable `(weights, bias)` of one layer, weights row-major `outputs x inputs`.
    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let s = self.shapes[layer];
        let block = &mut self.params[s.weight_offset..s.bias_offset + s.outputs];
        block.split_at_mut(s.inputs * s.outputs)
    }

    pub fn forward(&self, batch: &Array2<f64>) -> Result<ForwardCache> {
        if batch.ncols() != self.input_width() {
            return Err(Error::Shape {
                expected: format!("{} input columns", self.input_width()),
                got: batch.ncols().to_string(),
            });
        }
        let mut activations = Vec::with_capacity(self.shapes.len() + 1);
        activations.push(batch.clone());
        for (i, shape) in self.shapes.iter().enumerate() {
            let prev = activations.last().expect("non-empty");
            let mut z = prev.dot(&self.weights(i).t());
            let b = self.bias(i);
            for mut row in z.rows_mut() {
                for (x, &bj) in row.iter_mut().zip(b) {
                    *x = shape.activation.apply(*x + bj);
                }
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Network output only.
    pub fn predict(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(batch)?.into_output())
    }

    /// Parameter gradient of the loss whose derivative with respect to the
    /// outputs is `output_grad`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> Result<GradBundle> {
        let (grads, _) = self.backprop(cache, output_grad, true, false)?;
        Ok(grads.expect("parameter gradients requested"))
    }

    /// Parameter gradient and gradient with respect to the input batch.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        output_grad: &Array2<f64>,
    ) -> Result<(GradBundle, Array2<f64>)> {
        let (grads, input) = self.backprop(cache, output_grad, true, true)?;
        Ok((grads.expect("requested"), input.expect("requested")))
    }

    /// Gradient with respect to the input batch only.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> Result<Array2<f64>> {
        let (_, input) = self.backprop(cache, output_grad, false, true)?;
        Ok(input.expect("requested"))
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        output_grad: &Array2<f64>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<GradBundle>, Option<Array2<f64>>)> {
        if cache.activations.len() != self.shapes.len() + 1 {
            return Err(Error::Shape {
                expected: format!("cache with {} activations", self.shapes.len() + 1),
                got: cache.activations.len().to_string(),
            });
        }
        let out = cache.output();
        if out.dim() != output_grad.dim() {
            return Err(Error::Shape {
                expected: format!("{:?}", out.dim()),
                got: format!("{:?}", output_grad.dim()),
            });
        }
        let mut grads = want_params.then(|| GradBundle::zeros(self.params.len()));
        let mut upstream = output_grad.clone();
        for (i, shape) in self.shapes.iter().enumerate().rev() {
            let y = &cache.activations[i + 1];
            let act = shape.activation;
            let mut delta = upstream;
            ndarray::Zip::from(&mut delta).and(y).for_each(|d, &yv| *d *= act.derivative_from_output(yv));
            if let Some(g) = grads.as_mut() {
                let x = &cache.activations[i];
                let gw = delta.t().dot(x);
                let gb: Array1<f64> = delta.sum_axis(Axis(0));
                let gw_slice = gw.as_standard_layout();
                g.0[shape.weight_offset..shape.bias_offset]
                    .copy_from_slice(gw_slice.as_slice().expect("standard layout"));
                g.0[shape.bias_offset..shape.bias_offset + shape.outputs]
                    .copy_from_slice(gb.as_slice().expect("contiguous"));
            }
            if i == 0 && !want_input {
                return Ok((grads, None));
            }
            upstream = delta.dot(&self.weights(i));
        }
        Ok((grads, Some(upstream)))
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NetSnapshot::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: NetSnapshot = serde_json::from_str(s)?;
        snap.try_into()
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Layer-list JSON form of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub layers: Vec<LayerSnapshot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub activation: Activation,
    /// `outputs` rows of `inputs` weights each.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl From<&DenseNet> for NetSnapshot {
    fn from(net: &DenseNet) -> Self {
        let layers = net
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| LayerSnapshot {
                activation: s.activation,
                weights: net.weights(i).rows().into_iter().map(|r| r.to_vec()).collect(),
                bias: net.bias(i).to_vec(),
            })
            .collect();
        NetSnapshot { layers }
    }
}

impl TryFrom<NetSnapshot> for DenseNet {
    type Error = Error;

    fn try_from(snap: NetSnapshot) -> Result<Self> {
        let first = snap.layers.first().ok_or_else(|| Error::Config("network has no layers".into()))?;
        let input = first.weights.first().map(|r| r.len()).unwrap_or(0);
        let spec = NetSpec {
            input,
            layers: snap.layers.iter().map(|l| (l.bias.len(), l.activation)).collect(),
        };
        let mut net = DenseNet::zeros(&spec)?;
        let mut flat = Vec::with_capacity(net.num_params());
        for (i, l) in snap.layers.iter().enumerate() {
            let s = net.shapes[i];
            if l.weights.len() != s.outputs || l.weights.iter().any(|r| r.len() != s.inputs) {
                return Err(Error::Shape {
                    expected: format!("layer {i}: {}x{}", s.outputs, s.inputs),
                    got: format!("{} rows", l.weights.len()),
                });
            }
            l.weights.iter().for_each(|r| flat.extend_from_slice(r));
            flat.extend_from_slice(&l.bias);
        }
        if flat.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("network snapshot has non-finite parameters".into()));
        }
        net.set_params(&flat)?;
        Ok(net)
    }
}

/// Central-difference gradient of `loss(net.forward(batch))` with respect to
/// every parameter. Uses only forward evaluations.
pub fn finite_diff_gradient(
    net: &DenseNet,
    batch: &Array2<f64>,
    loss: impl Fn(&Array2<f64>) -> f64,
    h: f64,
) -> Result<GradBundle> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidParam(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = net.clone();
    let mut g = GradBundle::zeros(net.num_params());
    for i in 0..net.num_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = loss(&probe.predict(batch)?);
        probe.params[i] = orig - h;
        let down = loss(&probe.predict(batch)?);
        probe.params[i] = orig;
        g.0[i] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Elu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `x` and the
    /// activation output `a = apply(x)`.
    #[inline]
    pub fn derivative(self, x: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            other => Err(crate::error::arg_err(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths start with the input width; one affine map connects each
/// consecutive pair and a final affine map produces `output_dim` values.
/// Hidden layers use `activation`; the output is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, output_dim: usize) -> Result<Self> {
        let spec = MlpSpec {
            layer_widths,
            activation,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(shape_err("an MLP needs at least one layer"));
        }
        if self.layer_widths.contains(&0) || self.output_dim == 0 {
            return Err(shape_err("all layer widths must be at least 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    /// (fan_in, fan_out) for each affine map.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = self.layer_widths.clone();
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine map; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerRepr", try_from = "LayerRepr")]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Layer> for LayerRepr {
    fn from(layer: Layer) -> Self {
        let (rows, cols) = layer.weights.dim();
        LayerRepr {
            rows,
            cols,
            weights: layer.weights.iter().copied().collect(),
            bias: layer.bias.to_vec(),
        }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = String;

    fn try_from(repr: LayerRepr) -> std::result::Result<Self, String> {
        if repr.bias.len() != repr.rows {
            return Err(format!("bias length {} != rows {}", repr.bias.len(), repr.rows));
        }
        let weights = Array2::from_shape_vec((repr.rows, repr.cols), repr.weights)
            .map_err(|e| format!("weight array: {e}"))?;
        Ok(Layer {
            weights,
            bias: Array1::from(repr.bias),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpParams {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(fan_in, fan_out)| Layer {
                    weights: Array2::zeros((fan_out, fan_in)),
                    bias: Array1::zeros(fan_out),
                })
                .collect(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let (fan_out, fan_in) = layer.weights.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Layer-by-layer, weights (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape_err(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|w| w.is_finite()) && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|&w| w == 0.0) && l.bias.iter().all(|&b| b == 0.0))
    }

    fn matches(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    pub(crate) fn check_same_shape(&self, other: &MlpParams) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(shape_err("parameter shapes do not match"))
        }
    }
}

/// Intermediate values of a batched forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each affine map.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        spec.validate()?;
        if !MlpParams::zeros(&spec).matches(&params) {
            return Err(shape_err("parameters are inconsistent with the MLP spec"));
        }
        Ok(Mlp { spec, params })
    }

    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = MlpParams::init(&spec, rng);
        Ok(Mlp { spec, params })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(shape_err(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut x = Array1::from(input.to_vec());
        let last = self.params.layers.len() - 1;
        for (i, layer) in self.params.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&x);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| self.spec.activation.apply(v));
            }
            x = z;
        }
        Ok(x.to_vec())
    }

    /// Rows of `input` are samples.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if input.ncols() != self.input_dim() {
            return Err(shape_err(format!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let act = self.spec.activation;
        let last = self.params.layers.len() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last);
        let mut x = input.to_owned();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            inputs.push(x);
            if i < last {
                let a = z.mapv(|v| act.apply(v));
                pre.push(z);
                x = a;
            } else {
                x = z;
            }
        }
        if !x.is_standard_layout() {
            x = x.as_standard_layout().into_owned();
        }
        Ok((x, ForwardCache { inputs, pre }))
    }

    /// Gradient of `sum(output * upstream)` with respect to every parameter,
    /// plus the gradient with respect to the input rows.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(MlpParams, Array2<f64>)> {
        let n_layers = self.params.layers.len();
        if upstream.ncols() != self.output_dim() || upstream.nrows() != cache.inputs[0].nrows() {
            return Err(shape_err(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.nrows(),
                upstream.ncols(),
                cache.inputs[0].nrows(),
                self.output_dim()
            )));
        }
        let act = self.spec.activation;
        let mut grads = self.params.zeros_like();
        let mut delta = upstream.to_owned();
        for i in (0..n_layers).rev() {
            let layer = &self.params.layers[i];
            grads.layers[i].weights = delta.t().dot(&cache.inputs[i]);
            grads.layers[i].bias = delta.sum_axis(Axis(0));
            let mut d_input = delta.dot(&layer.weights);
            if i > 0 {
                let z = &cache.pre[i - 1];
                let a = &cache.inputs[i];
                ndarray::Zip::from(&mut d_input)
                    .and(z)
                    .and(a)
                    .for_each(|g, &z, &a| *g *= act.derivative(z, a));
            }
            delta = d_input;
        }
        Ok((grads, delta))
    }

    /// Single-sample gradient of `output . upstream`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<MlpParams> {
        if upstream.len() != self.output_dim() {
            return Err(shape_err(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if input.len() != self.input_dim() {
            return Err(shape_err(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        let (_, cache) = self.forward_batch(x.view())?;
        let up = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).unwrap();
        Ok(self.backward_batch(&cache, up.view())?.0)
    }
}

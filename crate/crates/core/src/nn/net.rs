use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::util::Fnv64;

/// Element-wise activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the post-activation output. For relu
    /// the subgradient at 0 is taken as 0.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    /// Row-major `[out, in]`.
    pub(crate) weights: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    pub(crate) activation: Activation,
}

impl Layer {
    fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Array2<f64>,
    /// Post-activation output of every layer, in order.
    outputs: Vec<Array2<f64>>,
}

/// Per-layer gradients, shape-congruent with the network they came from.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients for every layer of a [`DenseNet`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub layers: Vec<LayerGradients>,
}

impl GradientSet {
    /// All-zero gradients shaped like `net`.
    pub fn zeros_like(net: &DenseNet) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0_f64;
        for l in &self.layers {
            for &v in l.weights.iter().chain(l.bias.iter()) {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// A multi-layer perceptron over `f64` with cached forward activations.
///
/// `forward` records the activations needed by `backward`; `predict` is the
/// read-only variant for inference. Any parameter mutation clears the cache.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    cache: Option<ForwardCache>,
}

impl DenseNet {
    /// Builds a network from `(width, activation)` layer specs. Relu layers
    /// get He-uniform init, identity layers Xavier-uniform, biases zero.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        spec: &[(usize, Activation)],
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(CoreError::Config("input_dim must be positive".into()));
        }
        if spec.is_empty() {
            return Err(CoreError::Config("network needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(spec.len());
        let mut in_dim = input_dim;
        for &(out_dim, activation) in spec {
            if out_dim == 0 {
                return Err(CoreError::Config("layer width must be positive".into()));
            }
            let limit = match activation {
                Activation::Relu => (6.0 / in_dim as f64).sqrt(),
                Activation::Identity => (6.0 / (in_dim + out_dim) as f64).sqrt(),
            };
            let mut weights = Array2::zeros((out_dim, in_dim));
            for w in weights.iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
            layers.push(Layer {
                weights,
                bias: Array1::zeros(out_dim),
                activation,
            });
            in_dim = out_dim;
        }
        Ok(DenseNet { layers, cache: None })
    }

    /// Standard MLP: relu hidden layers, identity output.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut spec: Vec<(usize, Activation)> =
            hidden.iter().map(|&w| (w, Activation::Relu)).collect();
        spec.push((output_dim, Activation::Identity));
        DenseNet::new(input_dim, &spec, rng)
    }

    /// Builds a network directly from `(weights, bias, activation)` triples,
    /// validating the dimension chain. Used by checkpoint loading and test
    /// fixtures.
    pub fn from_layers(parts: Vec<(Array2<f64>, Array1<f64>, Activation)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(CoreError::Config("network needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(parts.len());
        let mut prev_out: Option<usize> = None;
        for (i, (weights, bias, activation)) in parts.into_iter().enumerate() {
            if weights.nrows() != bias.len() {
                return Err(CoreError::Shape(format!(
                    "layer {i}: weight rows {} != bias len {}",
                    weights.nrows(),
                    bias.len()
                )));
            }
            if let Some(prev) = prev_out {
                if weights.ncols() != prev {
                    return Err(CoreError::Shape(format!(
                        "layer {i}: in dim {} != previous out dim {prev}",
                        weights.ncols()
                    )));
                }
            } else if weights.ncols() == 0 {
                return Err(CoreError::Config("input_dim must be positive".into()));
            }
            prev_out = Some(weights.nrows());
            layers.push(Layer {
                weights,
                bias,
                activation,
            });
        }
        Ok(DenseNet { layers, cache: None })
    }

    /// Architecture-only constructor with all parameters at zero.
    pub fn zeros(input_dim: usize, spec: &[(usize, Activation)]) -> Result<Self> {
        if input_dim == 0 {
            return Err(CoreError::Config("input_dim must be positive".into()));
        }
        if spec.is_empty() {
            return Err(CoreError::Config("network needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(spec.len());
        let mut in_dim = input_dim;
        for &(out_dim, activation) in spec {
            if out_dim == 0 {
                return Err(CoreError::Config("layer width must be positive".into()));
            }
            layers.push(Layer {
                weights: Array2::zeros((out_dim, in_dim)),
                bias: Array1::zeros(out_dim),
                activation,
            });
            in_dim = out_dim;
        }
        Ok(DenseNet { layers, cache: None })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(width, activation)` spec describing this architecture.
    pub fn layer_spec(&self) -> Vec<(usize, Activation)> {
        self.layers
            .iter()
            .map(|l| (l.out_dim(), l.activation))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(CoreError::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        if batch.nrows() == 0 {
            return Err(CoreError::Input("empty batch".into()));
        }
        if !batch.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Input("non-finite value in input batch".into()));
        }
        Ok(())
    }

    fn run(&self, batch: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = batch;
        for layer in &self.layers {
            let z = current.dot(&layer.weights.t()) + &layer.bias;
            let y = match layer.activation {
                Activation::Relu => z.mapv(|v| Activation::Relu.apply(v)),
                Activation::Identity => z,
            };
            outputs.push(y);
            current = outputs.last().expect("just pushed").view();
        }
        outputs
    }

    /// Forward pass over a batch `[B x input_dim]`, caching activations for a
    /// subsequent `backward`.
    pub fn forward(&mut self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        let outputs = self.run(batch);
        let out = outputs.last().expect("non-empty").clone();
        self.cache = Some(ForwardCache {
            input: batch.to_owned(),
            outputs,
        });
        Ok(out)
    }

    /// Read-only forward pass; does not touch the cache.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        Ok(self.run(batch).pop().expect("non-empty"))
    }

    /// Backpropagates `upstream` (the per-output partials of some scalar)
    /// through the cached forward pass. Returns the parameter gradients and
    /// the gradient with respect to the input batch.
    pub fn backward(&self, upstream: ArrayView2<f64>) -> Result<(GradientSet, Array2<f64>)> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            CoreError::State("backward called without a matching forward".into())
        })?;
        let last = cache.outputs.last().expect("non-empty");
        if upstream.dim() != last.dim() {
            return Err(CoreError::Shape(format!(
                "upstream shape {:?} does not match cached output {:?}",
                upstream.dim(),
                last.dim()
            )));
        }
        let mut grads_rev: Vec<LayerGradients> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = &cache.outputs[i];
            if let Activation::Relu = layer.activation {
                delta.zip_mut_with(y, |d, &yv| {
                    *d *= Activation::Relu.grad_from_output(yv);
                });
            }
            let input = if i == 0 {
                cache.input.view()
            } else {
                cache.outputs[i - 1].view()
            };
            let d_weights = delta.t().dot(&input);
            let d_bias = delta.sum_axis(Axis(0));
            let next_delta = delta.dot(&layer.weights);
            grads_rev.push(LayerGradients {
                weights: d_weights,
                bias: d_bias,
            });
            delta = next_delta;
        }
        grads_rev.reverse();
        Ok((GradientSet { layers: grads_rev }, delta))
    }

    /// Flattens all parameters in canonical order: layer-major, weights
    /// row-major, then bias.
    pub fn serialize_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    /// Restores parameters from the canonical flat order and clears the
    /// forward cache.
    pub fn deserialize_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CoreError::Shape(format!(
                "flat vector has {} values, network has {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Input("non-finite parameter value".into()));
        }
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = *it.next().expect("length checked");
            }
            for b in layer.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
        self.cache = None;
        Ok(())
    }

    /// FNV-1a over the canonical flat parameter bytes; used by the round
    /// loop's freeze assertions.
    pub fn param_checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        for layer in &self.layers {
            h.write_f64s(layer.weights.iter());
            h.write_f64s(layer.bias.iter());
        }
        h.finish()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

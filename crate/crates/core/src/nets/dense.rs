use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn param_len(&self) -> usize {
        self.weight_len() + self.outputs
    }
}

/// Per-layer activations recorded by a training forward pass.
#[derive(Debug, Clone)]
struct Trace {
    /// `inputs[l]` is the input vector of layer `l`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of every layer.
    pre: Vec<Vec<f64>>,
}

/// A chain of fully connected layers with all parameters in one flat buffer.
///
/// Layout per layer: the weight matrix (outputs x inputs, row-major) followed
/// by the bias vector.
#[derive(Debug, Clone)]
pub struct DenseNetwork {
    layers: Vec<LayerShape>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    cache: Option<Trace>,
}

impl PartialEq for DenseNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

fn offsets_for(layers: &[LayerShape]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut total = 0;
    for l in layers {
        offsets.push(total);
        total += l.param_len();
    }
    (offsets, total)
}

fn check_chain(layers: &[LayerShape]) -> Result<(), NetError> {
    if layers.is_empty() {
        return Err(NetError::Architecture("network has no layers".into()));
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].outputs != pair[1].inputs {
            return Err(NetError::Architecture(format!(
                "layer {i} emits {} values but layer {} expects {}",
                pair[0].outputs,
                i + 1,
                pair[1].inputs
            )));
        }
    }
    if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
        return Err(NetError::Architecture("zero-width layer".into()));
    }
    Ok(())
}

impl DenseNetwork {
    /// Builds a network `sizes[0] -> sizes[1] -> ... -> sizes[n]` with rectifier
    /// hidden layers and an identity output layer.
    ///
    /// Weights are drawn uniformly within fan-in bounds (sqrt(6/fan_in) for
    /// rectifier layers, sqrt(3/fan_in) for the linear output); biases start at 0.
    pub fn mlp<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, NetError> {
        if sizes.len() < 2 {
            return Err(NetError::Architecture("need at least input and output size".into()));
        }
        let n = sizes.len() - 1;
        let layers: Vec<LayerShape> = (0..n)
            .map(|i| LayerShape {
                inputs: sizes[i],
                outputs: sizes[i + 1],
                activation: if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Self::with_layers(layers, rng)
    }

    pub fn with_layers<R: Rng + ?Sized>(
        layers: Vec<LayerShape>,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        check_chain(&layers)?;
        let (offsets, total) = offsets_for(&layers);
        let mut params = vec![0.0; total];
        for (l, &off) in layers.iter().zip(&offsets) {
            let gain = match l.activation {
                Activation::Relu => 6.0,
                Activation::Identity => 3.0,
            };
            let bound = (gain / l.inputs as f64).sqrt();
            for w in &mut params[off..off + l.weight_len()] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(Self {
            layers,
            offsets,
            params,
            cache: None,
        })
    }

    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<f64>) -> Result<Self, NetError> {
        check_chain(&layers)?;
        let (offsets, total) = offsets_for(&layers);
        if params.len() != total {
            return Err(NetError::Dimension {
                what: "parameter buffer",
                expected: total,
                found: params.len(),
            });
        }
        Ok(Self {
            layers,
            offsets,
            params,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Named tensors `(name, shape, values)` in layer order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, (l, &off)) in self.layers.iter().zip(&self.offsets).enumerate() {
            let w_end = off + l.weight_len();
            out.push((
                format!("{i}.weight"),
                vec![l.outputs, l.inputs],
                &self.params[off..w_end],
            ));
            out.push((
                format!("{i}.bias"),
                vec![l.outputs],
                &self.params[w_end..w_end + l.outputs],
            ));
        }
        out
    }

    /// Zeroes the weights and bias of the last layer.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.len() - 1;
        let off = self.offsets[last];
        let len = self.layers[last].param_len();
        self.params[off..off + len].fill(0.0);
    }

    fn run(&self, input: &[f64], mut trace: Option<&mut Trace>) -> Result<Vec<f64>, NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::Dimension {
                what: "network input",
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        let mut x = input.to_vec();
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            let w = &self.params[off..off + l.weight_len()];
            let b = &self.params[off + l.weight_len()..off + l.param_len()];
            let pre: Vec<f64> = w
                .chunks_exact(l.inputs)
                .zip(b)
                .map(|(row, bias)| row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() + bias)
                .collect();
            let out = match l.activation {
                Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
                Activation::Identity => pre.clone(),
            };
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut x, out));
                t.pre.push(pre);
            } else {
                x = out;
            }
        }
        Ok(x)
    }

    /// Inference pass; does not touch the gradient cache.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.run(input, None)
    }

    /// Forward pass that records activations for a following [`backward`](Self::backward).
    pub fn forward_train(&mut self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let out = self.run(input, Some(&mut trace))?;
        self.cache = Some(trace);
        Ok(out)
    }

    /// Reverse-mode pass for the most recent `forward_train`.
    ///
    /// Parameter gradients are *added* into `grads` (same layout as the
    /// parameters); the gradient with respect to the input is returned. The
    /// cached activations are consumed.
    pub fn backward(&mut self, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, NetError> {
        let trace = self.cache.take().ok_or(NetError::NoForwardCache)?;
        if upstream.len() != self.output_dim() {
            return Err(NetError::Dimension {
                what: "upstream gradient",
                expected: self.output_dim(),
                found: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NetError::Dimension {
                what: "gradient buffer",
                expected: self.params.len(),
                found: grads.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let off = self.offsets[idx];
            if l.activation == Activation::Relu {
                for (d, &p) in delta.iter_mut().zip(&trace.pre[idx]) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.inputs[idx];
            let (gw, gb) = grads[off..off + l.param_len()].split_at_mut(l.weight_len());
            for ((row, gbias), &d) in gw.chunks_exact_mut(l.inputs).zip(gb.iter_mut()).zip(&delta) {
                *gbias += d;
                if d != 0.0 {
                    for (g, &x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            let w = &self.params[off..off + l.weight_len()];
            let mut next = vec![0.0; l.inputs];
            for (row, &d) in w.chunks_exact(l.inputs).zip(&delta) {
                if d != 0.0 {
                    for (n, &a) in next.iter_mut().zip(row) {
                        *n += d * a;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }
}

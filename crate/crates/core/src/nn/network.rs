use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ConvGeom, LayerSpec};
use super::loss::{check_labels, cross_entropy_loss, cross_entropy_with_grad};
use super::params::{Gradients, ParamLayout, ParamRole, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A sequential network: per-sample input shape, an ordered layer list whose
/// shapes compose, and the flat parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last
    /// element is the network output shape.
    shapes: Vec<Vec<usize>>,
    /// `(weight entry, bias entry)` for parameterised layers.
    slots: Vec<Option<(usize, usize)>>,
    params: ParameterStore<T>,
}

struct Trace<T> {
    acts: Vec<Tensor<T>>,
    argmax: Vec<Vec<u32>>,
}

impl<T: Real> NetworkGraph<T> {
    /// Builds the graph with all parameters set to zero.
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = vec![input_shape.to_vec()];
        let mut layout = ParamLayout::default();
        let mut slots = Vec::with_capacity(layers.len());
        let mut counts = std::collections::HashMap::<&str, usize>::new();
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::Shape(format!("layer {i} ({layer}): {e}")))?;
            shapes.push(next);
            slots.push(layer.param_shapes().map(|(w, b)| {
                let n = counts.entry(layer.kind()).or_insert(0);
                *n += 1;
                let stem = match layer {
                    LayerSpec::Conv2d { .. } => format!("conv{n}"),
                    _ => format!("fc{n}"),
                };
                let wi = layout.push(format!("{stem}.weight"), w, ParamRole::Weight, i);
                let bi = layout.push(format!("{stem}.bias"), b, ParamRole::Bias, i);
                (wi, bi)
            }));
        }
        Ok(NetworkGraph {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            slots,
            params: ParameterStore::zeros(Arc::new(layout)),
        })
    }

    /// Fan-in scaled uniform initialisation, `U(-b, b)` with
    /// `b = sqrt(6 / fan_in)`; biases start at zero.
    pub fn init_he(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Arc::clone(self.params.layout());
        for (wi, bi) in self.slots.iter().flatten().copied() {
            let fan_in = layout.entry(wi).unit_len();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in self.params.tensor_mut(wi) {
                *v = T::of_f64(rng.random_range(-bound..bound));
            }
            self.params.tensor_mut(bi).fill(T::zero());
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn num_outputs(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Per-sample input shape of each layer, followed by the output shape.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// `(weight entry, bias entry)` per layer, `None` for parameter-free
    /// layers.
    pub fn param_slots(&self) -> &[Option<(usize, usize)>] {
        &self.slots
    }

    pub fn params(&self) -> &ParameterStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterStore<T>) -> Result<()> {
        if params.layout() != self.params.layout() {
            return Err(Error::Structure(
                "parameter store does not match network layout".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> NetworkGraph<U> {
        NetworkGraph {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            slots: self.slots.clone(),
            params: self.params.cast(),
        }
    }

    /// Text form of the structure: `3x32x32|conv2d(3,16,5)|relu|...`.
    pub fn arch_descriptor(&self) -> String {
        let dims: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        let mut parts = vec![dims.join("x")];
        parts.extend(self.layers.iter().map(|l| l.to_string()));
        parts.join("|")
    }

    pub fn from_arch_descriptor(desc: &str) -> Result<Self> {
        let mut parts = desc.split('|');
        let input = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::InvalidArgument("empty architecture descriptor".into()))?;
        let input_shape = input
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("input shape `{input}`: {e}")))?;
        let layers = parts.map(str::parse).collect::<Result<Vec<LayerSpec>>>()?;
        Self::new(&input_shape, layers)
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "batch shape {shape:?} does not match network input [B, {}]",
                self.input_shape
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        if shape[0] == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(shape[0])
    }

    /// Logits for a `[B, C, H, W]` batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let trace = self.run(batch, false)?;
        Ok(trace.acts.into_iter().last().unwrap())
    }

    /// Mean cross-entropy of the batch without gradients.
    pub fn loss(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(batch)?;
        cross_entropy_loss(&logits, labels)
    }

    /// Mean cross-entropy and its exact gradient with respect to every
    /// parameter.
    pub fn backward(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(f64, Gradients<T>)> {
        let b = self.check_batch(batch)?;
        check_labels(b, self.num_outputs(), labels)?;
        let trace = self.run(batch, true)?;
        let (loss, mut grad) = cross_entropy_with_grad(trace.acts.last().unwrap(), labels)?;
        let mut grads = Gradients::zeros(Arc::clone(self.params.layout()));

        let mut pools = trace.argmax.len();
        for i in (0..self.layers.len()).rev() {
            let need_input = i > 0;
            let input = &trace.acts[i];
            let in_shape = &self.shapes[i];
            let in_len: usize = b * in_shape.iter().product::<usize>();
            grad = match self.layers[i] {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let (wi, bi) = self.slots[i].unwrap();
                    let geom = ConvGeom {
                        c: in_channels,
                        h: in_shape[1],
                        w: in_shape[2],
                        k: kernel,
                        out: out_channels,
                    };
                    let (gw, gb) = grads.weight_bias_mut(wi, bi);
                    let mut gi = if need_input { vec![T::zero(); in_len] } else { Vec::new() };
                    layers::conv_backward(
                        &geom,
                        b,
                        input.data(),
                        self.params.tensor(wi),
                        &grad,
                        gw,
                        gb,
                        need_input.then_some(gi.as_mut_slice()),
                    );
                    gi
                }
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    let (wi, bi) = self.slots[i].unwrap();
                    let (gw, gb) = grads.weight_bias_mut(wi, bi);
                    let mut gi = if need_input { vec![T::zero(); in_len] } else { Vec::new() };
                    layers::linear_backward(
                        b,
                        in_features,
                        out_features,
                        input.data(),
                        self.params.tensor(wi),
                        &grad,
                        gw,
                        gb,
                        need_input.then_some(gi.as_mut_slice()),
                    );
                    gi
                }
                LayerSpec::MaxPool2d => {
                    pools -= 1;
                    let mut gi = vec![T::zero(); in_len];
                    layers::maxpool_backward(&trace.argmax[pools], &grad, &mut gi);
                    gi
                }
                LayerSpec::Relu => {
                    let out = trace.acts[i + 1].data();
                    for (g, &y) in grad.iter_mut().zip(out) {
                        if y <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    grad
                }
                LayerSpec::Flatten => grad,
            };
        }
        Ok((loss, grads))
    }

    fn run(&self, batch: &Tensor<T>, keep: bool) -> Result<Trace<T>> {
        let b = self.check_batch(batch)?;
        let mut acts: Vec<Tensor<T>> = Vec::with_capacity(if keep { self.layers.len() + 1 } else { 1 });
        let mut argmax = Vec::new();
        let mut current = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let in_shape = &self.shapes[i];
            let out_shape = &self.shapes[i + 1];
            let mut full = vec![b];
            full.extend_from_slice(out_shape);
            let out_len: usize = full.iter().product();
            let next = match *layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let (wi, bi) = self.slots[i].unwrap();
                    let geom = ConvGeom {
                        c: in_channels,
                        h: in_shape[1],
                        w: in_shape[2],
                        k: kernel,
                        out: out_channels,
                    };
                    let mut out = vec![T::zero(); out_len];
                    layers::conv_forward(
                        &geom,
                        b,
                        current.data(),
                        self.params.tensor(wi),
                        self.params.tensor(bi),
                        &mut out,
                    );
                    Tensor::from_vec(&full, out)?
                }
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    let (wi, bi) = self.slots[i].unwrap();
                    let mut out = vec![T::zero(); out_len];
                    layers::linear_forward(
                        b,
                        in_features,
                        out_features,
                        current.data(),
                        self.params.tensor(wi),
                        self.params.tensor(bi),
                        &mut out,
                    );
                    Tensor::from_vec(&full, out)?
                }
                LayerSpec::MaxPool2d => {
                    let mut out = vec![T::zero(); out_len];
                    let mut idx = vec![0u32; out_len];
                    layers::maxpool_forward(
                        b * in_shape[0],
                        in_shape[1],
                        in_shape[2],
                        current.data(),
                        &mut out,
                        &mut idx,
                    );
                    if keep {
                        argmax.push(idx);
                    }
                    Tensor::from_vec(&full, out)?
                }
                LayerSpec::Relu => {
                    let mut out = current.clone();
                    for v in out.data_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    out
                }
                LayerSpec::Flatten => current.clone().reshape(&full)?,
            };
            let prev = std::mem::replace(&mut current, next);
            if keep {
                acts.push(prev);
            }
        }
        acts.push(current);
        Ok(Trace { acts, argmax })
    }
}

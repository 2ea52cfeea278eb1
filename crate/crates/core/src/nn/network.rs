use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerKind};
use crate::ops::{self, ArgmaxMap};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a layer keeps from the forward pass for its backward pass.
#[derive(Clone, Debug)]
enum Saved<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Argmax(ArgmaxMap),
    SplitAt(usize),
    Nothing,
}

/// Intermediates of a train-mode forward pass. Empty after an eval pass.
#[derive(Clone, Debug, Default)]
pub struct ActivationCache<T> {
    saved: Vec<Saved<T>>,
    output_shape: Option<Shape>,
}

impl<T> ActivationCache<T> {
    pub fn is_empty(&self) -> bool {
        self.saved.is_empty()
    }
}

/// A sequential stack of layers with named skip edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    /// `(C, H, W)` the network was shape-checked against.
    input_shape: (usize, usize, usize),
    has_grads: bool,
}

impl<T: Real> Network<T> {
    /// Validates names, skip edges and shapes for `input_shape`.
    pub fn new(layers: Vec<Layer<T>>, input_shape: (usize, usize, usize)) -> Result<Self> {
        let mut names = HashSet::new();
        let mut sources = HashSet::new();
        let mut consumed = HashSet::new();
        for l in &layers {
            if !names.insert(l.name.as_str()) {
                return Err(Error::invalid(format!("duplicate layer name {}", l.name)));
            }
            if l.kind.is_parametric() != l.params.is_some() {
                return Err(Error::invalid(format!(
                    "layer {} of kind {} has inconsistent parameters",
                    l.name, l.kind
                )));
            }
            match &l.kind {
                LayerKind::SkipSource => {
                    sources.insert(l.name.as_str());
                }
                LayerKind::SkipSink { source } => {
                    if !sources.contains(source.as_str()) {
                        return Err(Error::invalid(format!(
                            "skip sink {} references {source}, which is not an earlier skip source",
                            l.name
                        )));
                    }
                    if !consumed.insert(source.as_str()) {
                        return Err(Error::invalid(format!(
                            "skip source {source} is consumed by more than one sink"
                        )));
                    }
                }
                _ => {}
            }
        }
        let net = Network {
            layers,
            input_shape,
            has_grads: false,
        };
        let (c, h, w) = input_shape;
        net.output_shape(Shape::new(1, c, h, w))?;
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn input_channels(&self) -> usize {
        self.input_shape.0
    }

    /// Height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::MaxPool)
            .count()
    }

    pub fn has_grads(&self) -> bool {
        self.has_grads
    }

    /// Shape propagation without touching any data.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        let mut skips = HashMap::new();
        let mut s = input;
        for l in &self.layers {
            let skip = match &l.kind {
                LayerKind::SkipSink { source } => skips.get(source.as_str()).copied(),
                _ => None,
            };
            s = l.output_shape(s, skip)?;
            if l.kind == LayerKind::SkipSource {
                skips.insert(l.name.as_str(), s);
            }
        }
        Ok(s)
    }

    fn check_input(&self, input: Shape) -> Result<()> {
        if input.c != self.input_shape.0 {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {input}",
                self.input_shape.0
            )));
        }
        let m = self.spatial_multiple();
        if input.h == 0 || input.w == 0 || !input.h.is_multiple_of(m) || !input.w.is_multiple_of(m) {
            return Err(Error::shape(format!(
                "input height and width must be positive multiples of {m}, got {}x{}",
                input.h, input.w
            )));
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(Layer::num_parameters).sum()
    }

    /// He-normal kernels, zero biases. Layers are visited in order and each
    /// kernel is filled row-major from one seeded stream.
    pub fn init_parameters(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            if let Some(p) = layer.params.as_mut() {
                let ks = p.kernel.shape();
                let fan_in = ks.c * ks.h * ks.w;
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                for v in p.kernel.data_mut() {
                    *v = T::from_f64(normal.sample(&mut rng));
                }
                p.bias.iter_mut().for_each(|b| *b = T::zero());
            }
            if let Some(g) = layer.grads.as_mut() {
                g.zero();
            }
        }
        self.has_grads = false;
    }

    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, ActivationCache<T>)> {
        self.check_input(input.shape())?;
        input.ensure_finite("network input")?;
        let train = mode == Mode::Train;
        let mut saved = Vec::with_capacity(if train { self.layers.len() } else { 0 });
        let mut skips: HashMap<&str, Tensor<T>> = HashMap::new();
        let mut x = input.clone();
        for l in &self.layers {
            let (y, keep) = match &l.kind {
                LayerKind::Conv | LayerKind::OutputHead => {
                    let y = ops::conv2d_forward(&x, l.params_ref()?)?;
                    (y, Saved::Input(x))
                }
                LayerKind::ConvTranspose => {
                    let y = ops::conv_transpose2d_forward(&x, l.params_ref()?)?;
                    (y, Saved::Input(x))
                }
                LayerKind::MaxPool => {
                    let (y, am) = ops::maxpool2(&x)?;
                    (y, Saved::Argmax(am))
                }
                LayerKind::Relu => {
                    let y = ops::relu(&x);
                    (y, Saved::Input(x))
                }
                LayerKind::Sigmoid => {
                    let y = ops::sigmoid(&x);
                    let keep = if train {
                        Saved::Output(y.clone())
                    } else {
                        Saved::Nothing
                    };
                    (y, keep)
                }
                LayerKind::SkipSource => {
                    skips.insert(l.name.as_str(), x.clone());
                    (x, Saved::Nothing)
                }
                LayerKind::SkipSink { source } => {
                    let skip = skips.remove(source.as_str()).ok_or_else(|| {
                        Error::InvalidState(format!("skip source {source} has no stored output"))
                    })?;
                    let split = x.shape().c;
                    let y = ops::concat_channels(&x, &skip)?;
                    (y, Saved::SplitAt(split))
                }
            };
            if train {
                saved.push(keep);
            }
            x = y;
        }
        let cache = ActivationCache {
            output_shape: train.then(|| x.shape()),
            saved,
        };
        Ok((x, cache))
    }

    /// Accumulates parameter gradients of `sum(grad_output * output)` into
    /// each layer's gradient store and returns the gradient at the input.
    pub fn backward(
        &mut self,
        cache: ActivationCache<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if cache.saved.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "backward needs the cache of a train-mode forward pass".into(),
            ));
        }
        if cache.output_shape != Some(grad_output.shape()) {
            return Err(Error::shape(format!(
                "output gradient {} does not match forward output {:?}",
                grad_output.shape(),
                cache.output_shape
            )));
        }
        let mut skip_grads: HashMap<String, Tensor<T>> = HashMap::new();
        let mut g = grad_output.clone();
        for (layer, saved) in self.layers.iter_mut().zip(cache.saved).rev() {
            g = match (&layer.kind, saved) {
                (LayerKind::Conv | LayerKind::OutputHead, Saved::Input(x)) => {
                    let grads = ops::conv2d_backward(&x, layer.params_ref()?, &g)?;
                    accumulate(layer, &grads.kernel, &grads.bias)?;
                    grads.input
                }
                (LayerKind::ConvTranspose, Saved::Input(x)) => {
                    let grads = ops::conv_transpose2d_backward(&x, layer.params_ref()?, &g)?;
                    accumulate(layer, &grads.kernel, &grads.bias)?;
                    grads.input
                }
                (LayerKind::MaxPool, Saved::Argmax(am)) => ops::maxpool2_backward(&am, &g)?,
                (LayerKind::Relu, Saved::Input(x)) => ops::relu_backward(&x, &g)?,
                (LayerKind::Sigmoid, Saved::Output(y)) => ops::sigmoid_backward(&y, &g)?,
                (LayerKind::SkipSink { source }, Saved::SplitAt(c)) => {
                    let (main, skip) = ops::split_channels(&g, c)?;
                    skip_grads.insert(source.clone(), skip);
                    main
                }
                (LayerKind::SkipSource, Saved::Nothing) => {
                    if let Some(sg) = skip_grads.remove(&layer.name) {
                        g.add_assign(&sg)?;
                    }
                    g
                }
                (kind, _) => {
                    return Err(Error::InvalidState(format!(
                        "cache entry does not match layer {} ({kind})",
                        layer.name
                    )))
                }
            };
        }
        self.has_grads = true;
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for g in self.layers.iter_mut().filter_map(|l| l.grads.as_mut()) {
            g.zero();
        }
        self.has_grads = false;
    }

    /// `(parameter name, values)` in storage order: each parametric layer's
    /// kernel followed by its bias.
    pub fn named_parameters(&self) -> Vec<(String, Shape, &[T])> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Some(p) = &l.params {
                out.push((
                    format!("{}.weight", l.name),
                    p.kernel.shape(),
                    p.kernel.data(),
                ));
                out.push((
                    format!("{}.bias", l.name),
                    Shape::new(1, 1, 1, p.bias.len()),
                    &p.bias[..],
                ));
            }
        }
        out
    }

    pub fn flat_parameters(&self) -> Vec<T> {
        self.named_parameters()
            .into_iter()
            .flat_map(|(_, _, v)| v.iter().copied())
            .collect()
    }

    pub fn flat_gradients(&self) -> Vec<T> {
        let mut out = Vec::new();
        for g in self.layers.iter().filter_map(|l| l.grads.as_ref()) {
            out.extend_from_slice(g.kernel.data());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    /// Inverse of [`Network::flat_parameters`].
    pub fn set_flat_parameters(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                values.len()
            )));
        }
        let mut at = 0;
        for p in self.layers.iter_mut().filter_map(|l| l.params.as_mut()) {
            let n = p.kernel.len();
            p.kernel.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
            let n = p.bias.len();
            p.bias.copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// `(parameters, gradients)` slice pairs in storage order.
    pub fn param_grad_pairs(&mut self) -> Vec<(&mut [T], &[T])> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let (Some(p), Some(g)) = (l.params.as_mut(), l.grads.as_ref()) {
                out.push((p.kernel.data_mut(), g.kernel.data()));
                out.push((&mut p.bias[..], &g.bias[..]));
            }
        }
        out
    }

    /// Copy of this network in another precision. Gradients are reset.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let params = l.params.as_ref().map(|p| crate::ops::ConvParams {
                    kernel: p.kernel.cast(),
                    bias: p
                        .bias
                        .iter()
                        .map(|b| U::from_f64(Real::to_f64(*b)))
                        .collect(),
                    stride: p.stride,
                    padding: p.padding,
                    output_padding: p.output_padding,
                });
                Layer {
                    name: l.name.clone(),
                    kind: l.kind.clone(),
                    grads: params.as_ref().map(crate::nn::ParamGrads::zeros_like),
                    params,
                }
            })
            .collect();
        Network {
            layers,
            input_shape: self.input_shape,
            has_grads: false,
        }
    }
}

fn accumulate<T: Real>(layer: &mut Layer<T>, kernel: &Tensor<T>, bias: &[T]) -> Result<()> {
    let name = layer.name.clone();
    let g = layer
        .grads
        .as_mut()
        .ok_or_else(|| Error::InvalidState(format!("layer {name} has no gradient store")))?;
    g.kernel.add_assign(kernel)?;
    for (a, &b) in g.bias.iter_mut().zip(bias) {
        *a = *a + b;
    }
    Ok(())
}

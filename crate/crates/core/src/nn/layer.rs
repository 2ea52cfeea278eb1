use std::fmt;

use crate::error::{Error, Result};
use crate::ops::ConvParams;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    MaxPool,
    Relu,
    Sigmoid,
    /// Identity that remembers its output for a later [`LayerKind::SkipSink`].
    SkipSource,
    /// Appends the named source's feature map after the current channels.
    SkipSink {
        source: String,
    },
    /// Final 1x1 convolution producing logits.
    OutputHead,
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::ConvTranspose => "conv_transpose",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::SkipSource => "concat_skip_source",
            LayerKind::SkipSink { .. } => "concat_skip_sink",
            LayerKind::OutputHead => "output_head",
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv | LayerKind::ConvTranspose | LayerKind::OutputHead
        )
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::SkipSink { source } => write!(f, "{}({source})", self.tag()),
            other => f.write_str(other.tag()),
        }
    }
}

/// Gradient store congruent with a layer's [`ConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(params: &ConvParams<T>) -> Self {
        ParamGrads {
            kernel: Tensor::zeros(params.kernel.shape()),
            bias: vec![T::zero(); params.bias.len()],
        }
    }

    pub fn zero(&mut self) {
        self.kernel.fill(T::zero());
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind,
    pub params: Option<ConvParams<T>>,
    pub grads: Option<ParamGrads<T>>,
}

impl<T: Real> Layer<T> {
    fn plain(name: impl Into<String>, kind: LayerKind) -> Self {
        Layer {
            name: name.into(),
            kind,
            params: None,
            grads: None,
        }
    }

    fn parametric(name: impl Into<String>, kind: LayerKind, params: ConvParams<T>) -> Self {
        Layer {
            name: name.into(),
            kind,
            grads: Some(ParamGrads::zeros_like(&params)),
            params: Some(params),
        }
    }

    /// `k`x`k` convolution, stride 1, "same" padding.
    pub fn conv(name: impl Into<String>, c_in: usize, c_out: usize, k: usize) -> Self {
        Self::parametric(
            name,
            LayerKind::Conv,
            ConvParams::zeros(c_out, c_in, k, 1, k / 2),
        )
    }

    /// Transposed convolution that doubles height and width:
    /// `(H - 1) * 2 - 2 * padding + k + output_padding = 2H`.
    pub fn upsample2(name: impl Into<String>, c_in: usize, c_out: usize, k: usize) -> Self {
        let (padding, output_padding) = match k {
            2 => (0, 0),
            k if k % 2 == 1 => (k / 2, 1),
            k => ((k - 2) / 2, 0),
        };
        Self::parametric(
            name,
            LayerKind::ConvTranspose,
            ConvParams::zeros(c_out, c_in, k, 2, padding).with_output_padding(output_padding),
        )
    }

    pub fn output_head(name: impl Into<String>, c_in: usize, c_out: usize) -> Self {
        Self::parametric(
            name,
            LayerKind::OutputHead,
            ConvParams::zeros(c_out, c_in, 1, 1, 0),
        )
    }

    pub fn maxpool(name: impl Into<String>) -> Self {
        Self::plain(name, LayerKind::MaxPool)
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::plain(name, LayerKind::Relu)
    }

    pub fn sigmoid(name: impl Into<String>) -> Self {
        Self::plain(name, LayerKind::Sigmoid)
    }

    pub fn skip_source(name: impl Into<String>) -> Self {
        Self::plain(name, LayerKind::SkipSource)
    }

    pub fn skip_sink(name: impl Into<String>, source: impl Into<String>) -> Self {
        Self::plain(
            name,
            LayerKind::SkipSink {
                source: source.into(),
            },
        )
    }

    pub fn num_parameters(&self) -> usize {
        self.params.as_ref().map_or(0, ConvParams::num_parameters)
    }

    /// Shape produced by this layer. `skip` is the stored shape of the
    /// source feeding a sink.
    pub(crate) fn output_shape(&self, input: Shape, skip: Option<Shape>) -> Result<Shape> {
        match &self.kind {
            LayerKind::Conv | LayerKind::OutputHead => self.params_ref()?.conv_output_shape(input),
            LayerKind::ConvTranspose => self.params_ref()?.transpose_output_shape(input),
            LayerKind::MaxPool => {
                if !input.h.is_multiple_of(2) || !input.w.is_multiple_of(2) {
                    return Err(Error::shape(format!(
                        "layer {}: max pooling needs even dims, got {input}",
                        self.name
                    )));
                }
                Ok(Shape::new(input.n, input.c, input.h / 2, input.w / 2))
            }
            LayerKind::Relu | LayerKind::Sigmoid | LayerKind::SkipSource => Ok(input),
            LayerKind::SkipSink { source } => {
                let s = skip.ok_or_else(|| {
                    Error::shape(format!("layer {}: source {source} not seen", self.name))
                })?;
                if (s.n, s.h, s.w) != (input.n, input.h, input.w) {
                    return Err(Error::shape(format!(
                        "layer {}: skip {s} from {source} does not match {input}",
                        self.name
                    )));
                }
                Ok(Shape::new(input.n, input.c + s.c, input.h, input.w))
            }
        }
    }

    pub(crate) fn params_ref(&self) -> Result<&ConvParams<T>> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::InvalidState(format!("layer {} has no parameters", self.name)))
    }
}

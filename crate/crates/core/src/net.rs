//! The image-completion network and its masked L1 training loss.
//!
//! Layer sequence (kernel, dilation, stride, channels):
//!
//! ```text
//! Conv(5,1,1,32) Conv(3,1,1,64) Conv(3,1,1,64) Conv(3,1,2,128)
//! Conv(3,1,1,128) Conv(3,1,1,128) Conv(3,2,1,128) Conv(3,4,1,128)
//! Conv(3,8,1,128) Conv(3,16,1,128) Conv(3,1,1,128) Conv(3,1,1,128)
//! Upscale(2x) Conv(3,1,1,64) Conv(3,1,1,64) Conv(3,1,1,32)
//! Conv(3,1,1,16) Conv(3,1,1,1) Clip(-1,1)
//! ```
//!
//! Every convolution except the last is followed by an ELU.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{invalid_arg, Error, Result};
use crate::mask::MaskSpec;
use crate::optim::{init_bias, init_weights, Parameter};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        dilation: usize,
        stride: usize,
        channels: usize,
        activation: bool,
    },
    Upscale2x,
    Clip {
        lo: f64,
        hi: f64,
    },
}

const fn conv(kernel: usize, dilation: usize, stride: usize, channels: usize) -> LayerSpec {
    LayerSpec::Conv {
        kernel,
        dilation,
        stride,
        channels,
        activation: true,
    }
}

/// Which layer list to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Canonical,
    /// Same topology with every hidden channel count divided by four.
    Desk,
}

impl Architecture {
    pub fn layers(self) -> Vec<LayerSpec> {
        match self {
            Architecture::Canonical => canonical_layers(),
            Architecture::Desk => scaled_layers(4),
        }
    }
}

pub fn canonical_layers() -> Vec<LayerSpec> {
    vec![
        conv(5, 1, 1, 32),
        conv(3, 1, 1, 64),
        conv(3, 1, 1, 64),
        conv(3, 1, 2, 128),
        conv(3, 1, 1, 128),
        conv(3, 1, 1, 128),
        conv(3, 2, 1, 128),
        conv(3, 4, 1, 128),
        conv(3, 8, 1, 128),
        conv(3, 16, 1, 128),
        conv(3, 1, 1, 128),
        conv(3, 1, 1, 128),
        LayerSpec::Upscale2x,
        conv(3, 1, 1, 64),
        conv(3, 1, 1, 64),
        conv(3, 1, 1, 32),
        conv(3, 1, 1, 16),
        LayerSpec::Conv {
            kernel: 3,
            dilation: 1,
            stride: 1,
            channels: 1,
            activation: false,
        },
        LayerSpec::Clip { lo: -1.0, hi: 1.0 },
    ]
}

/// Canonical topology with hidden widths divided by `divisor`; the single
/// output channel is kept.
pub fn scaled_layers(divisor: usize) -> Vec<LayerSpec> {
    let mut layers = canonical_layers();
    let last_conv = layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Conv { .. }))
        .expect("canonical list has convolutions");
    for (i, l) in layers.iter_mut().enumerate() {
        if let LayerSpec::Conv { channels, .. } = l {
            if i != last_conv {
                *channels = (*channels / divisor).max(1);
            }
        }
    }
    layers
}

/// Spatial extent after each layer for a square input of side `input`.
pub fn spatial_trace(layers: &[LayerSpec], input: usize) -> Result<Vec<usize>> {
    let mut size = input;
    let mut trace = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv {
                kernel,
                dilation,
                stride,
                channels,
                ..
            } => {
                if kernel % 2 == 0 || dilation == 0 || stride == 0 || channels == 0 {
                    return Err(Error::InvalidSpec(format!("layer {i}: malformed convolution")));
                }
                if dilation * (kernel - 1) / 2 >= size {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: padding {} too wide for a {size}px map",
                        dilation * (kernel - 1) / 2
                    )));
                }
                size = size.div_ceil(stride);
            }
            LayerSpec::Upscale2x => size *= 2,
            LayerSpec::Clip { lo, hi } => {
                if lo >= hi {
                    return Err(Error::InvalidSpec(format!("layer {i}: clip with lo >= hi")));
                }
            }
        }
        trace.push(size);
    }
    Ok(trace)
}

fn validate(layers: &[LayerSpec], input: usize) -> Result<()> {
    let trace = spatial_trace(layers, input)?;
    if trace.last() != Some(&input) {
        return Err(Error::InvalidSpec(format!(
            "shape trace ends at {:?}, not at the input size {input}",
            trace.last()
        )));
    }
    let last_channels = layers.iter().rev().find_map(|l| match l {
        LayerSpec::Conv { channels, .. } => Some(*channels),
        _ => None,
    });
    if last_channels != Some(1) {
        return Err(Error::InvalidSpec(
            "the final convolution must have one output channel".into(),
        ));
    }
    Ok(())
}

/// Weight initialization settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub sigma: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { sigma: 0.02 }
    }
}

/// The completion network `F`: layer specs plus one kernel and one bias per convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionNet<T> {
    layers: Vec<LayerSpec>,
    params: Vec<Parameter<T>>,
    patch_size: usize,
}

impl<T: Real> CompletionNet<T> {
    /// Builds the network with truncated-Gaussian kernels and zero biases.
    pub fn build(layers: Vec<LayerSpec>, init: InitConfig, rng: &mut Rng) -> Result<Self> {
        Self::build_for(layers, MaskSpec::default().patch_size, init, rng)
    }

    /// Like [`build`](Self::build) but validates the shape trace for another patch size.
    pub fn build_for(
        layers: Vec<LayerSpec>,
        patch_size: usize,
        init: InitConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        validate(&layers, patch_size)?;
        let mut params = Vec::new();
        let mut in_channels = 1;
        let mut index = 0;
        for layer in &layers {
            if let LayerSpec::Conv {
                kernel, channels, ..
            } = *layer
            {
                index += 1;
                params.push(Parameter::new(
                    format!("conv{index}.weight"),
                    init_weights(&[channels, in_channels, kernel, kernel], init.sigma, rng)?,
                ));
                params.push(Parameter::new(format!("conv{index}.bias"), init_bias(&[channels])));
                in_channels = channels;
            }
        }
        Ok(Self {
            layers,
            params,
            patch_size,
        })
    }

    /// Reassembles a network from stored parameters, checking names and shapes.
    pub fn from_parameters(
        layers: Vec<LayerSpec>,
        patch_size: usize,
        params: Vec<Parameter<T>>,
    ) -> Result<Self> {
        let template =
            Self::build_for(layers, patch_size, InitConfig::default(), &mut crate::rng::seeded(0))?;
        if template.params.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (t, p) in template.params.iter().zip(&params) {
            if t.name != p.name || t.value.shape() != p.value.shape() {
                return Err(Error::InvalidSpec(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    t.name,
                    t.value.shape()
                )));
            }
        }
        Ok(Self {
            params,
            ..template
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        crate::optim::parameter_count(&self.params)
    }

    /// Converts the weights to another precision.
    pub fn cast<U: Real>(&self) -> CompletionNet<U> {
        CompletionNet {
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
            patch_size: self.patch_size,
        }
    }

    /// Records `F(x)` on `graph`. `params` are the graph handles of
    /// [`parameters`](Self::parameters), in order.
    pub fn forward(&self, graph: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(invalid_arg!(
                "expected {} parameter handles, got {}",
                self.params.len(),
                params.len()
            ));
        }
        let in_shape = graph.value(x).dims4()?;
        if in_shape[1] != 1 {
            return Err(invalid_arg!(
                "completion net takes one input channel, got {}",
                in_shape[1]
            ));
        }
        let mut h = x;
        let mut p = params.iter();
        for layer in &self.layers {
            h = match *layer {
                LayerSpec::Conv {
                    dilation,
                    stride,
                    activation,
                    ..
                } => {
                    let (w, b) = (*p.next().expect("kernel"), *p.next().expect("bias"));
                    let y = graph.conv2d(h, w, b, dilation, stride)?;
                    if activation {
                        graph.elu(y)
                    } else {
                        y
                    }
                }
                LayerSpec::Upscale2x => graph.upscale2x(h)?,
                LayerSpec::Clip { lo, hi } => graph.clip(h, T::lit(lo), T::lit(hi))?,
            };
        }
        let out_shape = graph.value(h).dims4()?;
        if out_shape != in_shape {
            return Err(invalid_arg!(
                "input {in_shape:?} does not round-trip through the network (got {out_shape:?})"
            ));
        }
        Ok(h)
    }

    /// Forward pass on an already masked batch `[B, 1, H, W]`, without recording gradients.
    pub fn infer(&self, x_masked: &Tensor<T>) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| graph.constant(p.value.clone()))
            .collect();
        let x = graph.constant(x_masked.clone());
        let y = self.forward(&mut graph, &params, x)?;
        Ok(graph.value(y).clone())
    }
}

/// `λ·‖M⊙(x−f)‖₁/N + (1−λ)·‖M̄⊙(x−f)‖₁/N`, averaged over the batch.
pub fn masked_l1_loss<T: Real>(
    graph: &mut Graph<T>,
    x: Var,
    f_out: Var,
    mask: &MaskSpec,
    lambda: f64,
) -> Result<Var> {
    let [_, c, h, w] = graph.value(x).dims4()?;
    if graph.value(f_out).shape() != graph.value(x).shape() {
        return Err(invalid_arg!(
            "loss operands differ in shape: {:?} vs {:?}",
            graph.value(x).shape(),
            graph.value(f_out).shape()
        ));
    }
    if c != 1 || h != mask.patch_size || w != mask.patch_size {
        return Err(invalid_arg!(
            "loss expects [B, 1, {0}, {0}] patches",
            mask.patch_size
        ));
    }
    let weights = mask.loss_weights::<T>(lambda)?;
    graph.weighted_l1(f_out, x, weights)
}

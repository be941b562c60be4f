//! Network schedules, their executable form, and the training losses.
//!
//! A [`ModelSpec`] is a declarative layer list; [`Model::build`] turns it
//! into a network with seeded parameters. Images enter as `1 x S x S`
//! tensors in `[-1, 1]` (`S` = 256 by default).

mod loss;
mod net;

pub use loss::{
    bce_with_logits, gan_loss_parts, loss_feedforward, loss_feedforward_grad, loss_gan,
    loss_gan_grad, GanLossParts,
};
pub use net::{Block, Model, PatchDiscriminator, ResNet, UNet};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::nn::Activation;

/// Input side length the networks expect by default.
pub const INPUT_SIZE: usize = 256;
/// Base filter count of every architecture at full width.
pub const BASE_WIDTH: usize = 64;
pub const INIT_STD: f64 = 0.2;
pub const DROPOUT: f32 = 0.5;
pub const LEAKY_SLOPE: f32 = 0.2;
pub const RESIDUAL_BLOCKS: usize = 9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: [usize; 3],
        actual: [usize; 3],
    },
    #[error("invalid loss weight {0}")]
    InvalidLambda(f64),
    #[error("invalid model schedule: {0}")]
    InvalidSpec(String),
    #[error("parameter {name}: {reason}")]
    ParamMismatch { name: String, reason: String },
}

/// The three trained predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    UnetFf,
    ResnetFf,
    Gan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::UnetFf, ModelKind::ResnetFf, ModelKind::Gan];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::UnetFf => "unet_ff",
            ModelKind::ResnetFf => "resnet_ff",
            ModelKind::Gan => "gan",
        }
    }

    /// Generator architecture used by this predictor.
    pub fn generator_arch(self) -> Arch {
        match self {
            ModelKind::ResnetFf => Arch::ResNet,
            ModelKind::UnetFf | ModelKind::Gan => Arch::UNet,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model kind {s:?} (expected unet_ff, resnet_ff or gan)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    UNet,
    ResNet,
    PatchDiscriminator,
}

/// Where a layer sits in its network's wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// U-Net downsampling layer; its output feeds the mirrored decoder layer.
    Encoder,
    /// U-Net upsampling layer; its output is concatenated with a skip.
    Decoder,
    /// Plain feed-forward layer.
    Sequential,
    /// Residual block `x + conv-norm-act-conv-norm(x)`; `activation` is
    /// the inner one.
    Residual,
}

/// One convolution (or transposed convolution) with optional norm,
/// dropout and a trailing activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub stage: Stage,
    pub transposed: bool,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    pub norm: bool,
    pub activation: Activation,
    pub dropout: f32,
}

impl LayerSpec {
    fn conv(
        stage: Stage,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Self {
            stage,
            transposed: false,
            in_channels,
            filters,
            kernel,
            stride,
            pad,
            out_pad: 0,
            norm: true,
            activation: Activation::Relu,
            dropout: 0.0,
        }
    }

    fn up(
        stage: Stage,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        pad: usize,
        out_pad: usize,
    ) -> Self {
        Self {
            transposed: true,
            out_pad,
            ..Self::conv(stage, in_channels, filters, kernel, 2, pad)
        }
    }

    fn norm(self, norm: bool) -> Self {
        Self { norm, ..self }
    }

    fn act(self, activation: Activation) -> Self {
        Self { activation, ..self }
    }

    fn dropout(self, dropout: f32) -> Self {
        Self { dropout, ..self }
    }

    /// Spatial output size for an input of side `n`.
    pub fn out_size(&self, n: usize) -> usize {
        if self.transposed {
            (n - 1) * self.stride + self.kernel + self.out_pad - 2 * self.pad
        } else {
            (n + 2 * self.pad - self.kernel) / self.stride + 1
        }
    }

    /// Convolutions followed by a norm carry no bias.
    pub fn has_bias(&self) -> bool {
        !self.norm
    }

    pub fn param_count(&self) -> usize {
        let conv = self.in_channels * self.filters * self.kernel * self.kernel;
        let per_conv = conv
            + if self.has_bias() {
                self.filters
            } else {
                2 * self.filters
            };
        match self.stage {
            Stage::Residual => 2 * per_conv,
            _ => per_conv,
        }
    }
}

/// A complete network schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub arch: Arch,
    /// Base filter count (64 at full width).
    pub width: usize,
    pub input_size: usize,
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Generator schedule for `kind` at the given width and input size.
    pub fn generator(kind: ModelKind, width: usize, input_size: usize) -> Result<Self, ModelError> {
        let mut spec = match kind.generator_arch() {
            Arch::ResNet => resnet_spec(width, input_size)?,
            _ => unet_spec(width, input_size)?,
        };
        spec.kind = kind;
        Ok(spec)
    }

    pub fn encoder_filters(&self) -> Vec<usize> {
        self.stage_filters(Stage::Encoder, |l| l.filters)
    }

    /// Input channel count of every decoder layer, innermost first.
    pub fn decoder_filters(&self) -> Vec<usize> {
        self.stage_filters(Stage::Decoder, |l| l.in_channels)
    }

    fn stage_filters(&self, stage: Stage, f: impl Fn(&LayerSpec) -> usize) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.stage == stage)
            .map(f)
            .collect()
    }

    pub fn residual_blocks(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.stage == Stage::Residual)
            .count()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Output spatial size for the declared input size.
    pub fn output_size(&self) -> usize {
        match self.arch {
            // the decoder mirrors the encoder
            Arch::UNet => self.input_size,
            _ => self
                .layers
                .iter()
                .fold(self.input_size, |n, l| l.out_size(n)),
        }
    }

    /// Checks channel chaining and spatial sizes.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        match self.arch {
            Arch::UNet => {
                let enc: Vec<&LayerSpec> = self
                    .layers
                    .iter()
                    .filter(|l| l.stage == Stage::Encoder)
                    .collect();
                let dec: Vec<&LayerSpec> = self
                    .layers
                    .iter()
                    .filter(|l| l.stage == Stage::Decoder)
                    .collect();
                if enc.len() != dec.len() || enc.len() + dec.len() != self.layers.len() {
                    return bad("U-Net needs matching encoder and decoder stacks".into());
                }
                if self.input_size >> enc.len() != 1 || self.input_size != 1 << enc.len() {
                    return bad(format!("input {} is not 2^{}", self.input_size, enc.len()));
                }
                let mut c = self.in_channels;
                for l in &enc {
                    if l.in_channels != c || l.transposed || l.stride != 2 {
                        return bad(format!("encoder layer expects {} input channels", c));
                    }
                    c = l.filters;
                }
                for (i, l) in dec.iter().enumerate() {
                    if l.in_channels != c || !l.transposed {
                        return bad(format!("decoder layer {i} expects {c} input channels"));
                    }
                    c = l.filters;
                    if i + 1 < dec.len() {
                        c += enc[enc.len() - 2 - i].filters;
                    }
                }
                if c != 1 {
                    return bad("U-Net must end in one channel".into());
                }
            }
            Arch::ResNet | Arch::PatchDiscriminator => {
                let mut c = self.in_channels;
                let mut n = self.input_size;
                for (i, l) in self.layers.iter().enumerate() {
                    if l.in_channels != c {
                        return bad(format!("layer {i} expects {c} input channels"));
                    }
                    if !l.transposed && n + 2 * l.pad < l.kernel {
                        return bad(format!("layer {i} kernel larger than its {n}-pixel input"));
                    }
                    if l.stage == Stage::Residual && (l.filters != c || l.out_size(n) != n) {
                        return bad(format!("residual layer {i} must preserve its shape"));
                    }
                    c = l.filters;
                    n = l.out_size(n);
                }
                if self.arch == Arch::ResNet && (n != self.input_size || c != 1) {
                    return bad("ResNet must map 1xSxS to 1xSxS".into());
                }
            }
        }
        Ok(())
    }
}

/// Full-width U-Net generator at 256x256.
pub fn build_unet_generator() -> ModelSpec {
    unet_spec(BASE_WIDTH, INPUT_SIZE).expect("default schedule is valid")
}

/// Full-width ResNet generator at 256x256.
pub fn build_resnet_generator() -> ModelSpec {
    resnet_spec(BASE_WIDTH, INPUT_SIZE).expect("default schedule is valid")
}

/// Full-width PatchGAN discriminator at 256x256.
pub fn build_patch_discriminator() -> ModelSpec {
    patch_spec(BASE_WIDTH, INPUT_SIZE).expect("default schedule is valid")
}

/// U-Net with `log2(input_size)` stride-2 layers on each side. Encoder
/// filters follow `width x (1, 2, 4, 8, 8, ...)`; the decoder mirrors them
/// and receives the encoder output of the same depth as a skip.
pub fn unet_spec(width: usize, input_size: usize) -> Result<ModelSpec, ModelError> {
    if width == 0 || !input_size.is_power_of_two() || input_size < 4 {
        return Err(ModelError::InvalidSpec(format!(
            "U-Net needs width > 0 and a power-of-two input >= 4, got {width} and {input_size}"
        )));
    }
    let depth = input_size.trailing_zeros() as usize;
    let enc: Vec<usize> = (0..depth).map(|i| width << i.min(3)).collect();
    let mut layers = Vec::with_capacity(2 * depth);
    let mut c = 1;
    for (i, &f) in enc.iter().enumerate() {
        let innermost = i + 1 == depth;
        layers.push(LayerSpec::conv(Stage::Encoder, c, f, 4, 2, 1).norm(i != 0 && !innermost));
        c = f;
    }
    for i in 0..depth {
        let outermost = i + 1 == depth;
        let out = if outermost { 1 } else { enc[depth - 2 - i] };
        let mut l = LayerSpec::up(Stage::Decoder, c, out, 4, 1, 0);
        if outermost {
            l = l.norm(false).act(Activation::Tanh);
        } else if (1..=3).contains(&i) && out == enc[depth - 1] {
            l = l.dropout(DROPOUT);
        }
        layers.push(l);
        c = if outermost { out } else { 2 * out };
    }
    let spec = ModelSpec {
        kind: ModelKind::UnetFf,
        arch: Arch::UNet,
        width,
        input_size,
        in_channels: 1,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Johnson-style residual generator: 7x7 stem, two stride-2 convolutions,
/// nine residual blocks, two stride-1/2 transposed convolutions, 7x7 head.
pub fn resnet_spec(width: usize, input_size: usize) -> Result<ModelSpec, ModelError> {
    if width == 0 || !input_size.is_multiple_of(4) || input_size < 8 {
        return Err(ModelError::InvalidSpec(format!(
            "ResNet needs width > 0 and an input divisible by 4, got {width} and {input_size}"
        )));
    }
    let s = Stage::Sequential;
    let mut layers = vec![
        LayerSpec::conv(s, 1, width, 7, 1, 3),
        LayerSpec::conv(s, width, 2 * width, 3, 2, 1),
        LayerSpec::conv(s, 2 * width, 4 * width, 3, 2, 1),
    ];
    layers.extend(
        (0..RESIDUAL_BLOCKS)
            .map(|_| LayerSpec::conv(Stage::Residual, 4 * width, 4 * width, 3, 1, 1)),
    );
    layers.push(LayerSpec::up(s, 4 * width, 2 * width, 3, 1, 1));
    layers.push(LayerSpec::up(s, 2 * width, width, 3, 1, 1));
    layers.push(
        LayerSpec::conv(s, width, 1, 7, 1, 3)
            .norm(false)
            .act(Activation::Tanh),
    );
    let spec = ModelSpec {
        kind: ModelKind::ResnetFf,
        arch: Arch::ResNet,
        width,
        input_size,
        in_channels: 1,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// PatchGAN over a concatenated `(input, candidate)` pair: filters
/// `width x (1, 2, 4, 8, 8, 8)` with strides `(2, 2, 2, 1, 1, 1)`, then a
/// one-channel logit map.
pub fn patch_spec(width: usize, input_size: usize) -> Result<ModelSpec, ModelError> {
    let lrelu = Activation::LeakyRelu(LEAKY_SLOPE);
    let s = Stage::Sequential;
    let mut layers = Vec::new();
    let mut c = 2;
    for (i, (mult, stride)) in [(1, 2), (2, 2), (4, 2), (8, 1), (8, 1), (8, 1)]
        .into_iter()
        .enumerate()
    {
        layers.push(
            LayerSpec::conv(s, c, width * mult, 4, stride, 1)
                .norm(i != 0)
                .act(lrelu),
        );
        c = width * mult;
    }
    layers.push(
        LayerSpec::conv(s, c, 1, 4, 1, 1)
            .norm(false)
            .act(Activation::Identity),
    );
    let spec = ModelSpec {
        kind: ModelKind::Gan,
        arch: Arch::PatchDiscriminator,
        width,
        input_size,
        in_channels: 2,
        layers,
    };
    if width == 0 {
        return Err(ModelError::InvalidSpec("zero width".into()));
    }
    spec.validate()?;
    Ok(spec)
}

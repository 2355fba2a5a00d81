//! Declarative architecture descriptions.
//!
//! An [`ArchSpec`] is a flat list of layers. Residual blocks are delimited by
//! `block_begin` / `block_end` markers; the begin marker carries the block's
//! wiring (identity skip, projection, ReLU placement) and the end marker
//! performs the add and the closing ReLU. Channel counts are stored at base
//! width and scaled when the network is built.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::tensor::conv_output_dim;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Bn,
    Relu,
    Maxpool,
    BlockBegin,
    BlockEnd,
}

/// Where a block's closing ReLU sits relative to the residual add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReluPlacement {
    /// `relu(body + skip)`; the skip carries post-ReLU activations.
    #[default]
    PostAdd,
    /// `body + skip` on pre-ReLU values; ReLU only feeds the next body.
    PreAdd,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default)]
    pub channels_out: usize,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub skip_projection: bool,
    #[serde(default)]
    pub relu_placement: ReluPlacement,
    /// Conv layers only.
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap: Option<String>,
}

impl LayerSpec {
    fn of(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            channels_out: 0,
            kernel: 1,
            stride: 1,
            padding: 0,
            residual: false,
            skip_projection: false,
            relu_placement: ReluPlacement::PostAdd,
            bias: true,
            tap: None,
        }
    }

    pub fn conv(channels_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            channels_out,
            kernel,
            stride,
            padding,
            ..Self::of(LayerKind::Conv)
        }
    }

    pub fn bn() -> Self {
        Self::of(LayerKind::Bn)
    }

    pub fn relu() -> Self {
        Self::of(LayerKind::Relu)
    }

    pub fn maxpool() -> Self {
        LayerSpec {
            kernel: 2,
            stride: 2,
            ..Self::of(LayerKind::Maxpool)
        }
    }

    pub fn block_begin(
        residual: bool,
        skip_projection: bool,
        channels_out: usize,
        stride: usize,
        relu_placement: ReluPlacement,
    ) -> Self {
        LayerSpec {
            channels_out,
            stride,
            residual,
            skip_projection,
            relu_placement,
            ..Self::of(LayerKind::BlockBegin)
        }
    }

    pub fn block_end() -> Self {
        Self::of(LayerKind::BlockEnd)
    }

    pub fn tapped(mut self, name: &str) -> Self {
        self.tap = Some(name.to_string());
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "unit_scale")]
    pub width_scale: f64,
    #[serde(default = "one")]
    pub widen_factor: usize,
    pub style_taps: Vec<String>,
    pub content_tap: String,
    /// Default style weight for this family.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn unit_scale() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    4e10
}

/// Where a parameter tensor comes from and how it is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

/// Per-layer resolution of channel counts.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Resolved {
    Conv {
        prefix: String,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Bn {
        prefix: String,
    },
    Relu,
    Maxpool,
    BlockBegin {
        placement: ReluPlacement,
    },
    BlockEnd {
        residual: bool,
        placement: ReluPlacement,
        /// `(prefix, cin, cout, stride)` of the 1×1 projection, when present.
        projection: Option<(String, usize, usize, usize)>,
    },
}

/// How one residual block is wired, as seen by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockWiring {
    pub begin: usize,
    pub end: usize,
    pub residual: bool,
    /// The add consumes pre-ReLU activations from the previous block.
    pub add_consumes_pre_relu: bool,
    /// The block output is `relu(add)` rather than the raw sum.
    pub relu_follows_add: bool,
}

impl ArchSpec {
    pub fn with_width_scale(mut self, width_scale: f64) -> Self {
        self.width_scale = width_scale;
        self
    }

    pub fn with_widen_factor(mut self, widen_factor: usize) -> Self {
        self.widen_factor = widen_factor;
        self
    }

    /// `max(1, round(width_scale · widen_factor · base))`.
    pub fn scaled_channels(&self, base: usize) -> usize {
        let v = (self.width_scale * self.widen_factor as f64 * base as f64).round();
        (v as usize).max(1)
    }

    /// Tap names in declaration order.
    pub fn taps(&self) -> Vec<&str> {
        self.layers.iter().filter_map(|l| l.tap.as_deref()).collect()
    }

    /// The last tap of each stage, where `convS_B` belongs to stage `S`.
    pub fn stage_taps(&self) -> Vec<&str> {
        let stage = |t: &str| t.rsplit_once('_').map_or(t, |(s, _)| s).to_string();
        let taps = self.taps();
        taps.iter()
            .enumerate()
            .filter(|&(i, t)| !matches!(taps.get(i + 1), Some(next) if stage(next) == stage(t)))
            .map(|(_, t)| *t)
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ArchSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return Err(Error::config(format!(
                "{}: width_scale must be in (0, 1], got {}",
                self.name, self.width_scale
            )));
        }
        if self.widen_factor < 1 {
            return Err(Error::config(format!("{}: widen_factor must be >= 1", self.name)));
        }
        let mut seen = HashSet::new();
        for tap in self.taps() {
            if !seen.insert(tap) {
                return Err(Error::config(format!("{}: duplicate tap {tap}", self.name)));
            }
        }
        let taps = self.taps();
        let position = |name: &str| taps.iter().position(|t| *t == name);
        let mut last = None;
        for s in &self.style_taps {
            let Some(p) = position(s) else {
                return Err(Error::config(format!(
                    "{}: style tap {s} is not declared",
                    self.name
                )));
            };
            if last.is_some_and(|l| p <= l) {
                return Err(Error::config(format!(
                    "{}: style taps must be ordered shallow to deep",
                    self.name
                )));
            }
            last = Some(p);
        }
        if position(&self.content_tap).is_none() {
            return Err(Error::config(format!(
                "{}: content tap {} is not declared",
                self.name, self.content_tap
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            match l.kind {
                LayerKind::Conv => {
                    if ![1, 3, 7].contains(&l.kernel) || l.stride == 0 || l.channels_out == 0 {
                        return Err(Error::config(format!(
                            "{}: layer {i} conv needs kernel in {{1,3,7}}, stride >= 1 and channels_out >= 1",
                            self.name
                        )));
                    }
                }
                LayerKind::Maxpool if l.kernel != 2 || l.stride != 2 => {
                    return Err(Error::config(format!(
                        "{}: layer {i} maxpool must be 2x2 stride 2",
                        self.name
                    )));
                }
                LayerKind::BlockBegin if l.stride == 0 => {
                    return Err(Error::config(format!(
                        "{}: layer {i} block stride must be >= 1",
                        self.name
                    )));
                }
                _ => {}
            }
        }
        self.resolve().map(|_| ())
    }

    /// Resolve channel counts and parameter shapes.
    pub(crate) fn resolve(&self) -> Result<(Vec<Resolved>, Vec<ParamSpec>)> {
        let mut params = Vec::new();
        let mut resolved = Vec::with_capacity(self.layers.len());
        let mut channels = 3usize;
        let mut open: Option<(usize, usize)> = None; // (begin index, channels at begin)

        for (i, l) in self.layers.iter().enumerate() {
            let prefix = format!("layers.{i}");
            let r = match l.kind {
                LayerKind::Conv => {
                    let cout = self.scaled_channels(l.channels_out);
                    params.push(ParamSpec {
                        name: format!("{prefix}.weight"),
                        shape: vec![cout, channels, l.kernel, l.kernel],
                        role: ParamRole::ConvWeight,
                    });
                    if l.bias {
                        params.push(ParamSpec {
                            name: format!("{prefix}.bias"),
                            shape: vec![cout],
                            role: ParamRole::ConvBias,
                        });
                    }
                    let r = Resolved::Conv {
                        prefix,
                        cin: channels,
                        cout,
                        kernel: l.kernel,
                        stride: l.stride,
                        padding: l.padding,
                        bias: l.bias,
                    };
                    channels = cout;
                    r
                }
                LayerKind::Bn => {
                    push_bn(&mut params, &prefix, channels);
                    Resolved::Bn { prefix }
                }
                LayerKind::Relu => Resolved::Relu,
                LayerKind::Maxpool => Resolved::Maxpool,
                LayerKind::BlockBegin => {
                    if open.is_some() {
                        return Err(Error::config(format!(
                            "{}: nested block at layer {i}",
                            self.name
                        )));
                    }
                    open = Some((i, channels));
                    Resolved::BlockBegin {
                        placement: l.relu_placement,
                    }
                }
                LayerKind::BlockEnd => {
                    let Some((begin, cin)) = open.take() else {
                        return Err(Error::config(format!(
                            "{}: block_end at layer {i} without block_begin",
                            self.name
                        )));
                    };
                    let b = &self.layers[begin];
                    if b.channels_out != 0 && self.scaled_channels(b.channels_out) != channels {
                        return Err(Error::config(format!(
                            "{}: block at layer {begin} declares {} output channels but its body produces {channels}",
                            self.name,
                            self.scaled_channels(b.channels_out)
                        )));
                    }
                    let projection = if b.residual && b.skip_projection {
                        let p = format!("layers.{begin}.proj");
                        params.push(ParamSpec {
                            name: format!("{p}.weight"),
                            shape: vec![channels, cin, 1, 1],
                            role: ParamRole::ConvWeight,
                        });
                        push_bn(&mut params, &format!("layers.{begin}.proj_bn"), channels);
                        Some((p, cin, channels, b.stride))
                    } else {
                        if b.residual && cin != channels {
                            return Err(Error::config(format!(
                                "{}: residual block at layer {begin} changes channels {cin} -> {channels} without a projection",
                                self.name
                            )));
                        }
                        None
                    };
                    Resolved::BlockEnd {
                        residual: b.residual,
                        placement: b.relu_placement,
                        projection,
                    }
                }
            };
            resolved.push(r);
        }
        if let Some((begin, _)) = open {
            return Err(Error::config(format!(
                "{}: block opened at layer {begin} is never closed",
                self.name
            )));
        }
        Ok((resolved, params))
    }

    /// Parameter names and shapes implied by the spec, in build order.
    pub fn parameter_specs(&self) -> Result<Vec<ParamSpec>> {
        Ok(self.resolve()?.1)
    }

    /// Shape of every tap for a `1×3×h×w` input, checking that each
    /// convolution, pooling and residual add is well-formed at that size.
    pub fn tap_shapes(&self, h: usize, w: usize) -> Result<Vec<(String, [usize; 4])>> {
        let (resolved, _) = self.resolve()?;
        let mut out = Vec::new();
        let mut c = 3;
        let (mut h, mut w) = (h, w);
        let mut block_in = (0, 0, 0);
        for (i, (l, r)) in self.layers.iter().zip(&resolved).enumerate() {
            match r {
                Resolved::Conv {
                    cout,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let (Some(nh), Some(nw)) = (
                        conv_output_dim(h, *kernel, *stride, *padding),
                        conv_output_dim(w, *kernel, *stride, *padding),
                    ) else {
                        return Err(Error::config(format!(
                            "{}: input too small, layer {i} conv {kernel}x{kernel} does not fit {h}x{w}",
                            self.name
                        )));
                    };
                    (c, h, w) = (*cout, nh, nw);
                }
                Resolved::Maxpool => {
                    if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
                        return Err(Error::config(format!(
                            "{}: input too small or not divisible, layer {i} maxpool sees {h}x{w}",
                            self.name
                        )));
                    }
                    (h, w) = (h / 2, w / 2);
                }
                Resolved::BlockBegin { .. } => block_in = (c, h, w),
                Resolved::BlockEnd {
                    residual: true,
                    projection,
                    ..
                } => {
                    let skip = match projection {
                        Some((_, _, cout, stride)) => {
                            let d = |v| conv_output_dim(v, 1, *stride, 0).unwrap_or(0);
                            (*cout, d(block_in.1), d(block_in.2))
                        }
                        None => block_in,
                    };
                    if skip != (c, h, w) {
                        return Err(Error::config(format!(
                            "{}: residual add at layer {i} joins {:?} with {:?}",
                            self.name,
                            skip,
                            (c, h, w)
                        )));
                    }
                }
                _ => {}
            }
            if let Some(t) = &l.tap {
                out.push((t.clone(), [1, c, h, w]));
            }
        }
        Ok(out)
    }

    /// Wiring of every block, derived from the same fields the forward pass reads.
    pub fn block_wiring(&self) -> Vec<BlockWiring> {
        let mut out = Vec::new();
        let mut begin = None;
        for (i, l) in self.layers.iter().enumerate() {
            match l.kind {
                LayerKind::BlockBegin => begin = Some(i),
                LayerKind::BlockEnd => {
                    if let Some(b) = begin.take() {
                        let bl = &self.layers[b];
                        out.push(BlockWiring {
                            begin: b,
                            end: i,
                            residual: bl.residual,
                            add_consumes_pre_relu: bl.relu_placement == ReluPlacement::PreAdd,
                            relu_follows_add: bl.relu_placement == ReluPlacement::PostAdd,
                        });
                    }
                }
                _ => {}
            }
        }
        out
    }
}

fn push_bn(params: &mut Vec<ParamSpec>, prefix: &str, channels: usize) {
    for (suffix, role) in [
        ("gamma", ParamRole::BnGamma),
        ("beta", ParamRole::BnBeta),
        ("running_mean", ParamRole::BnMean),
        ("running_var", ParamRole::BnVar),
    ] {
        params.push(ParamSpec {
            name: format!("{prefix}.{suffix}"),
            shape: vec![channels],
            role,
        });
    }
}

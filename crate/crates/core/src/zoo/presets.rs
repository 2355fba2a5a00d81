//! The architecture family used for the residual-connection ablation.

use std::fmt;
use std::str::FromStr;

use super::spec::{ArchSpec, LayerSpec, ReluPlacement};
use crate::{Error, Result};

/// Channel scale used for desk-scale runs.
pub const DESK_WIDTH_SCALE: f64 = 0.25;
/// Widening applied by the `wrn` preset.
pub const WRN_WIDEN_FACTOR: usize = 2;

pub const VGG_BETA: f64 = 4e10;
pub const RESNET_BETA: f64 = 1e17;

const STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];
const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
const RESNET_STYLE_TAPS: [&str; 5] = ["conv1_2", "conv2_3", "conv3_4", "conv4_6", "conv5_3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Vgg19,
    Resnet50,
    Noresnet,
    PseudoVgg,
    PseudoResvgg,
    Wrn,
    Resnet50Preact,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Vgg19,
        Preset::Resnet50,
        Preset::Noresnet,
        Preset::PseudoVgg,
        Preset::PseudoResvgg,
        Preset::Wrn,
        Preset::Resnet50Preact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Vgg19 => "vgg19",
            Preset::Resnet50 => "resnet50",
            Preset::Noresnet => "noresnet",
            Preset::PseudoVgg => "pseudo_vgg",
            Preset::PseudoResvgg => "pseudo_resvgg",
            Preset::Wrn => "wrn",
            Preset::Resnet50Preact => "resnet50_preact",
        }
    }

    /// Desk-scale spec (`width_scale` 0.25); call
    /// [`ArchSpec::with_width_scale`] with 1.0 for full widths.
    pub fn spec(self) -> ArchSpec {
        let block = |bottleneck, residual, placement| ResnetOptions {
            bottleneck,
            residual,
            placement,
            stem_kernel: 7,
            pool_between_stages: false,
        };
        let s = match self {
            Preset::Vgg19 => vgg19(),
            Preset::Resnet50 => resnet_like(block(true, true, ReluPlacement::PostAdd)),
            Preset::Noresnet => resnet_like(block(true, false, ReluPlacement::PostAdd)),
            Preset::PseudoVgg | Preset::PseudoResvgg => resnet_like(ResnetOptions {
                bottleneck: false,
                residual: self == Preset::PseudoResvgg,
                placement: ReluPlacement::PostAdd,
                stem_kernel: 3,
                pool_between_stages: true,
            }),
            Preset::Wrn => resnet_like(block(true, true, ReluPlacement::PostAdd))
                .with_widen_factor(WRN_WIDEN_FACTOR),
            Preset::Resnet50Preact => resnet_like(block(true, true, ReluPlacement::PreAdd)),
        };
        ArchSpec {
            name: self.name().to_string(),
            width_scale: DESK_WIDTH_SCALE,
            ..s
        }
    }

    /// True for the networks that carry identity skips.
    pub fn is_residual(self) -> bool {
        !matches!(self, Preset::Vgg19 | Preset::Noresnet | Preset::PseudoVgg)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::usage(format!(
                    "unknown architecture {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Convenience for `name.parse::<Preset>()?.spec()`.
pub fn preset(name: &str) -> Result<ArchSpec> {
    Ok(name.parse::<Preset>()?.spec())
}

fn vgg19() -> ArchSpec {
    let stages: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)];
    let mut layers = Vec::new();
    for (s, &(width, count)) in stages.iter().enumerate() {
        if s > 0 {
            layers.push(LayerSpec::maxpool());
        }
        for i in 1..=count {
            layers.push(LayerSpec::conv(width, 3, 1, 1));
            layers.push(LayerSpec::relu().tapped(&format!("conv{}_{i}", s + 1)));
        }
    }
    ArchSpec {
        name: "vgg19".into(),
        layers,
        width_scale: 1.0,
        widen_factor: 1,
        style_taps: ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"]
            .map(String::from)
            .to_vec(),
        content_tap: "conv4_2".into(),
        beta: VGG_BETA,
    }
}

struct ResnetOptions {
    bottleneck: bool,
    residual: bool,
    placement: ReluPlacement,
    stem_kernel: usize,
    pool_between_stages: bool,
}

fn resnet_like(o: ResnetOptions) -> ArchSpec {
    let mut layers = vec![
        LayerSpec::conv(64, o.stem_kernel, 2, o.stem_kernel / 2).without_bias(),
        LayerSpec::bn(),
        LayerSpec::relu().tapped("conv1_1"),
        LayerSpec::maxpool().tapped("conv1_2"),
    ];
    let mut channels = 64;
    for (stage, (&blocks, &width)) in STAGE_BLOCKS.iter().zip(&STAGE_WIDTHS).enumerate() {
        let downsample = stage > 0;
        if downsample && o.pool_between_stages {
            layers.push(LayerSpec::maxpool());
        }
        let out = if o.bottleneck { 4 * width } else { width };
        for b in 0..blocks {
            let stride = if b == 0 && downsample && !o.pool_between_stages {
                2
            } else {
                1
            };
            let projection = b == 0 && (stride != 1 || channels != out);
            layers.push(LayerSpec::block_begin(
                o.residual,
                projection,
                out,
                stride,
                o.placement,
            ));
            if o.bottleneck {
                layers.extend([
                    LayerSpec::conv(width, 1, 1, 0).without_bias(),
                    LayerSpec::bn(),
                    LayerSpec::relu(),
                    LayerSpec::conv(width, 3, stride, 1).without_bias(),
                    LayerSpec::bn(),
                    LayerSpec::relu(),
                    LayerSpec::conv(out, 1, 1, 0).without_bias(),
                    LayerSpec::bn(),
                ]);
            } else {
                layers.extend([
                    LayerSpec::conv(width, 3, stride, 1).without_bias(),
                    LayerSpec::bn(),
                    LayerSpec::relu(),
                    LayerSpec::conv(width, 3, 1, 1).without_bias(),
                    LayerSpec::bn(),
                ]);
            }
            layers.push(LayerSpec::block_end().tapped(&format!("conv{}_{}", stage + 2, b + 1)));
            channels = out;
        }
    }
    ArchSpec {
        name: String::new(),
        layers,
        width_scale: 1.0,
        widen_factor: 1,
        style_taps: RESNET_STYLE_TAPS.map(String::from).to_vec(),
        content_tap: "conv4_6".into(),
        beta: RESNET_BETA,
    }
}

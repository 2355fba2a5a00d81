//! Architecture zoo: declarative specs, presets, seeded initialization and
//! forward evaluation with named taps.

mod network;
mod presets;
mod spec;

pub use network::{FeatureMaps, FeatureTaps, Network, Provenance, BN_EPS, MIN_INPUT_SIZE};
pub use presets::{
    preset, Preset, DESK_WIDTH_SCALE, RESNET_BETA, VGG_BETA, WRN_WIDEN_FACTOR,
};
pub use spec::{ArchSpec, BlockWiring, LayerKind, LayerSpec, ParamRole, ParamSpec, ReluPlacement};

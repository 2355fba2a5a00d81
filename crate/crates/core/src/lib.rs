//! Style transfer engine with activation diagnostics.

pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod losses;
pub mod optim;
pub mod reference;
pub mod tensor;
pub mod weights;
pub mod zoo;

pub use error::{BundleError, Error, Result};
pub use tensor::{Precision, Real, Tape, Tensor, Var};
pub use zoo::{ArchSpec, FeatureMaps, FeatureTaps, Network, Preset};

//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swag_core::zoo::preset;
use swag_core::{Network, Real, Tensor};

/// One convolution workload: input `[1, cin, hw, hw]`, `cout` filters of `k×k`.
#[derive(Debug, Clone, Copy)]
pub struct ConvCase {
    pub name: &'static str,
    pub cin: usize,
    pub cout: usize,
    pub hw: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Shapes met in desk-scale VGG and ResNet passes at 128².
pub const CONV_CASES: [ConvCase; 4] = [
    ConvCase { name: "vgg_conv1_3x3", cin: 3, cout: 16, hw: 128, k: 3, stride: 1, padding: 1 },
    ConvCase { name: "vgg_conv3_3x3", cin: 64, cout: 64, hw: 32, k: 3, stride: 1, padding: 1 },
    ConvCase { name: "resnet_stem_7x7", cin: 3, cout: 16, hw: 128, k: 7, stride: 2, padding: 3 },
    ConvCase { name: "resnet_1x1", cin: 64, cout: 256, hw: 32, k: 1, stride: 1, padding: 0 },
];

pub fn uniform<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.random_range(-1.0..1.0)))
}

impl ConvCase {
    pub fn tensors<T: Real>(&self) -> (Tensor<T>, Tensor<T>) {
        (
            uniform(&[1, self.cin, self.hw, self.hw], 1),
            uniform(&[self.cout, self.cin, self.k, self.k], 2),
        )
    }

    pub fn flops(&self) -> u64 {
        let out = (self.hw + 2 * self.padding - self.k) / self.stride + 1;
        2 * (self.cout * out * out * self.cin * self.k * self.k) as u64
    }
}

/// Seeded random desk-scale network.
pub fn desk_net<T: Real>(arch: &str) -> Network<T> {
    Network::init_random(preset(arch).expect("known preset"), 0).expect("valid preset")
}

/// A normalized-range image tensor of side `hw`.
pub fn image<T: Real>(hw: usize, seed: u64) -> Tensor<T> {
    uniform(&[1, 3, hw, hw], seed).map(|v| v * T::of(2.0))
}

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::{ArchSpec, ParamRole, ReluPlacement, Resolved};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Smallest spatial input the zoo accepts.
pub const MIN_INPUT_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Random,
    Imported,
}

/// Frozen feature extractor: an architecture plus its parameters.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ArchSpec,
    params: BTreeMap<String, Tensor<T>>,
    seed: u64,
    provenance: Provenance,
    resolved: Vec<Resolved>,
}

/// Tap name → activation handle, in declaration order.
#[derive(Debug, Clone, Default)]
pub struct FeatureTaps {
    entries: Vec<(String, Var)>,
}

impl FeatureTaps {
    pub fn from_entries(entries: Vec<(String, Var)>) -> Self {
        FeatureTaps { entries }
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Detach the recorded values from the tape.
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> FeatureMaps<T> {
        FeatureMaps {
            entries: self
                .entries
                .iter()
                .map(|(n, v)| (n.clone(), tape.value(*v).clone()))
                .collect(),
        }
    }
}

/// Tap name → activation values, detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> FeatureMaps<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        FeatureMaps { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Record every map on `tape` as a constant.
    pub fn to_tape(&self, tape: &mut Tape<T>) -> Result<FeatureTaps> {
        let mut entries = Vec::with_capacity(self.entries.len());
        for (n, t) in &self.entries {
            entries.push((n.clone(), tape.constant(t.clone())?));
        }
        Ok(FeatureTaps { entries })
    }
}

impl<T: Real> Network<T> {
    /// Kaiming-normal (fan-out, ReLU gain) conv weights, zero biases, and
    /// identity batch-norm statistics, all drawn from one seeded stream.
    pub fn init_random(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (resolved, specs) = spec.resolve()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for p in specs {
            let n: usize = p.shape.iter().product();
            let data: Vec<T> = match p.role {
                ParamRole::ConvWeight => {
                    let fan_out = p.shape[0] * p.shape[2] * p.shape[3];
                    let std = (2.0 / fan_out as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
                }
                ParamRole::ConvBias | ParamRole::BnBeta | ParamRole::BnMean => vec![T::zero(); n],
                ParamRole::BnGamma | ParamRole::BnVar => vec![T::one(); n],
            };
            params.insert(p.name, Tensor::new(p.shape, data)?);
        }
        Ok(Network {
            spec,
            params,
            seed,
            provenance: Provenance::Random,
            resolved,
        })
    }

    /// Assemble a network from externally supplied parameters. Every
    /// parameter the spec implies must be present with the implied shape.
    pub fn from_parameters(
        spec: ArchSpec,
        mut params: BTreeMap<String, Tensor<T>>,
        seed: u64,
        provenance: Provenance,
    ) -> Result<Self> {
        use crate::BundleError;
        spec.validate()?;
        let (resolved, specs) = spec.resolve()?;
        let mut out = BTreeMap::new();
        for p in specs {
            let t = params
                .remove(&p.name)
                .ok_or_else(|| BundleError::Missing(p.name.clone()))?;
            if t.shape() != p.shape.as_slice() {
                return Err(BundleError::ShapeMismatch {
                    name: p.name,
                    expected: p.shape,
                    found: t.shape().to_vec(),
                }
                .into());
            }
            if !t.is_finite() {
                return Err(Error::NonFinite {
                    site: format!("parameter {}", p.name),
                });
            }
            if matches!(p.role, ParamRole::BnVar) && t.data().iter().any(|&v| v < T::zero()) {
                return Err(Error::config(format!("{} has negative entries", p.name)));
            }
            out.insert(p.name, t);
        }
        if let Some(extra) = params.into_keys().next() {
            return Err(BundleError::Unexpected(extra).into());
        }
        Ok(Network {
            spec,
            params: out,
            seed,
            provenance,
            resolved,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    fn param(&self, name: &str) -> &Tensor<T> {
        &self.params[name]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (n, c, h, w) = x.dims4()?;
        if n != 1 || c != 3 {
            return Err(Error::config(format!(
                "network input must be 1x3xHxW, got {:?}",
                x.shape()
            )));
        }
        if h < MIN_INPUT_SIZE || w < MIN_INPUT_SIZE {
            return Err(Error::config(format!(
                "input {h}x{w} is smaller than the {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE} minimum"
            )));
        }
        self.spec.tap_shapes(h, w).map(|_| ())
    }

    /// Activations at every declared tap.
    pub fn forward_taps(&self, tape: &mut Tape<T>, x: Var) -> Result<FeatureTaps> {
        self.forward_impl(tape, x, None)
    }

    /// Activations at the named taps only; evaluation stops after the deepest one.
    pub fn forward_selected(&self, tape: &mut Tape<T>, x: Var, names: &[&str]) -> Result<FeatureTaps> {
        for n in names {
            if !self.spec.taps().contains(n) {
                return Err(Error::config(format!(
                    "{} has no tap named {n}",
                    self.spec.name
                )));
            }
        }
        self.forward_impl(tape, x, Some(names))
    }

    /// Tape-free evaluation returning detached tap values.
    pub fn features(&self, image: &Tensor<T>, names: Option<&[&str]>) -> Result<FeatureMaps<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone())?;
        let taps = self.forward_impl(&mut tape, x, names)?;
        Ok(taps.values(&tape))
    }

    fn forward_impl(&self, tape: &mut Tape<T>, x: Var, names: Option<&[&str]>) -> Result<FeatureTaps> {
        self.check_input(tape.value(x))?;
        let wanted = |t: &str| names.is_none_or(|n| n.contains(&t));
        let last = self
            .spec
            .layers
            .iter()
            .rposition(|l| l.tap.as_deref().is_some_and(wanted))
            .ok_or_else(|| Error::config("no taps requested"))?;

        let eps = T::of(BN_EPS);
        let mut taps = Vec::new();
        let mut current = x;
        let mut stream: Option<Var> = None;
        let mut skip: Option<Var> = None;

        for (i, (layer, r)) in self.spec.layers[..=last]
            .iter()
            .zip(&self.resolved)
            .enumerate()
        {
            let site = self.site(i);
            let step = |res: Result<Var>| res.map_err(|e| e.at(&site));
            match r {
                Resolved::Conv {
                    prefix,
                    stride,
                    padding,
                    bias,
                    ..
                } => {
                    let w = tape.constant(self.param(&format!("{prefix}.weight")).clone())?;
                    let b = if *bias {
                        Some(tape.constant(self.param(&format!("{prefix}.bias")).clone())?)
                    } else {
                        None
                    };
                    current = step(tape.conv2d(current, w, b, *stride, *padding))?;
                }
                Resolved::Bn { prefix } => current = step(self.bn(tape, current, prefix, eps))?,
                Resolved::Relu => current = step(tape.relu(current))?,
                Resolved::Maxpool => current = step(tape.max_pool2d(current, 2, 2))?,
                Resolved::BlockBegin { placement } => {
                    skip = Some(match placement {
                        ReluPlacement::PreAdd => stream.unwrap_or(current),
                        ReluPlacement::PostAdd => current,
                    });
                }
                Resolved::BlockEnd {
                    residual,
                    placement,
                    projection,
                } => {
                    let source = skip.take().expect("validated block structure");
                    let sum = if *residual {
                        let identity = match projection {
                            Some((prefix, _, _, stride)) => {
                                let w = tape.constant(self.param(&format!("{prefix}.weight")).clone())?;
                                let p = step(tape.conv2d(source, w, None, *stride, 0))?;
                                let bn_prefix = prefix.replace(".proj", ".proj_bn");
                                step(self.bn(tape, p, &bn_prefix, eps))?
                            }
                            None => source,
                        };
                        step(tape.add(current, identity))?
                    } else {
                        current
                    };
                    stream = match placement {
                        ReluPlacement::PreAdd => Some(sum),
                        ReluPlacement::PostAdd => None,
                    };
                    current = step(tape.relu(sum))?;
                }
            }
            if let Some(t) = layer.tap.as_deref() {
                if wanted(t) {
                    taps.push((t.to_string(), current));
                }
            }
        }
        Ok(FeatureTaps { entries: taps })
    }

    fn bn(&self, tape: &mut Tape<T>, x: Var, prefix: &str, eps: T) -> Result<Var> {
        tape.batch_norm_eval(
            x,
            self.param(&format!("{prefix}.gamma")),
            self.param(&format!("{prefix}.beta")),
            self.param(&format!("{prefix}.running_mean")),
            self.param(&format!("{prefix}.running_var")),
            eps,
        )
    }

    /// Human-readable location of layer `i`: its own tap, or the next tap downstream.
    fn site(&self, i: usize) -> String {
        let layers = &self.spec.layers;
        match layers[i..].iter().find_map(|l| l.tap.as_deref()) {
            Some(t) if layers[i].tap.as_deref() == Some(t) => format!("tap {t}"),
            Some(t) => format!("layer {i} ({:?}) before tap {t}", layers[i].kind),
            None => format!("layer {i} ({:?})", layers[i].kind),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::presets::Preset;
    use crate::zoo::spec::LayerSpec;

    fn image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        Tensor::from_fn(vec![1, 3, h, w], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f32 / (1u64 << 24) as f32) * 4.0 - 2.0
        })
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = Network::<f32>::init_random(Preset::Resnet50.spec(), 3).unwrap();
        let b = Network::<f32>::init_random(Preset::Resnet50.spec(), 3).unwrap();
        let c = Network::<f32>::init_random(Preset::Resnet50.spec(), 4).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), c.parameters());
        assert_eq!(a.provenance(), Provenance::Random);
    }

    #[test]
    fn bn_parameters_after_init() {
        let net = Network::<f32>::init_random(Preset::Resnet50.spec(), 0).unwrap();
        for (name, t) in net.parameters() {
            let expect = if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Some(1.0)
            } else if name.ends_with(".beta") || name.ends_with(".running_mean") {
                Some(0.0)
            } else {
                None
            };
            if let Some(v) = expect {
                assert!(t.data().iter().all(|&x| x == v), "{name}");
            }
        }
    }

    #[test]
    fn kaiming_fan_out_std() {
        let spec = ArchSpec {
            name: "wide".into(),
            layers: vec![
                LayerSpec::conv(256, 3, 1, 1).tapped("a"),
                LayerSpec::conv(256, 3, 1, 1).tapped("b"),
            ],
            width_scale: 1.0,
            widen_factor: 1,
            style_taps: vec!["a".into()],
            content_tap: "b".into(),
            beta: 1.0,
        };
        let net = Network::<f64>::init_random(spec, 11).unwrap();
        let w = &net.parameters()["layers.1.weight"];
        assert_eq!(w.shape(), &[256, 256, 3, 3]);
        let n = w.len() as f64;
        let mean = w.sum_f64() / n;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let want = (2.0 / (256.0 * 9.0f64)).sqrt();
        assert!((var.sqrt() / want - 1.0).abs() < 0.05, "std {} vs {want}", var.sqrt());
        assert!(net.parameters()["layers.1.bias"].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn vgg_first_tap_keeps_resolution() {
        let net = Network::<f32>::init_random(Preset::Vgg19.spec().with_width_scale(1.0), 0).unwrap();
        let maps = net.features(&image(128, 128, 1), Some(&["conv1_1"])).unwrap();
        assert_eq!(maps.get("conv1_1").unwrap().shape(), &[1, 64, 128, 128]);
    }

    #[test]
    fn resnet_deepest_tap_is_4x4() {
        let net = Network::<f32>::init_random(Preset::Resnet50.spec(), 0).unwrap();
        let maps = net.features(&image(128, 128, 2), None).unwrap();
        assert_eq!(maps.get("conv5_3").unwrap().shape(), &[1, 512, 4, 4]);
        assert_eq!(maps.names(), net.spec().taps());
        for (name, shape) in net.spec().tap_shapes(128, 128).unwrap() {
            assert_eq!(maps.get(&name).unwrap().shape(), &shape);
        }
    }

    #[test]
    fn zero_image_gives_zero_taps() {
        for p in [Preset::Vgg19, Preset::Resnet50, Preset::PseudoResvgg, Preset::Resnet50Preact] {
            let net = Network::<f32>::init_random(p.spec(), 5).unwrap();
            let maps = net.features(&Tensor::zeros(vec![1, 3, 64, 64]), None).unwrap();
            for (name, t) in maps.iter() {
                assert!(t.data().iter().all(|&v| v == 0.0), "{p} {name}");
            }
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let net = Network::<f32>::init_random(Preset::PseudoResvgg.spec(), 9).unwrap();
        let x = image(64, 64, 3);
        assert_eq!(net.features(&x, None).unwrap(), net.features(&x, None).unwrap());
    }

    #[test]
    fn preact_differs_from_post_add() {
        let a = Network::<f32>::init_random(Preset::Resnet50.spec(), 1).unwrap();
        let b = Network::<f32>::init_random(Preset::Resnet50Preact.spec(), 1).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        let x = image(64, 64, 4);
        let fa = a.features(&x, Some(&["conv2_3"])).unwrap();
        let fb = b.features(&x, Some(&["conv2_3"])).unwrap();
        assert_ne!(fa, fb);
    }

    #[test]
    fn small_inputs_rejected() {
        let net = Network::<f32>::init_random(Preset::Resnet50.spec(), 0).unwrap();
        assert!(matches!(
            net.features(&Tensor::zeros(vec![1, 3, 16, 16]), None),
            Err(Error::Config(_))
        ));
        // 36 survives the stem but hits an odd size at a pooling or stride step
        let pv = Network::<f32>::init_random(Preset::PseudoVgg.spec(), 0).unwrap();
        assert!(matches!(
            pv.features(&Tensor::zeros(vec![1, 3, 36, 36]), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn selected_taps_stop_early() {
        let net = Network::<f32>::init_random(Preset::Vgg19.spec(), 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(image(64, 64, 5)).unwrap();
        let taps = net.forward_selected(&mut tape, x, &["conv2_1"]).unwrap();
        let short = tape.len();
        assert_eq!(taps.names(), ["conv2_1"]);
        let mut tape2 = Tape::new();
        let x = tape2.constant(image(64, 64, 5)).unwrap();
        net.forward_taps(&mut tape2, x).unwrap();
        assert!(short < tape2.len());
        assert!(net.forward_selected(&mut tape, x, &["nope"]).is_err());
    }
}

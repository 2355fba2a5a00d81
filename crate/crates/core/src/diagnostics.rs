//! Activation and Gram statistics, activation tracks, PSNR, and the
//! reference-network style loss.
//!
//! Entropies are Shannon entropies of the joint softmax over a tap's entries
//! (or a Gram matrix's entries), divided by `ln N` so that a uniform
//! distribution scores exactly 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imageio::{self, ImageBuffer};
use crate::losses::{smooth_tensor, style_loss_value, GramMatrix, LossConfig};
use crate::tensor::{Real, Tensor};
use crate::zoo::{FeatureMaps, Network};
use crate::{Error, Result};

/// `−Σ p ln p / ln N` with `p = softmax(values)`; 1.0 for a single entry.
pub fn normalized_entropy<T: Real>(values: &[T]) -> f64 {
    let n = values.len();
    if n <= 1 {
        return 1.0;
    }
    let max = values.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut weighted = 0.0;
    for v in values {
        let s = v.f64() - max;
        let e = s.exp();
        z += e;
        weighted += e * s;
    }
    // H = ln Z − Σ p·s
    let h = z.ln() - weighted / z;
    (h / (n as f64).ln()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxEntropy {
    pub max: f64,
    pub entropy: f64,
}

fn checked<'a, T: Real>(name: &str, f: &'a Tensor<T>) -> Result<&'a Tensor<T>> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFinite {
            site: format!("tap {name}"),
        })
    }
}

fn prepared<T: Real>(name: &str, f: &Tensor<T>, smoothed: bool, temperature: f64) -> Result<Tensor<T>> {
    let f = checked(name, f)?;
    Ok(if smoothed { smooth_tensor(f, temperature) } else { f.clone() })
}

/// Maximum entry and normalized entropy of one tap.
pub fn activation_stat<T: Real>(name: &str, f: &Tensor<T>, smoothed: bool, temperature: f64) -> Result<MaxEntropy> {
    let f = prepared(name, f, smoothed, temperature)?;
    Ok(MaxEntropy {
        max: f.max_value().f64(),
        entropy: normalized_entropy(f.data()),
    })
}

/// Maximum entry and normalized entropy of one tap's Gram matrix.
pub fn gram_stat<T: Real>(name: &str, f: &Tensor<T>, smoothed: bool, temperature: f64) -> Result<MaxEntropy> {
    let f = prepared(name, f, smoothed, temperature)?;
    let g = GramMatrix::compute(name, &f)?;
    Ok(MaxEntropy {
        max: g.values.max_value().f64(),
        entropy: normalized_entropy(g.values.data()),
    })
}

pub fn activation_stats<T: Real>(maps: &FeatureMaps<T>, smoothed: bool) -> Result<Vec<(String, MaxEntropy)>> {
    if maps.is_empty() {
        return Err(Error::usage("activation statistics need at least one tap"));
    }
    maps.iter()
        .map(|(n, f)| Ok((n.to_string(), activation_stat(n, f, smoothed, 1.0)?)))
        .collect()
}

pub fn gram_stats<T: Real>(maps: &FeatureMaps<T>, smoothed: bool) -> Result<Vec<(String, MaxEntropy)>> {
    if maps.is_empty() {
        return Err(Error::usage("gram statistics need at least one tap"));
    }
    maps.iter()
        .map(|(n, f)| Ok((n.to_string(), gram_stat(n, f, smoothed, 1.0)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapStats {
    pub tap: String,
    pub depth_index: usize,
    pub max_activation: f64,
    pub activation_entropy: f64,
    pub gram_max: f64,
    pub gram_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub arch: String,
    pub seed: u64,
    pub image: String,
    pub smoothed: bool,
    pub taps: Vec<TapStats>,
}

impl StatsReport {
    pub fn tap(&self, name: &str) -> Option<&TapStats> {
        self.taps.iter().find(|t| t.tap == name)
    }
}

/// Both statistics for every tap in `maps`, depth-indexed in map order.
pub fn tap_stats<T: Real>(
    maps: &FeatureMaps<T>,
    smoothed: bool,
    temperature: f64,
    arch: &str,
    seed: u64,
    image: &str,
) -> Result<StatsReport> {
    if maps.is_empty() {
        return Err(Error::usage("statistics need at least one tap"));
    }
    let mut taps = Vec::with_capacity(maps.len());
    for (depth_index, (name, f)) in maps.iter().enumerate() {
        let f = prepared(name, f, smoothed, temperature)?;
        let g = GramMatrix::compute(name, &f)?;
        taps.push(TapStats {
            tap: name.to_string(),
            depth_index,
            max_activation: f.max_value().f64(),
            activation_entropy: normalized_entropy(f.data()),
            gram_max: g.values.max_value().f64(),
            gram_entropy: normalized_entropy(g.values.data()),
        });
    }
    Ok(StatsReport {
        arch: arch.to_string(),
        seed,
        image: image.to_string(),
        smoothed,
        taps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapSummary {
    pub tap: String,
    pub depth_index: usize,
    pub count: usize,
    pub max_activation: MeanStd,
    pub activation_entropy: MeanStd,
    pub gram_max: MeanStd,
    pub gram_entropy: MeanStd,
}

/// Mean and standard deviation per tap across reports (images × seeds).
pub fn summarize(reports: &[StatsReport]) -> Vec<TapSummary> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    first
        .taps
        .iter()
        .map(|t| {
            let rows: Vec<&TapStats> = reports.iter().filter_map(|r| r.tap(&t.tap)).collect();
            let col = |f: fn(&TapStats) -> f64| MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            TapSummary {
                tap: t.tap.clone(),
                depth_index: t.depth_index,
                count: rows.len(),
                max_activation: col(|r| r.max_activation),
                activation_entropy: col(|r| r.activation_entropy),
                gram_max: col(|r| r.gram_max),
                gram_entropy: col(|r| r.gram_entropy),
            }
        })
        .collect()
}

/// How one value is read from a tap's grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackRule {
    /// Maximum over channels.
    #[default]
    ChannelMax,
    /// One seeded random channel per position and tap.
    RandomChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub taps: Vec<String>,
    /// `(u, v)` = (column, row) in input-image pixels.
    pub positions: Vec<(usize, usize)>,
    /// `values[position][tap]`.
    pub values: Vec<Vec<f64>>,
    pub rule: TrackRule,
}

impl TrackSet {
    /// Largest tracked value at tap index `t` across positions.
    pub fn max_at(&self, t: usize) -> f64 {
        self.values.iter().map(|v| v[t]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Nearest-neighbour grid index: `round(coord · layer / image)`, clamped.
pub fn map_coordinate(coord: usize, image_len: usize, layer_len: usize) -> usize {
    let scaled = (coord as f64 * layer_len as f64 / image_len as f64 + 0.5).floor() as usize;
    scaled.min(layer_len - 1)
}

/// Follow randomly sampled image positions through the listed taps.
pub fn activation_tracks<T: Real>(
    net: &Network<T>,
    image: &Tensor<T>,
    taps: &[&str],
    n_positions: usize,
    seed: u64,
    rule: TrackRule,
) -> Result<TrackSet> {
    if n_positions == 0 {
        return Err(Error::usage("activation tracks need at least one position"));
    }
    let (_, _, h0, w0) = image.dims4()?;
    let maps = net.features(image, Some(taps))?;
    tracks_from_maps(&maps, taps, h0, w0, n_positions, seed, rule)
}

/// Track extraction over precomputed taps of an `h0×w0` image.
pub fn tracks_from_maps<T: Real>(
    maps: &FeatureMaps<T>,
    taps: &[&str],
    h0: usize,
    w0: usize,
    n_positions: usize,
    seed: u64,
    rule: TrackRule,
) -> Result<TrackSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<(usize, usize)> = (0..n_positions)
        .map(|_| (rng.random_range(0..w0), rng.random_range(0..h0)))
        .collect();
    let mut values = vec![Vec::with_capacity(taps.len()); n_positions];
    for name in taps {
        let f = maps
            .get(name)
            .ok_or_else(|| Error::config(format!("no tap named {name}")))?;
        let f = checked(name, f)?;
        let (_, c, h, w) = f.dims4()?;
        let d = f.data();
        for (p, &(u, v)) in positions.iter().enumerate() {
            let (col, row) = (map_coordinate(u, w0, w), map_coordinate(v, h0, h));
            let at = |ch: usize| d[(ch * h + row) * w + col].f64();
            let value = match rule {
                TrackRule::ChannelMax => (0..c).map(at).fold(f64::NEG_INFINITY, f64::max),
                TrackRule::RandomChannel => at(rng.random_range(0..c)),
            };
            values[p].push(value);
        }
    }
    Ok(TrackSet {
        taps: taps.iter().map(|t| t.to_string()).collect(),
        positions,
        values,
        rule,
    })
}

/// `10·log10(1 / MSE)` over values in `[0, 1]`; `+∞` when identical.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::usage(format!(
            "psnr needs equal, non-empty inputs ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

pub fn psnr_images(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::usage("psnr image size mismatch"));
    }
    psnr(&a.unit_values(), &b.unit_values())
}

/// PSNR between two normalized image tensors after denormalizing to `[0, 1]`.
pub fn psnr_normalized<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::usage("psnr shape mismatch"));
    }
    psnr(&imageio::denormalize_unit(a)?, &imageio::denormalize_unit(b)?)
}

/// Standard (unsmoothed) style loss of `stylized` against `style`, measured
/// at the reference network's style taps. An evaluation metric only.
pub fn reference_style_loss<T: Real>(stylized: &Tensor<T>, style: &Tensor<T>, reference: &Network<T>) -> Result<f64> {
    let spec = reference.spec();
    if spec.style_taps.len() != 5 {
        return Err(Error::config(format!(
            "reference network {} must have five style taps, has {}",
            spec.name,
            spec.style_taps.len()
        )));
    }
    let taps: Vec<&str> = spec.style_taps.iter().map(String::as_str).collect();
    let cfg = LossConfig::for_arch(spec).with_swag(false);
    let x = reference.features(stylized, Some(&taps))?;
    let s = reference.features(style, Some(&taps))?;
    style_loss_value(&x, &s, &cfg)
}

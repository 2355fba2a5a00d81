//! Gram-matrix style loss, feature content loss, and their softmax-smoothed
//! (SWAG) variants.
//!
//! The smoothed variants apply a joint softmax over all `D·M` entries of a
//! tap before the Gram matrix or difference is taken. The network itself is
//! never modified; smoothing only exists inside the loss.

use serde::{Deserialize, Serialize};

use crate::tensor::{gemm, MatRef, Real, Tape, Tensor, Var};
use crate::zoo::{ArchSpec, FeatureMaps, FeatureTaps};
use crate::{Error, Result};

/// Channel correlation matrix of one tap.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<T> {
    pub values: Tensor<T>,
    pub layer: String,
    pub d: usize,
    pub m: usize,
}

impl<T: Real> GramMatrix<T> {
    /// `G = F·Fᵀ` for a feature map viewed as `D×M`. The upper triangle is
    /// mirrored so the result is exactly symmetric.
    pub fn compute(layer: &str, features: &Tensor<T>) -> Result<Self> {
        let (d, m) = features.as_channels_by_positions()?;
        let f = MatRef::row_major(features.data(), d, m);
        let mut g = vec![T::zero(); d * d];
        gemm(T::one(), f, f.t(), T::zero(), &mut g);
        for i in 0..d {
            for j in 0..i {
                g[i * d + j] = g[j * d + i];
            }
        }
        Ok(GramMatrix {
            values: Tensor::new(vec![d, d], g)?,
            layer: layer.to_string(),
            d,
            m,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleWeight {
    pub tap: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// `w_l ∈ {0, 1}` per tap.
    pub style_weights: Vec<StyleWeight>,
    pub content_tap: String,
    pub alpha: f64,
    pub beta: f64,
    pub swag: bool,
    pub temperature: f64,
}

impl LossConfig {
    /// Every style tap of `spec` active, `α = 1`, the family's default `β`, `T = 1`.
    pub fn for_arch(spec: &ArchSpec) -> Self {
        LossConfig {
            style_weights: spec
                .style_taps
                .iter()
                .map(|t| StyleWeight {
                    tap: t.clone(),
                    weight: 1.0,
                })
                .collect(),
            content_tap: spec.content_tap.clone(),
            alpha: 1.0,
            beta: spec.beta,
            swag: false,
            temperature: 1.0,
        }
    }

    pub fn with_swag(mut self, swag: bool) -> Self {
        self.swag = swag;
        self
    }

    pub fn with_weights(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    /// Taps with `w_l = 1`.
    pub fn active_style_taps(&self) -> Vec<&str> {
        self.style_weights
            .iter()
            .filter(|w| w.weight != 0.0)
            .map(|w| w.tap.as_str())
            .collect()
    }

    /// Every tap the objective reads, style taps first.
    pub fn required_taps(&self) -> Vec<&str> {
        let mut taps = self.active_style_taps();
        if self.alpha != 0.0 && !taps.contains(&self.content_tap.as_str()) {
            taps.push(&self.content_tap);
        }
        taps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!(
                "alpha and beta must be finite and >= 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if let Some(w) = self
            .style_weights
            .iter()
            .find(|w| w.weight != 0.0 && w.weight != 1.0)
        {
            return Err(Error::config(format!(
                "style weight for {} must be 0 or 1, got {}",
                w.tap, w.weight
            )));
        }
        if self.beta > 0.0 && self.active_style_taps().is_empty() {
            return Err(Error::config("style loss is active but every style weight is 0"));
        }
        Ok(())
    }
}

/// Joint softmax over every entry of a feature map at temperature `T`.
pub fn smooth<T: Real>(tape: &mut Tape<T>, features: Var, temperature: f64) -> Result<Var> {
    tape.softmax(features, T::of(temperature))
}

/// `½‖Fx − Fc‖²`.
pub fn content_loss<T: Real>(tape: &mut Tape<T>, fx: Var, fc: Var) -> Result<Var> {
    let sq = tape.squared_distance(fx, fc)?;
    tape.scale(sq, T::of(0.5))
}

/// Content loss on smoothed features.
pub fn swag_content_loss<T: Real>(tape: &mut Tape<T>, fx: Var, fc: Var, temperature: f64) -> Result<Var> {
    let sx = smooth(tape, fx, temperature)?;
    let sc = smooth(tape, fc, temperature)?;
    content_loss(tape, sx, sc)
}

/// `‖G(Fx) − G_target‖² / (4 D² M²)` for one tap.
fn style_term<T: Real>(tape: &mut Tape<T>, fx: Var, target_gram: Var) -> Result<Var> {
    let (d, m) = tape.value(fx).as_channels_by_positions()?;
    let gx = tape.gram(fx)?;
    if tape.value(gx).shape() != tape.value(target_gram).shape() {
        return Err(Error::usage(format!(
            "gram shape mismatch {:?} vs {:?}",
            tape.value(gx).shape(),
            tape.value(target_gram).shape()
        )));
    }
    let sq = tape.squared_distance(gx, target_gram)?;
    let (d, m) = (d as f64, m as f64);
    tape.scale(sq, T::of(1.0 / (4.0 * d * d * m * m)))
}

fn sum_all<T: Real>(tape: &mut Tape<T>, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::config("no active style taps"))?;
    it.try_fold(first, |acc, t| tape.add(acc, t))
}

fn tap(taps: &FeatureTaps, name: &str, side: &str) -> Result<Var> {
    taps.get(name)
        .ok_or_else(|| Error::config(format!("{side} taps are missing {name}")))
}

fn style_loss_impl<T: Real>(
    tape: &mut Tape<T>,
    taps_x: &FeatureTaps,
    taps_s: &FeatureTaps,
    cfg: &LossConfig,
    smoothed: bool,
) -> Result<Var> {
    let mut terms = Vec::new();
    for name in cfg.active_style_taps() {
        let (mut fx, mut fs) = (tap(taps_x, name, "synthesis")?, tap(taps_s, name, "style")?);
        if tape.value(fx).shape() != tape.value(fs).shape() {
            return Err(Error::usage(format!("tap {name} shape mismatch")));
        }
        if smoothed {
            fx = smooth(tape, fx, cfg.temperature)?;
            fs = smooth(tape, fs, cfg.temperature)?;
        }
        let gs = tape.gram(fs)?;
        terms.push(style_term(tape, fx, gs)?);
    }
    sum_all(tape, terms)
}

/// `Σ_l w_l / (4 D_l² M_l²) ‖G(Fx_l) − G(Fs_l)‖²`.
pub fn style_loss<T: Real>(
    tape: &mut Tape<T>,
    taps_x: &FeatureTaps,
    taps_s: &FeatureTaps,
    cfg: &LossConfig,
) -> Result<Var> {
    style_loss_impl(tape, taps_x, taps_s, cfg, false)
}

/// Style loss with every feature map smoothed before its Gram matrix.
pub fn swag_style_loss<T: Real>(
    tape: &mut Tape<T>,
    taps_x: &FeatureTaps,
    taps_s: &FeatureTaps,
    cfg: &LossConfig,
) -> Result<Var> {
    style_loss_impl(tape, taps_x, taps_s, cfg, true)
}

/// Precomputed constant side of the objective: target Gram matrices and the
/// content features, smoothed first when the config asks for SWAG.
#[derive(Debug, Clone)]
pub struct Targets<T> {
    grams: Vec<(String, Tensor<T>)>,
    content: Option<Tensor<T>>,
}

impl<T: Real> Targets<T> {
    pub fn new(cfg: &LossConfig, style: &FeatureMaps<T>, content: Option<&FeatureMaps<T>>) -> Result<Self> {
        cfg.validate()?;
        let mut grams = Vec::new();
        if cfg.beta != 0.0 {
            for name in cfg.active_style_taps() {
                let f = style
                    .get(name)
                    .ok_or_else(|| Error::config(format!("style taps are missing {name}")))?;
                let f = if cfg.swag { smooth_tensor(f, cfg.temperature) } else { f.clone() };
                grams.push((name.to_string(), GramMatrix::compute(name, &f)?.values));
            }
        }
        let content = match content {
            Some(maps) if cfg.alpha != 0.0 => {
                let f = maps.get(&cfg.content_tap).ok_or_else(|| {
                    Error::config(format!("content taps are missing {}", cfg.content_tap))
                })?;
                Some(if cfg.swag { smooth_tensor(f, cfg.temperature) } else { f.clone() })
            }
            _ => None,
        };
        if cfg.alpha != 0.0 && content.is_none() {
            return Err(Error::config("alpha > 0 needs content features"));
        }
        Ok(Targets { grams, content })
    }
}

/// Handles to the three loss values recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub total: Var,
    pub content: Option<Var>,
    pub style: Option<Var>,
}

/// `α·L_content + β·L_style` against precomputed targets; SWAG variants when
/// `cfg.swag`.
pub fn total_objective<T: Real>(
    tape: &mut Tape<T>,
    taps_x: &FeatureTaps,
    targets: &Targets<T>,
    cfg: &LossConfig,
) -> Result<ObjectiveVars> {
    let content = match &targets.content {
        Some(c) if cfg.alpha != 0.0 => {
            let fx = tap(taps_x, &cfg.content_tap, "synthesis")?;
            let fc = tape.constant(c.clone())?;
            Some(if cfg.swag {
                let sx = smooth(tape, fx, cfg.temperature)?;
                content_loss(tape, sx, fc)?
            } else {
                content_loss(tape, fx, fc)?
            })
        }
        _ => None,
    };
    let style = if cfg.beta != 0.0 {
        let mut terms = Vec::new();
        for (name, g) in &targets.grams {
            let mut fx = tap(taps_x, name, "synthesis")?;
            if cfg.swag {
                fx = smooth(tape, fx, cfg.temperature)?;
            }
            let gs = tape.constant(g.clone())?;
            terms.push(style_term(tape, fx, gs)?);
        }
        Some(sum_all(tape, terms)?)
    } else {
        None
    };
    let mut parts = Vec::new();
    if let Some(c) = content {
        parts.push(tape.scale(c, T::of(cfg.alpha))?);
    }
    if let Some(s) = style {
        parts.push(tape.scale(s, T::of(cfg.beta))?);
    }
    let total = match parts.len() {
        0 => {
            return Err(Error::config("objective has neither a content nor a style term"));
        }
        _ => sum_all(tape, parts)?,
    };
    Ok(ObjectiveVars {
        total,
        content,
        style,
    })
}

/// Tape-free joint softmax.
pub fn smooth_tensor<T: Real>(features: &Tensor<T>, temperature: f64) -> Tensor<T> {
    let values = crate::tensor::softmax_values(features.data(), T::of(temperature));
    Tensor::new(features.shape().to_vec(), values).expect("same shape")
}

/// Style loss between two detached tap sets, evaluated without a gradient.
pub fn style_loss_value<T: Real>(
    taps_x: &FeatureMaps<T>,
    taps_s: &FeatureMaps<T>,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = taps_x.to_tape(&mut tape)?;
    let s = taps_s.to_tape(&mut tape)?;
    let v = if cfg.swag {
        swag_style_loss(&mut tape, &x, &s, cfg)?
    } else {
        style_loss(&mut tape, &x, &s, cfg)?
    };
    Ok(tape.scalar(v))
}

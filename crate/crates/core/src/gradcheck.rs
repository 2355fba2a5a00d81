//! Central finite-difference checks of tape gradients.
//!
//! [`suite`] covers every differentiable op and the four composite losses;
//! the core test suite and the acceptance runner both execute it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{content_loss, style_loss, swag_content_loss, swag_style_loss, LossConfig, StyleWeight};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::zoo::{FeatureMaps, FeatureTaps};
use crate::{Precision, Result};

/// Builds a scalar from the input leaf on a fresh tape.
pub type Builder<'a, T> = dyn Fn(&mut Tape<T>, Var) -> Result<Var> + 'a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub probes: Vec<Probe>,
}

impl CaseReport {
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` over the probed coordinates.
    pub fn rel_err(&self) -> f64 {
        let norm = |f: &dyn Fn(&Probe) -> f64| self.probes.iter().map(|p| f(p).powi(2)).sum::<f64>().sqrt();
        let diff = norm(&|p| p.analytic - p.numeric);
        let scale = norm(&|p| p.analytic).max(norm(&|p| p.numeric));
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }

    /// Worst single-coordinate error; noisy for f32 on near-zero entries.
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }
}

/// Pass threshold on [`CaseReport::rel_err`] per precision.
pub fn tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::F32 => 1e-3,
        Precision::F64 => 1e-5,
    }
}

fn step_size(precision: Precision) -> f64 {
    match precision {
        Precision::F32 => 3e-3,
        Precision::F64 => 1e-6,
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare the tape gradient of `build` at `x` with central differences at
/// `coords`. The floor of the relative error is `1e-3 · max|∇|` over the
/// probed coordinates, so exact zeros compare absolutely.
pub fn check<T: Real>(x: &Tensor<T>, coords: &[usize], eps: f64, build: &Builder<'_, T>) -> Result<Vec<Probe>> {
    let eval = |x: &Tensor<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone())?;
        let out = build(&mut tape, v)?;
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone())?;
    let out = build(&mut tape, v)?;
    tape.backward(out)?;
    let grad = tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut numeric = Vec::with_capacity(coords.len());
    for &i in coords {
        let base = x.data()[i].f64();
        let mut plus = x.clone();
        plus.data_mut()[i] = T::of(base + eps);
        let mut minus = x.clone();
        minus.data_mut()[i] = T::of(base - eps);
        // Divide by the step actually representable in T.
        let h = plus.data()[i].f64() - minus.data()[i].f64();
        numeric.push((eval(&plus)? - eval(&minus)?) / h);
    }
    let scale = coords
        .iter()
        .map(|&i| grad.data()[i].f64().abs())
        .fold(0.0, f64::max);
    let floor = (1e-3 * scale).max(1e-12);
    Ok(coords
        .iter()
        .zip(numeric)
        .map(|(&i, n)| {
            let a = grad.data()[i].f64();
            Probe {
                coord: i,
                analytic: a,
                numeric: n,
                rel_err: relative_error(a, n, floor),
            }
        })
        .collect())
}

/// `count` distinct coordinates (all of them when `len ≤ count`).
pub fn sample_coords(len: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(rng);
    all.truncate(count);
    all
}

/// Values bounded away from zero by `gap`, so ReLU kinks are never crossed.
fn away_from_zero<T: Real>(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = gap + rng.random_range(0.0..1.0);
        T::of(if rng.random_bool(0.5) { m } else { -m })
    })
}

/// Pairwise-distinct values (spacing `gap`) in random order, so max-pool
/// winners never switch under a perturbation smaller than `gap / 2`.
fn distinct<T: Real>(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Tensor::from_fn(shape.to_vec(), |i| T::of((idx[i] as f64 - n as f64 / 2.0) * gap))
}

fn uniform<T: Real>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.random_range(lo..hi)))
}

/// `‖y − (y₀ + δ)‖²` where `y₀` is the op's output at the probe point and
/// `δ` a random offset of the output's own scale. A residual of that size
/// keeps the scalar's rounding error well below the differences measured.
fn near_target<T: Real>(y0: &Tensor<T>, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let rms = (y0.data().iter().map(|v| v.f64().powi(2)).sum::<f64>() / y0.len() as f64).sqrt();
    let spread = rms.max(1e-6);
    let d = y0.data();
    Tensor::from_fn(y0.shape().to_vec(), |i| T::of(d[i].f64() + spread * rng.random_range(-1.0..1.0)))
}

fn perturbed<T: Real>(x: &Tensor<T>, spread: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let d = x.data();
    Tensor::from_fn(x.shape().to_vec(), |i| T::of(d[i].f64() + spread * rng.random_range(-1.0..1.0)))
}

/// Run every gradient case at `T`'s precision, probing `probes`
/// coordinates per case (every coordinate of smaller inputs).
pub fn suite<T: Real>(seed: u64, probes: usize) -> Result<Vec<CaseReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = step_size(T::DTYPE);
    let mut reports = Vec::new();

    // Tensor-valued ops, scalarized against a nearby target.
    {
        let mut op = |name: &str, x: Tensor<T>, f: &Builder<'_, T>, rng: &mut ChaCha8Rng| -> Result<()> {
            let mut tape = Tape::new();
            let v = tape.constant(x.clone())?;
            let out = f(&mut tape, v)?;
            let target = near_target(tape.value(out), rng);
            let build = |tape: &mut Tape<T>, v: Var| -> Result<Var> {
                let y = f(tape, v)?;
                let t = tape.constant(target.clone())?;
                tape.squared_distance(y, t)
            };
            let coords = sample_coords(x.len(), probes, rng);
            reports.push(CaseReport {
                name: name.to_string(),
                probes: check(&x, &coords, eps, &build)?,
            });
            Ok(())
        };

        // conv2d w.r.t. input, weight and bias, strided and padded.
        let input = uniform::<T>(&[1, 3, 7, 6], -1.0, 1.0, &mut rng);
        let weight = uniform::<T>(&[24, 3, 3, 3], -0.5, 0.5, &mut rng);
        let bias = uniform::<T>(&[24], -0.5, 0.5, &mut rng);
        let (w, b) = (weight.clone(), bias.clone());
        op(
            "conv2d/input",
            input.clone(),
            &move |tape, x| {
                let w = tape.constant(w.clone())?;
                let b = tape.constant(b.clone())?;
                tape.conv2d(x, w, Some(b), 2, 1)
            },
            &mut rng,
        )?;
        let (i, b) = (input.clone(), bias.clone());
        op(
            "conv2d/weight",
            weight.clone(),
            &move |tape, w| {
                let x = tape.constant(i.clone())?;
                let b = tape.constant(b.clone())?;
                tape.conv2d(x, w, Some(b), 2, 1)
            },
            &mut rng,
        )?;
        let (i, w) = (input.clone(), weight.clone());
        op(
            "conv2d/bias",
            bias,
            &move |tape, b| {
                let x = tape.constant(i.clone())?;
                let w = tape.constant(w.clone())?;
                tape.conv2d(x, w, Some(b), 2, 1)
            },
            &mut rng,
        )?;
        let w = uniform::<T>(&[5, 3, 1, 1], -0.5, 0.5, &mut rng);
        op(
            "conv2d/pointwise",
            uniform(&[1, 3, 5, 5], -1.0, 1.0, &mut rng),
            &move |tape, x| {
                let w = tape.constant(w.clone())?;
                tape.conv2d(x, w, None, 1, 0)
            },
            &mut rng,
        )?;
        op(
            "max_pool2d",
            distinct(&[1, 2, 6, 8], 0.05, &mut rng),
            &|tape, x| tape.max_pool2d(x, 2, 2),
            &mut rng,
        )?;
        let c = 3;
        let gamma = uniform::<T>(&[c], 0.5, 1.5, &mut rng);
        let beta = uniform::<T>(&[c], -0.5, 0.5, &mut rng);
        let mean = uniform::<T>(&[c], -0.5, 0.5, &mut rng);
        let var = uniform::<T>(&[c], 0.5, 2.0, &mut rng);
        op(
            "batch_norm_eval",
            uniform(&[1, c, 4, 4], -1.0, 1.0, &mut rng),
            &move |tape, x| tape.batch_norm_eval(x, &gamma, &beta, &mean, &var, T::of(1e-5)),
            &mut rng,
        )?;
        op(
            "relu",
            away_from_zero(&[1, 2, 5, 5], 0.05, &mut rng),
            &|tape, x| tape.relu(x),
            &mut rng,
        )?;
        let other = uniform::<T>(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
        op(
            "add+scale",
            uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng),
            &move |tape, x| {
                let o = tape.constant(other.clone())?;
                let xx = tape.add(x, x)?;
                let y = tape.add(xx, o)?;
                tape.scale(y, T::of(-0.7))
            },
            &mut rng,
        )?;
        op(
            "sum",
            uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng),
            &|tape, x| tape.sum(x),
            &mut rng,
        )?;
        let t = uniform::<T>(&[1, 3, 4, 5], -1.0, 1.0, &mut rng);
        op(
            "squared_distance",
            perturbed(&t, 0.1, &mut rng),
            &move |tape, x| {
                let c = tape.constant(t.clone())?;
                tape.squared_distance(x, c)
            },
            &mut rng,
        )?;
        op(
            "gram",
            uniform(&[1, 4, 3, 3], -1.0, 1.0, &mut rng),
            &|tape, x| tape.gram(x),
            &mut rng,
        )?;
        for temperature in [1.0, 0.5] {
            op(
                &format!("softmax/T={temperature}"),
                uniform(&[1, 2, 3, 4], -2.0, 2.0, &mut rng),
                &move |tape, x| tape.softmax(x, T::of(temperature)),
                &mut rng,
            )?;
        }
    }

    // Composite content, style and SWAG losses w.r.t. the synthesized features.
    let mut run = |name: &str, x: Tensor<T>, build: &Builder<'_, T>, rng: &mut ChaCha8Rng| -> Result<()> {
        let coords = sample_coords(x.len(), probes, rng);
        reports.push(CaseReport {
            name: name.to_string(),
            probes: check(&x, &coords, eps, build)?,
        });
        Ok(())
    };
    let shape_a = [1, 3, 4, 4];
    let shape_b = [1, 5, 2, 3];
    let xa = uniform::<T>(&shape_a, -1.0, 1.0, &mut rng);
    let fc = perturbed(&xa, 0.1, &mut rng);
    {
        let fc = fc.clone();
        run(
            "content_loss",
            xa.clone(),
            &move |tape, x| {
                let c = tape.constant(fc.clone())?;
                content_loss(tape, x, c)
            },
            &mut rng,
        )?;
    }
    {
        let fc = fc.clone();
        run(
            "swag_content_loss",
            xa.clone(),
            &move |tape, x| {
                let c = tape.constant(fc.clone())?;
                let l = swag_content_loss(tape, x, c, 1.0)?;
                tape.scale(l, T::of(1e4))
            },
            &mut rng,
        )?;
    }
    let cfg = LossConfig {
        style_weights: vec![
            StyleWeight {
                tap: "a".into(),
                weight: 1.0,
            },
            StyleWeight {
                tap: "b".into(),
                weight: 1.0,
            },
        ],
        content_tap: "a".into(),
        alpha: 0.0,
        beta: 1.0,
        swag: false,
        temperature: 1.0,
    };
    let style_a = perturbed(&xa, 0.1, &mut rng);
    let fixed_b = uniform::<T>(&shape_b, -1.0, 1.0, &mut rng);
    let style_b = perturbed(&fixed_b, 0.1, &mut rng);
    for (name, smoothed, lift) in [("style_loss", false, 1e2), ("swag_style_loss", true, 1e10)] {
        let (sa, sb, xb, cfg) = (style_a.clone(), style_b.clone(), fixed_b.clone(), cfg.clone());
        run(
            name,
            xa.clone(),
            &move |tape, xa| {
                let xb = tape.constant(xb.clone())?;
                let s = FeatureMaps::new(vec![("a".into(), sa.clone()), ("b".into(), sb.clone())]).to_tape(tape)?;
                let x = FeatureTaps::from_entries(vec![("a".into(), xa), ("b".into(), xb)]);
                let l = if smoothed {
                    swag_style_loss(tape, &x, &s, &cfg)?
                } else {
                    style_loss(tape, &x, &s, &cfg)?
                };
                tape.scale(l, T::of(lift))
            },
            &mut rng,
        )?;
    }
    Ok(reports)
}

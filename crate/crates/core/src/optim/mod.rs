//! Pixel-space optimization: stylization, feature reconstruction and texture
//! synthesis. The network is only ever borrowed immutably.

mod lbfgs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::psnr_normalized;
use crate::imageio::normalized_range;
use crate::losses::{total_objective, LossConfig, Targets};
use crate::tensor::{Real, Tape, Tensor};
use crate::zoo::Network;
use crate::{Error, Result};

pub use lbfgs::Lbfgs;

pub const DEFAULT_STYLIZE_STEPS: usize = 300;
pub const DEFAULT_RECONSTRUCT_STEPS: usize = 500;
/// Divergence: loss above `DIVERGENCE_FACTOR × initial` for this many steps in a row.
pub const DIVERGENCE_WINDOW: usize = 50;
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Content,
    /// I.i.d. uniform over the normalized pixel range, drawn from `OptimConfig::seed`.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Lbfgs {
        history: usize,
        max_line_search: usize,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lbfgs() -> Self {
        Optimizer::Lbfgs {
            history: 10,
            max_line_search: 20,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub init: Init,
    pub seed: u64,
    pub steps: usize,
    pub optimizer: Optimizer,
    /// Keep an image copy every this many steps (0 = never).
    #[serde(default)]
    pub snapshot_every: usize,
    /// Project pixels back into the displayable range after every step.
    #[serde(default)]
    pub clamp: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            init: Init::Content,
            seed: 0,
            steps: DEFAULT_STYLIZE_STEPS,
            optimizer: Optimizer::adam(),
            snapshot_every: 0,
            clamp: false,
        }
    }
}

impl OptimConfig {
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.optimizer {
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let ok = lr > 0.0
                    && lr.is_finite()
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0;
                if !ok {
                    return Err(Error::config(format!(
                        "invalid adam settings lr={lr} beta1={beta1} beta2={beta2} eps={eps}"
                    )));
                }
            }
            Optimizer::Lbfgs {
                history,
                max_line_search,
            } => {
                if history == 0 || max_line_search == 0 {
                    return Err(Error::config("lbfgs history and max_line_search must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// One row of the loss trace. `content` and `style` are the unweighted
/// terms; `total = α·content + β·style`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub total: f64,
    pub content: f64,
    pub style: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord<T> {
    pub image: Tensor<T>,
    /// Row `k` holds the loss of the iterate after `k` updates.
    pub losses: Vec<LossRow>,
    pub snapshots: Vec<(usize, Tensor<T>)>,
    pub psnr: Option<f64>,
}

impl<T: Real> RunRecord<T> {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0].total
    }

    pub fn final_loss(&self) -> LossRow {
        *self.losses.last().expect("at least one row")
    }
}

/// Loss value and pixel gradient at one point.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub row: LossRow,
    pub grad: Tensor<T>,
}

/// `α·L_content + β·L_style` of a candidate image through a frozen network.
pub struct Objective<'a, T> {
    net: &'a Network<T>,
    cfg: LossConfig,
    targets: Targets<T>,
    taps: Vec<String>,
}

impl<'a, T: Real> Objective<'a, T> {
    pub fn new(net: &'a Network<T>, cfg: LossConfig, content: Option<&Tensor<T>>, style: Option<&Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let taps: Vec<String> = cfg.required_taps().into_iter().map(String::from).collect();
        let names: Vec<&str> = taps.iter().map(String::as_str).collect();
        let style_maps = match style {
            Some(s) if cfg.beta != 0.0 => Some(net.features(s, Some(&names))?),
            _ => None,
        };
        let content_maps = match content {
            Some(c) if cfg.alpha != 0.0 => Some(net.features(c, Some(&names))?),
            _ => None,
        };
        if cfg.beta != 0.0 && style_maps.is_none() {
            return Err(Error::config("beta > 0 needs a style image"));
        }
        let empty = crate::zoo::FeatureMaps::new(Vec::new());
        let targets = Targets::new(&cfg, style_maps.as_ref().unwrap_or(&empty), content_maps.as_ref())?;
        Ok(Objective { net, cfg, targets, taps })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    pub fn evaluate(&self, x: &Tensor<T>) -> Result<Evaluation<T>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone())?;
        let names: Vec<&str> = self.taps.iter().map(String::as_str).collect();
        let taps = self.net.forward_selected(&mut tape, xv, &names)?;
        let vars = total_objective(&mut tape, &taps, &self.targets, &self.cfg)?;
        let row = LossRow {
            step: 0,
            total: tape.scalar(vars.total),
            content: vars.content.map_or(0.0, |v| tape.scalar(v)),
            style: vars.style.map_or(0.0, |v| tape.scalar(v)),
        };
        tape.backward(vars.total)?;
        let grad = tape.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
        Ok(Evaluation { row, grad })
    }
}

/// Uniform noise over each channel's normalized range.
pub fn noise_image<T: Real>(shape: &[usize], seed: u64) -> Result<Tensor<T>> {
    let t = Tensor::<T>::zeros(shape.to_vec());
    let (_, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::config("noise images have three channels"));
    }
    let range = normalized_range();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = h * w;
    Ok(Tensor::from_fn(shape.to_vec(), |i| {
        let (lo, hi) = range[(i / plane) % 3];
        T::of(rng.random_range(lo..hi))
    }))
}

fn clamp_pixels<T: Real>(x: &mut Tensor<T>) {
    let range = normalized_range();
    let plane = x.shape()[2] * x.shape()[3];
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        let (lo, hi) = range[(i / plane) % 3];
        *v = T::of(v.f64().clamp(lo, hi));
    }
}

struct Monitor {
    initial: f64,
    above: usize,
}

impl Monitor {
    fn check(&mut self, step: usize, row: &LossRow) -> Result<()> {
        if !row.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if step == 0 {
            self.initial = row.total;
            return Ok(());
        }
        if row.total > DIVERGENCE_FACTOR * self.initial {
            self.above += 1;
            if self.above >= DIVERGENCE_WINDOW {
                return Err(Error::Diverged {
                    step,
                    loss: row.total,
                    initial: self.initial,
                    window: DIVERGENCE_WINDOW,
                });
            }
        } else {
            self.above = 0;
        }
        Ok(())
    }
}

/// Drive `objective` from `init` for `opt.steps` updates.
pub fn optimize<T: Real>(objective: &Objective<'_, T>, init: Tensor<T>, opt: &OptimConfig) -> Result<RunRecord<T>> {
    opt.validate()?;
    let mut x = init;
    if opt.clamp {
        clamp_pixels(&mut x);
    }
    let mut monitor = Monitor { initial: 0.0, above: 0 };
    let mut losses = Vec::with_capacity(opt.steps + 1);
    let mut snapshots = Vec::new();
    let eval = |x: &Tensor<T>, step: usize| -> Result<Evaluation<T>> {
        let mut e = objective.evaluate(x).map_err(|e| e.at(&format!("step {step}")))?;
        e.row.step = step;
        Ok(e)
    };
    let mut current = eval(&x, 0)?;
    monitor.check(0, &current.row)?;
    losses.push(current.row);

    match opt.optimizer {
        Optimizer::Adam { lr, beta1, beta2, eps } => {
            let n = x.len();
            let mut m = vec![0.0f64; n];
            let mut v = vec![0.0f64; n];
            for step in 1..=opt.steps {
                let bc1 = 1.0 - beta1.powi(step as i32);
                let bc2 = 1.0 - beta2.powi(step as i32);
                let g = current.grad.data();
                let xs = x.data_mut();
                for i in 0..n {
                    let gi = g[i].f64();
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                    xs[i] = T::of(xs[i].f64() - update);
                }
                if opt.clamp {
                    clamp_pixels(&mut x);
                }
                current = eval(&x, step)?;
                monitor.check(step, &current.row)?;
                losses.push(current.row);
                if opt.snapshot_every > 0 && step % opt.snapshot_every == 0 {
                    snapshots.push((step, x.clone()));
                }
            }
        }
        Optimizer::Lbfgs {
            history,
            max_line_search,
        } => {
            let mut solver = Lbfgs::new(history, max_line_search);
            for step in 1..=opt.steps {
                let (nx, ne) = solver.step(&x, &current, |cand| {
                    let mut cand = cand.clone();
                    if opt.clamp {
                        clamp_pixels(&mut cand);
                    }
                    let e = eval(&cand, step)?;
                    Ok((cand, e))
                })?;
                x = nx;
                current = ne;
                monitor.check(step, &current.row)?;
                losses.push(current.row);
                if opt.snapshot_every > 0 && step % opt.snapshot_every == 0 {
                    snapshots.push((step, x.clone()));
                }
            }
        }
    }
    Ok(RunRecord {
        image: x,
        losses,
        snapshots,
        psnr: None,
    })
}

fn initial_image<T: Real>(opt: &OptimConfig, content: Option<&Tensor<T>>, shape: &[usize]) -> Result<Tensor<T>> {
    match opt.init {
        Init::Content => content
            .cloned()
            .ok_or_else(|| Error::config("init=content needs a content image")),
        Init::Noise => noise_image(shape, opt.seed),
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "content {:?} and style {:?} shapes differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `argmin_x α·L_content(x_c, x) + β·L_style(x_s, x)`.
pub fn stylize<T: Real>(
    net: &Network<T>,
    content: &Tensor<T>,
    style: &Tensor<T>,
    loss: &LossConfig,
    opt: &OptimConfig,
) -> Result<RunRecord<T>> {
    same_shape(content, style)?;
    let objective = Objective::new(net, loss.clone(), Some(content), Some(style))?;
    let init = initial_image(opt, Some(content), content.shape())?;
    optimize(&objective, init, opt)
}

/// Match `content`'s features at `tap` alone; reports PSNR against `content`.
pub fn reconstruct<T: Real>(net: &Network<T>, content: &Tensor<T>, tap: &str, opt: &OptimConfig) -> Result<RunRecord<T>> {
    if !net.spec().taps().contains(&tap) {
        return Err(Error::config(format!("{} has no tap named {tap}", net.spec().name)));
    }
    let cfg = LossConfig {
        style_weights: Vec::new(),
        content_tap: tap.to_string(),
        alpha: 1.0,
        beta: 0.0,
        swag: false,
        temperature: 1.0,
    };
    let objective = Objective::new(net, cfg, Some(content), None)?;
    let init = initial_image(opt, Some(content), content.shape())?;
    let mut record = optimize(&objective, init, opt)?;
    record.psnr = Some(psnr_normalized(&record.image, content)?);
    Ok(record)
}

/// Style-only optimization from noise (`α` forced to 0).
pub fn synthesize_texture<T: Real>(
    net: &Network<T>,
    style: &Tensor<T>,
    loss: &LossConfig,
    opt: &OptimConfig,
) -> Result<RunRecord<T>> {
    let cfg = LossConfig {
        alpha: 0.0,
        ..loss.clone()
    };
    let objective = Objective::new(net, cfg, None, Some(style))?;
    let opt = OptimConfig {
        init: Init::Noise,
        ..opt.clone()
    };
    let init = initial_image(&opt, None, style.shape())?;
    optimize(&objective, init, &opt)
}

//! Fully resolved job descriptions and their execution.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use swag_core::diagnostics::{tap_stats, tracks_from_maps, TrackRule};
use swag_core::imageio::{self, ImageBuffer, ResizeMode};
use swag_core::losses::LossConfig;
use swag_core::optim::{self, OptimConfig, RunRecord};
use swag_core::weights::read_bundle;
use swag_core::zoo::preset;
use swag_core::{ArchSpec, Error, Network, Real, Result};

use crate::output::{self, StatsRow, TrackRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub arch: String,
    pub seed: u64,
    pub width_scale: f64,
    pub weights: Option<PathBuf>,
}

impl NetConfig {
    pub fn spec(&self) -> Result<ArchSpec> {
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::Usage(format!("width scale must be positive, got {}", self.width_scale)));
        }
        Ok(preset(&self.arch)?.with_width_scale(self.width_scale))
    }

    pub fn build<T: Real>(&self) -> Result<Network<T>> {
        let spec = self.spec()?;
        match &self.weights {
            Some(path) => read_bundle(path, spec),
            None => Network::init_random(spec, self.seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageConfig {
    pub width: usize,
    pub height: usize,
    pub resize: ResizeMode,
}

impl ImageConfig {
    pub fn load(&self, path: &Path) -> Result<ImageBuffer> {
        let img = imageio::load(path)?;
        if img.width() == self.width && img.height() == self.height {
            Ok(img)
        } else {
            imageio::resize(&img, self.width, self.height, self.resize)
        }
    }

    pub fn load_tensor<T: Real>(&self, path: &Path) -> Result<swag_core::Tensor<T>> {
        Ok(imageio::normalize(&self.load(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizeJob {
    pub content: PathBuf,
    pub style: PathBuf,
    pub net: NetConfig,
    pub image: ImageConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeJob {
    pub style: PathBuf,
    pub net: NetConfig,
    pub image: ImageConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructJob {
    pub source: PathBuf,
    pub tap: String,
    pub net: NetConfig,
    pub image: ImageConfig,
    pub optim: OptimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeJob {
    pub arch: String,
    pub width_scale: f64,
    pub weights: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub images: Vec<PathBuf>,
    pub image: ImageConfig,
    pub taps: Vec<String>,
    pub swag_stats: bool,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracksJob {
    pub source: PathBuf,
    pub net: NetConfig,
    pub image: ImageConfig,
    pub taps: Vec<String>,
    pub n: usize,
    pub rule: TrackRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", content = "config", rename_all = "snake_case")]
pub enum Job {
    Stylize(StylizeJob),
    Probe(ProbeJob),
    Tracks(TracksJob),
    Reconstruct(ReconstructJob),
    Synthesize(SynthesizeJob),
}

/// What a finished job reports back for the manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub psnr: Option<f64>,
    pub outputs: Vec<PathBuf>,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Stylize(_) => "stylize",
            Job::Probe(_) => "probe",
            Job::Tracks(_) => "tracks",
            Job::Reconstruct(_) => "reconstruct",
            Job::Synthesize(_) => "synthesize",
        }
    }

    /// Every file the job reads.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = match self {
            Job::Stylize(j) => vec![j.content.clone(), j.style.clone()],
            Job::Synthesize(j) => vec![j.style.clone()],
            Job::Reconstruct(j) => vec![j.source.clone()],
            Job::Tracks(j) => vec![j.source.clone()],
            Job::Probe(j) => j.images.clone(),
        };
        let weights = match self {
            Job::Stylize(j) => j.net.weights.clone(),
            Job::Synthesize(j) => j.net.weights.clone(),
            Job::Reconstruct(j) => j.net.weights.clone(),
            Job::Tracks(j) => j.net.weights.clone(),
            Job::Probe(j) => j.weights.clone(),
        };
        v.extend(weights);
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Job::Stylize(j) => {
                j.loss.validate()?;
                j.optim.validate()
            }
            Job::Synthesize(j) => {
                j.loss.validate()?;
                j.optim.validate()
            }
            Job::Reconstruct(j) => j.optim.validate(),
            Job::Probe(j) => {
                if j.images.is_empty() {
                    return Err(Error::Usage("no images to probe".into()));
                }
                if j.seeds.is_empty() {
                    return Err(Error::Usage("--seeds must be at least 1".into()));
                }
                Ok(())
            }
            Job::Tracks(j) => {
                if j.n == 0 {
                    return Err(Error::Usage("--n must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    pub fn run<T: Real>(&self, out: &Path, jobs: usize) -> Result<Outcome> {
        self.validate()?;
        fs::create_dir_all(out)?;
        match self {
            Job::Stylize(j) => {
                let net = j.net.build::<T>()?;
                let content = j.image.load_tensor(&j.content)?;
                let style = j.image.load_tensor(&j.style)?;
                let record = optim::stylize(&net, &content, &style, &j.loss, &j.optim)?;
                write_run(out, &record)
            }
            Job::Synthesize(j) => {
                let net = j.net.build::<T>()?;
                let style = j.image.load_tensor(&j.style)?;
                let record = optim::synthesize_texture(&net, &style, &j.loss, &j.optim)?;
                write_run(out, &record)
            }
            Job::Reconstruct(j) => {
                let net = j.net.build::<T>()?;
                let source = j.image.load_tensor(&j.source)?;
                let record = optim::reconstruct(&net, &source, &j.tap, &j.optim)?;
                write_run(out, &record)
            }
            Job::Tracks(j) => {
                let net = j.net.build::<T>()?;
                let source = j.image.load_tensor::<T>(&j.source)?;
                let taps = resolve_taps(net.spec(), &j.taps)?;
                let maps = net.features(&source, Some(&taps))?;
                let set = tracks_from_maps(&maps, &taps, j.image.height, j.image.width, j.n, j.net.seed, j.rule)?;
                let rows = TrackRow::from_set(&set);
                let path = out.join(output::TRACKS_CSV);
                output::write_csv(&path, &rows)?;
                Ok(Outcome {
                    psnr: None,
                    outputs: vec![path],
                })
            }
            Job::Probe(j) => {
                let rows = probe::<T>(j, jobs)?;
                let path = out.join(output::STATS_CSV);
                output::write_csv(&path, &rows)?;
                Ok(Outcome {
                    psnr: None,
                    outputs: vec![path],
                })
            }
        }
    }
}

fn write_run<T: Real>(out: &Path, record: &RunRecord<T>) -> Result<Outcome> {
    let image_path = out.join(output::FINAL_PPM);
    imageio::save(&imageio::denormalize(&record.image)?, &image_path)?;
    let loss_path = out.join(output::LOSS_CSV);
    output::write_csv(&loss_path, &record.losses)?;
    Ok(Outcome {
        psnr: record.psnr,
        outputs: vec![image_path, loss_path],
    })
}

/// Explicit taps are checked against the spec; none means the stage taps.
pub fn resolve_taps<'a>(spec: &'a ArchSpec, requested: &'a [String]) -> Result<Vec<&'a str>> {
    if requested.is_empty() {
        return Ok(spec.stage_taps());
    }
    let known = spec.taps();
    requested
        .iter()
        .map(|t| {
            if known.contains(&t.as_str()) {
                Ok(t.as_str())
            } else {
                Err(Error::Usage(format!("{} has no tap named {t}", spec.name)))
            }
        })
        .collect()
}

fn probe<T: Real>(job: &ProbeJob, jobs: usize) -> Result<Vec<StatsRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    pool.install(|| {
        let nets: Vec<Network<T>> = job
            .seeds
            .par_iter()
            .map(|&seed| {
                NetConfig {
                    arch: job.arch.clone(),
                    seed,
                    width_scale: job.width_scale,
                    weights: job.weights.clone(),
                }
                .build()
            })
            .collect::<Result<_>>()?;
        let images: Vec<swag_core::Tensor<T>> = job
            .images
            .par_iter()
            .map(|p| job.image.load_tensor(p))
            .collect::<Result<_>>()?;
        let pairs: Vec<(usize, usize)> = (0..nets.len())
            .flat_map(|s| (0..images.len()).map(move |i| (s, i)))
            .collect();
        let per_pair: Vec<Vec<StatsRow>> = pairs
            .par_iter()
            .map(|&(s, i)| {
                let net = &nets[s];
                let taps = resolve_taps(net.spec(), &job.taps)?;
                let maps = net.features(&images[i], Some(&taps))?;
                let name = image_label(&job.images[i]);
                let mut rows = Vec::new();
                let modes: &[bool] = if job.swag_stats { &[false, true] } else { &[false] };
                for &smoothed in modes {
                    let report = tap_stats(&maps, smoothed, job.temperature, &job.arch, job.seeds[s], &name)
                        .map_err(|e| e.at(&format!("image {name}, seed {}", job.seeds[s])))?;
                    rows.extend(StatsRow::from_report(&report));
                }
                Ok(rows)
            })
            .collect::<Result<_>>()?;
        Ok(per_pair.into_iter().flatten().collect())
    })
}

fn image_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let supported = ext == "ppm" || (cfg!(feature = "png") && ext == "png");
        if path.is_file() && supported {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

/// Defaults shared by the optimization subcommands.
pub fn optim_config(opt: &crate::args::OptimArgs, init: optim::Init, seed: u64, default_steps: usize) -> OptimConfig {
    OptimConfig {
        init,
        seed,
        steps: opt.steps.unwrap_or(default_steps),
        optimizer: opt.optimizer(),
        snapshot_every: 0,
        clamp: opt.clamp,
    }
}

pub fn loss_config(spec: &ArchSpec, args: &crate::args::LossArgs) -> LossConfig {
    let mut cfg = LossConfig::for_arch(spec).with_swag(args.swag);
    cfg.alpha = args.alpha;
    cfg.beta = args.beta.unwrap_or(spec.beta);
    cfg.temperature = args.temperature;
    cfg
}

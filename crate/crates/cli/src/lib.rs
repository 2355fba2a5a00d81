//! The `swag` command-line runner.
//!
//! Every subcommand resolves its flags into a [`jobs::Job`], runs it at the
//! precision selected by `SWAG_PRECISION`, and writes a [`RunManifest`] next
//! to its outputs. `swag replay` re-runs a manifest.

pub mod args;
pub mod jobs;
pub mod manifest;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use swag_core::optim::{Init, DEFAULT_RECONSTRUCT_STEPS, DEFAULT_STYLIZE_STEPS};
use swag_core::{Error, Precision, Result};

pub use args::{Cli, Command};
pub use jobs::Job;
pub use manifest::{FileHash, Psnr, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) => EXIT_USAGE,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_IO,
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn image_config(a: &args::ImageArgs) -> jobs::ImageConfig {
    jobs::ImageConfig {
        width: a.size.0,
        height: a.size.1,
        resize: a.resize.into(),
    }
}

fn net_config(a: &args::NetArgs) -> Result<jobs::NetConfig> {
    Ok(jobs::NetConfig {
        arch: a.arch.clone(),
        seed: a.seed,
        width_scale: a.width_scale,
        weights: a.weights.as_deref().map(absolute).transpose()?,
    })
}

/// Resolve flags into a job and its output directory.
pub fn resolve(command: &Command) -> Result<(Job, PathBuf)> {
    Ok(match command {
        Command::Stylize(a) => {
            let net = net_config(&a.net)?;
            let spec = net.spec()?;
            let job = jobs::StylizeJob {
                content: absolute(&a.content)?,
                style: absolute(&a.style)?,
                image: image_config(&a.image),
                loss: jobs::loss_config(&spec, &a.loss),
                optim: jobs::optim_config(&a.optim, a.init.into(), a.net.seed, DEFAULT_STYLIZE_STEPS),
                net,
            };
            (Job::Stylize(job), a.out.clone())
        }
        Command::Synthesize(a) => {
            let net = net_config(&a.net)?;
            let spec = net.spec()?;
            let mut loss = jobs::loss_config(&spec, &a.loss);
            loss.alpha = 0.0;
            let job = jobs::SynthesizeJob {
                style: absolute(&a.style)?,
                image: image_config(&a.image),
                loss,
                optim: jobs::optim_config(&a.optim, Init::Noise, a.net.seed, DEFAULT_STYLIZE_STEPS),
                net,
            };
            (Job::Synthesize(job), a.out.clone())
        }
        Command::Reconstruct(a) => {
            let net = net_config(&a.net)?;
            let spec = net.spec()?;
            jobs::resolve_taps(&spec, std::slice::from_ref(&a.tap))?;
            let job = jobs::ReconstructJob {
                source: absolute(&a.image)?,
                tap: a.tap.clone(),
                image: image_config(&a.image_opts),
                optim: jobs::optim_config(&a.optim, a.init.into(), a.net.seed, DEFAULT_RECONSTRUCT_STEPS),
                net,
            };
            (Job::Reconstruct(job), a.out.clone())
        }
        Command::Tracks(a) => {
            let net = net_config(&a.net)?;
            let spec = net.spec()?;
            let taps = jobs::resolve_taps(&spec, &a.taps)?
                .into_iter()
                .map(String::from)
                .collect();
            let job = jobs::TracksJob {
                source: absolute(&a.image)?,
                image: image_config(&a.image_opts),
                taps,
                n: a.n,
                rule: a.rule.into(),
                net,
            };
            (Job::Tracks(job), a.out.clone())
        }
        Command::Probe(a) => {
            let spec = swag_core::zoo::preset(&a.arch)?.with_width_scale(a.width_scale);
            let taps = jobs::resolve_taps(&spec, &a.taps)?
                .into_iter()
                .map(String::from)
                .collect();
            let dir = absolute(&a.images)?;
            let images = jobs::list_images(&dir)?;
            if images.is_empty() {
                return Err(Error::Usage(format!("no images found in {}", dir.display())));
            }
            let job = jobs::ProbeJob {
                arch: a.arch.clone(),
                width_scale: a.width_scale,
                weights: a.weights.as_deref().map(absolute).transpose()?,
                seeds: (a.seed..a.seed.saturating_add(a.seeds)).collect(),
                images,
                image: image_config(&a.image),
                taps,
                swag_stats: a.swag_stats,
                temperature: a.temperature,
            };
            (Job::Probe(job), a.out.clone())
        }
        Command::Replay(_) => return Err(Error::Usage("replay has no job of its own".into())),
    })
}

/// Run `job` at `precision`, write outputs and the manifest into `out`.
pub fn execute(job: &Job, precision: Precision, out: &Path, jobs: usize) -> Result<RunManifest> {
    let inputs = job
        .inputs()
        .iter()
        .map(|p| FileHash::of(p))
        .collect::<Result<Vec<_>>>()?;
    let outcome = match precision {
        Precision::F32 => job.run::<f32>(out, jobs)?,
        Precision::F64 => job.run::<f64>(out, jobs)?,
    };
    let outputs = outcome
        .outputs
        .iter()
        .map(|p| {
            let mut h = FileHash::of(p)?;
            h.path = PathBuf::from(p.file_name().unwrap_or_default());
            Ok(h)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        version: manifest::TOOL_VERSION.to_string(),
        precision,
        job: job.clone(),
        inputs,
        outputs,
        psnr: outcome.psnr.map(Psnr::new),
    };
    manifest.write(out)?;
    Ok(manifest)
}

/// Re-run a manifest's job into `out`; fails if an input changed.
pub fn replay(manifest_path: &Path, out: &Path, jobs: usize) -> Result<RunManifest> {
    let recorded = RunManifest::read(manifest_path)?;
    recorded.verify_inputs()?;
    let fresh = execute(&recorded.job, recorded.precision, out, jobs)?;
    if fresh.outputs != recorded.outputs {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "replayed outputs differ from the manifest",
        )));
    }
    Ok(fresh)
}

pub fn run(cli: &Cli) -> Result<RunManifest> {
    let jobs = cli.jobs as usize;
    if let Command::Replay(a) = &cli.command {
        return replay(&a.manifest, &a.out, jobs);
    }
    let precision = Precision::from_env()?;
    let (job, out) = resolve(&cli.command)?;
    execute(&job, precision, &out, jobs)
}

//! Output files and their frozen CSV schemas.

use std::path::Path;

use serde::{Deserialize, Serialize};
use swag_core::diagnostics::{StatsReport, TrackSet};
use swag_core::{Error, Result};

pub const FINAL_PPM: &str = "final.ppm";
pub const LOSS_CSV: &str = "loss.csv";
pub const STATS_CSV: &str = "stats.csv";
pub const TRACKS_CSV: &str = "tracks.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

pub const LOSS_HEADER: &str = "step,total,content,style";
pub const STATS_HEADER: &str =
    "arch,seed,image,tap,depth_index,max_activation,activation_entropy,gram_max,gram_entropy,smoothed";
pub const TRACKS_HEADER: &str = "position_id,u,v,tap,value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub arch: String,
    pub seed: u64,
    pub image: String,
    pub tap: String,
    pub depth_index: usize,
    pub max_activation: f64,
    pub activation_entropy: f64,
    pub gram_max: f64,
    pub gram_entropy: f64,
    pub smoothed: bool,
}

impl StatsRow {
    pub fn from_report(r: &StatsReport) -> Vec<StatsRow> {
        r.taps
            .iter()
            .map(|t| StatsRow {
                arch: r.arch.clone(),
                seed: r.seed,
                image: r.image.clone(),
                tap: t.tap.clone(),
                depth_index: t.depth_index,
                max_activation: t.max_activation,
                activation_entropy: t.activation_entropy,
                gram_max: t.gram_max,
                gram_entropy: t.gram_entropy,
                smoothed: r.smoothed,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub position_id: usize,
    pub u: usize,
    pub v: usize,
    pub tap: String,
    pub value: f64,
}

impl TrackRow {
    pub fn from_set(set: &TrackSet) -> Vec<TrackRow> {
        set.positions
            .iter()
            .zip(&set.values)
            .enumerate()
            .flat_map(|(id, (&(u, v), values))| {
                set.taps.iter().zip(values).map(move |(tap, &value)| TrackRow {
                    position_id: id,
                    u,
                    v,
                    tap: tap.clone(),
                    value,
                })
            })
            .collect()
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

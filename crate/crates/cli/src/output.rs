//! CSV and manifest writers.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cv2x_core::{EpisodeMetrics, SimulationConfig};
use serde::Serialize;

use crate::CliError;

pub const EPISODE_COLUMNS: &[&str] = &[
    "seed",
    "episode",
    "mean_energy_mj",
    "mean_aoi_ms",
    "mean_reward",
    "collisions",
    "drops",
    "queue_aoi_hpd_ms",
    "queue_aoi_denm_ms",
    "queue_aoi_cam_ms",
    "queue_aoi_mhd_ms",
    "epochs",
    "transmissions",
    "receptions",
    "successes",
    "degenerate",
];

/// One simulated episode.
#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode: usize,
    pub metrics: EpisodeMetrics,
}

impl EpisodeRow {
    pub fn fields(&self) -> Vec<String> {
        let m = &self.metrics;
        let mut v = vec![
            self.seed.to_string(),
            self.episode.to_string(),
            m.mean_energy_mj.to_string(),
            m.mean_aoi_ms.to_string(),
            m.mean_reward.to_string(),
            m.collisions.to_string(),
            m.drops.to_string(),
        ];
        v.extend(m.queue_aoi_ms.iter().map(f64::to_string));
        v.extend([
            m.epochs.to_string(),
            m.transmissions.to_string(),
            m.receptions.to_string(),
            m.successes.to_string(),
            m.degenerate.to_string(),
        ]);
        v
    }
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn write_records<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| CliError::runtime(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn write_serialized<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush()
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn write_episodes(path: &Path, rows: &[EpisodeRow]) -> Result<(), CliError> {
    write_records(path, EPISODE_COLUMNS, rows.iter().map(EpisodeRow::fields))
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

/// Provenance record written next to the outputs of every run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
    /// The full scenario in scenario-file form.
    pub config_text: String,
    pub config: SimulationConfig,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::runtime(format!("manifest: {e}")))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

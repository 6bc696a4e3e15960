//! Experiment runner: seeded sweeps over simulated sessions, CSV metric
//! tables, JSON-lines manifests and embedded pass/fail checks.

mod config;
mod freq;
mod recon;
mod report;
mod session;
mod sync_compare;
mod volumetric;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataplane::DataplaneError;
use crate::geometry::GeometryError;
use crate::hull::HullError;
use crate::sim::SimError;

pub use config::{
    ExperimentConfig, ExperimentKind, FreqSweepSettings, MissdetSettings, ReconstructSettings, RunSettings,
    SyncCompareSettings, VolumetricSettings,
};
pub use freq::{run_frequency_sweep, transport_model, FreqPoint, TransportEstimate, TransportParams};
pub use recon::{
    reconstruct_session, run_missdetection_sweep, run_reconstruction, spearman, FrameResult, MissdetPoint,
    ObservationSource,
};
pub use report::{check_output_dir, Check, Report, Table};
pub use session::run_scenario;
pub use sync_compare::{run_sync_comparison, SyncCell};
pub use volumetric::{run_volumetric, VolumeFrame};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("output directory {dir} holds results of config {found}, not {expected}")]
    ConfigMismatch {
        dir: PathBuf,
        found: String,
        expected: String,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataplane(#[from] DataplaneError),
    #[error(transparent)]
    Hull(#[from] HullError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Runs one experiment for seeds `seed, seed+1, …` and returns its report.
/// `out` receives any session artifacts (stores, meshes); tables are
/// written by [`Report::write`].
pub fn run_experiment(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    seed: u64,
    out: &std::path::Path,
) -> Result<Report, HarnessError> {
    match kind {
        ExperimentKind::Run => run_scenario(config, seed, out),
        ExperimentKind::SyncCompare => run_sync_comparison(config, seed).map(|(r, _)| r),
        ExperimentKind::FreqSweep => run_frequency_sweep(config, seed).map(|(r, _)| r),
        ExperimentKind::Reconstruct => run_reconstruction(config, seed, out).map(|(r, _)| r),
        ExperimentKind::MissdetSweep => run_missdetection_sweep(config, seed).map(|(r, _)| r),
        ExperimentKind::Volumetric => run_volumetric(config, seed, out).map(|(r, _)| r),
    }
}

/// `seed, seed+1, …, seed+count−1`.
pub fn seed_list(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| seed.wrapping_add(i)).collect()
}

/// Compact label for a seed list in aggregate rows.
pub(crate) fn seed_label(seeds: &[u64]) -> String {
    match seeds {
        [] => String::new(),
        [s] => s.to_string(),
        [first, .., last] => format!("{first}-{last}"),
    }
}

pub(crate) fn scheme_label(kind: crate::sync::SchemeKind) -> String {
    match serde_json::to_value(kind) {
        Ok(serde_json::Value::String(s)) => s,
        _ => format!("{kind:?}"),
    }
}

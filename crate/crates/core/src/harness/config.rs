use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::sim::ScenarioConfig;
use crate::sync::SchemeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    SyncCompare,
    FreqSweep,
    Reconstruct,
    MissdetSweep,
    Volumetric,
}

impl ExperimentKind {
    pub const ALL: [Self; 6] = [
        Self::Run,
        Self::SyncCompare,
        Self::FreqSweep,
        Self::Reconstruct,
        Self::MissdetSweep,
        Self::Volumetric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::SyncCompare => "sync-compare",
            Self::FreqSweep => "freq-sweep",
            Self::Reconstruct => "reconstruct",
            Self::MissdetSweep => "missdet-sweep",
            Self::Volumetric => "volumetric",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub seeds: usize,
    /// Persist merged captures under `<out>/session-<seed>/`.
    pub persist: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seeds: 1,
            persist: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncCompareSettings {
    pub seeds: usize,
    pub schemes: Vec<SchemeKind>,
    pub jitter_ms: Vec<f64>,
    pub devices: usize,
    /// Extra one-way latency of the slowest client.
    pub asymmetry_ms: f64,
    pub duration_s: f64,
}

impl Default for SyncCompareSettings {
    fn default() -> Self {
        Self {
            seeds: 50,
            schemes: vec![
                SchemeKind::TriggerRelay,
                SchemeKind::NtpBaseline,
                SchemeKind::NtpAveraged,
                SchemeKind::Uncompensated,
            ],
            jitter_ms: vec![4.0, 8.0, 16.0],
            devices: 2,
            asymmetry_ms: 10.0,
            duration_s: 4.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreqSweepSettings {
    pub seeds: usize,
    pub frequencies_hz: Vec<f64>,
    pub devices: Vec<usize>,
    /// Shared uplink capacity.
    pub bandwidth_bytes_per_s: f64,
    pub image_bytes: usize,
    pub duration_s: f64,
    /// Gaps are measured over emissions in this window after the first trigger.
    pub window_s: f64,
}

impl Default for FreqSweepSettings {
    fn default() -> Self {
        Self {
            seeds: 1,
            frequencies_hz: vec![5.0, 10.0, 15.0, 20.0],
            devices: vec![2, 4],
            bandwidth_bytes_per_s: 4.0e6,
            image_bytes: 160 * 1024,
            duration_s: 8.0,
            window_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructSettings {
    pub seeds: usize,
    pub min_pair_angle: f64,
    pub max_pair_angle: f64,
    /// Use the simulator's f64 detections instead of the f32 wire payloads.
    pub exact_detections: bool,
    /// Also run the incremental baseline on every frame.
    pub compare_incremental: bool,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        Self {
            seeds: 1,
            min_pair_angle: 20.0,
            max_pair_angle: 160.0,
            exact_detections: false,
            compare_incremental: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissdetSettings {
    pub seeds: usize,
    pub rates: Vec<f64>,
    /// Numbers of affected cameras; empty means `1..=C−2`.
    pub affected: Vec<usize>,
    pub duration_s: f64,
}

impl Default for MissdetSettings {
    fn default() -> Self {
        Self {
            seeds: 5,
            rates: vec![0.0, 0.2, 0.4, 0.6],
            affected: Vec::new(),
            duration_s: 2.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolumetricSettings {
    pub seeds: usize,
    /// Voxels per axis.
    pub dims: usize,
    pub extent_m: [f64; 3],
    /// Offsets below the camera count; `[2, 1, 0]` sweeps `n_Ψ ∈ {C−2, C−1, C}`.
    pub threshold_offsets: Vec<usize>,
    /// Carve every k-th merged capture.
    pub frame_stride: usize,
    pub max_frames: usize,
    pub duration_s: f64,
    /// Rotation noise of the comparison run, degrees.
    pub noisy_pose_deg: f64,
    pub mesh_format: crate::hull::MeshFormat,
    /// Ground-truth capsule samples per capsule for the containment check.
    pub samples_per_capsule: usize,
    /// Carve with a one-voxel-diagonal ball around each center instead of the
    /// center alone, so the mesh encloses the silhouettes' full cones.
    pub conservative: bool,
}

impl Default for VolumetricSettings {
    fn default() -> Self {
        Self {
            seeds: 1,
            dims: 160,
            extent_m: crate::hull::DEFAULT_EXTENT,
            threshold_offsets: vec![2, 1, 0],
            frame_stride: 10,
            max_frames: 5,
            duration_s: 4.9,
            noisy_pose_deg: 1.0,
            mesh_format: crate::hull::MeshFormat::Ply,
            samples_per_capsule: 64,
            conservative: true,
        }
    }
}

/// Everything an experiment needs besides the base seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Scenario overrides, optionally with a `preset` key.
    pub scenario: toml::Table,
    /// Scenario file, relative to the experiment file; exclusive with `scenario`.
    pub scenario_file: Option<PathBuf>,
    pub run: RunSettings,
    pub sync_compare: SyncCompareSettings,
    pub freq_sweep: FreqSweepSettings,
    pub reconstruct: ReconstructSettings,
    pub missdet: MissdetSettings,
    pub volumetric: VolumetricSettings,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: toml::Table::new(),
            scenario_file: None,
            run: RunSettings::default(),
            sync_compare: SyncCompareSettings::default(),
            freq_sweep: FreqSweepSettings::default(),
            reconstruct: ReconstructSettings::default(),
            missdet: MissdetSettings::default(),
            volumetric: VolumetricSettings::default(),
            base_dir: PathBuf::new(),
        }
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    scenario: &'a ScenarioConfig,
    run: &'a RunSettings,
    sync_compare: &'a SyncCompareSettings,
    freq_sweep: &'a FreqSweepSettings,
    reconstruct: &'a ReconstructSettings,
    missdet: &'a MissdetSettings,
    volumetric: &'a VolumetricSettings,
}

impl ExperimentConfig {
    /// Defaults over the given scenario preset.
    pub fn with_preset(preset: &str) -> Self {
        let mut c = Self::default();
        c.scenario.insert("preset".into(), toml::Value::String(preset.into()));
        c
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut c: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The resolved scenario, before any per-experiment overrides.
    pub fn scenario(&self) -> Result<ScenarioConfig, HarnessError> {
        match &self.scenario_file {
            Some(file) => Ok(ScenarioConfig::load(&self.base_dir.join(file))?),
            None => {
                let text = toml::to_string(&self.scenario).map_err(|e| HarnessError::Config(e.to_string()))?;
                Ok(ScenarioConfig::from_toml_str(&text)?)
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |what: &str| Err(HarnessError::Config(what.to_string()));
        if self.scenario_file.is_some() && !self.scenario.is_empty() {
            return bad("give either scenario or scenario_file, not both");
        }
        self.scenario()?;
        let seeds = [
            self.run.seeds,
            self.sync_compare.seeds,
            self.freq_sweep.seeds,
            self.reconstruct.seeds,
            self.missdet.seeds,
            self.volumetric.seeds,
        ];
        if seeds.contains(&0) {
            return bad("seed lists must be non-empty");
        }
        let s = &self.sync_compare;
        if s.schemes.len() < 2 || s.jitter_ms.iter().any(|j| !(*j >= 0.0)) || s.devices < 2 {
            return bad("sync comparison needs two schemes, two devices and non-negative jitter");
        }
        let f = &self.freq_sweep;
        if !(f.bandwidth_bytes_per_s > 0.0)
            || f.frequencies_hz.iter().any(|p| !(*p > 0.0))
            || f.devices.iter().any(|d| *d < 2)
            || !(f.window_s > 0.0)
        {
            return bad("frequency sweep needs positive caps, rates and windows, and at least two devices");
        }
        if self.missdet.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("miss-detection rates must lie in [0, 1]");
        }
        let v = &self.volumetric;
        if v.dims == 0 || v.frame_stride == 0 || v.max_frames == 0 || v.threshold_offsets.is_empty() {
            return bad("volumetric settings must be positive");
        }
        Ok(())
    }

    /// Hash of the resolved configuration; stamped on every output row.
    pub fn hash(&self) -> Result<String, HarnessError> {
        let scenario = self.scenario()?;
        let resolved = Resolved {
            scenario: &scenario,
            run: &self.run,
            sync_compare: &self.sync_compare,
            freq_sweep: &self.freq_sweep,
            reconstruct: &self.reconstruct,
            missdet: &self.missdet,
            volumetric: &self.volumetric,
        };
        let json = serde_json::to_string(&resolved)?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}

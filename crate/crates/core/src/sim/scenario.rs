use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{MotionScript, RigConfig, Shake, SimError};
use crate::dataplane::PayloadKind;
use crate::sync::{SchemeKind, NTP_AVERAGED_REQUESTS};

/// Detector, pose and clock imperfections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProfile {
    pub joint_sigma_px: f64,
    /// Probability that a device misses the actor entirely in one frame.
    pub miss_rate: f64,
    /// Devices subject to misses; empty means all.
    pub miss_devices: Vec<usize>,
    pub pose_rotation_deg: f64,
    pub pose_translation_m: f64,
    /// Per-step decay of the pose error walk; 1 is an unbounded walk.
    pub pose_reversion: f64,
    /// Client clock offsets are uniform in ±this.
    pub clock_offset_ms: f64,
    /// Client clock drift is uniform in ±this.
    pub clock_drift_ppm: f64,
}

impl NoiseProfile {
    pub fn none() -> Self {
        Self {
            joint_sigma_px: 0.0,
            miss_rate: 0.0,
            miss_devices: Vec::new(),
            pose_rotation_deg: 0.0,
            pose_translation_m: 0.0,
            pose_reversion: 0.9,
            clock_offset_ms: 500.0,
            clock_drift_ppm: 0.0,
        }
    }

    pub fn misses(&self, device: usize) -> bool {
        self.miss_devices.is_empty() || self.miss_devices.contains(&device)
    }
}

/// Trigger-path model. The host reaches the relay over one hop and the
/// relay reaches client `a` over another; both directions are symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSettings {
    /// Base one-way latency of every hop.
    pub hop_latency_ms: f64,
    /// Standard deviation of the end-to-end host→client jitter.
    pub jitter_ms: f64,
    /// Extra one-way latency of the slowest client; client `a` of `A` gets
    /// `asymmetry·(a+1)/A`.
    pub asymmetry_ms: f64,
    /// Explicit per-client extra one-way latency; overrides `asymmetry_ms`.
    pub client_extra_ms: Vec<f64>,
    /// Loss probability of trigger datagrams on the relay→client hop.
    pub trigger_loss: f64,
    pub relay_processing_us: f64,
    pub rtt_samples: usize,
    pub probe_interval_ms: f64,
    /// How far ahead of its global stamp an NTP-scheduled capture happens.
    pub ntp_lead_ms: f64,
}

/// Device→manager streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataplaneSettings {
    pub latency_ms: f64,
    pub jitter_ms: f64,
    /// Shared medium cap; 0 is unlimited.
    pub bandwidth_bytes_per_s: f64,
    pub socket_bytes: usize,
    pub buffer_depth: usize,
    pub max_unacked: usize,
    pub merge_timeout_ms: f64,
    pub watermark: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadSettings {
    pub kind: PayloadKind,
    /// Size of synthetic IMAGE payloads.
    pub image_bytes: usize,
}

/// Everything a session needs; a declarative, TOML-loadable scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub devices: usize,
    pub frequency_hz: f64,
    pub duration_s: f64,
    pub scheme: SchemeKind,
    pub ntp_requests: u32,
    pub rig: RigConfig,
    pub actor: MotionScript,
    pub noise: NoiseProfile,
    pub network: NetworkSettings,
    pub dataplane: DataplaneSettings,
    pub payload: PayloadSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Static cameras, 312 triggers.
    Easy,
    /// Half the cameras moving, 291 triggers.
    Medium,
    /// Every camera moving and shaking, 329 triggers.
    Hard,
    /// No noise, no jitter: the oracle configuration.
    Ideal,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self, SimError> {
        match name.to_ascii_lowercase().as_str() {
            "easy" => Ok(Self::Easy),
            "medium" => Ok(Self::Medium),
            "hard" => Ok(Self::Hard),
            "ideal" => Ok(Self::Ideal),
            other => Err(SimError::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

impl ScenarioConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            name: "easy".into(),
            seed: 1,
            devices: 6,
            frequency_hz: 10.0,
            duration_s: 31.1,
            scheme: SchemeKind::TriggerRelay,
            ntp_requests: NTP_AVERAGED_REQUESTS,
            rig: RigConfig::default(),
            actor: MotionScript::walk(4.0, 0.3, 1.0),
            noise: NoiseProfile {
                joint_sigma_px: 2.0,
                pose_rotation_deg: 0.1,
                pose_translation_m: 0.005,
                ..NoiseProfile::none()
            },
            network: NetworkSettings {
                hop_latency_ms: 5.0,
                jitter_ms: 4.0,
                asymmetry_ms: 0.0,
                client_extra_ms: Vec::new(),
                trigger_loss: 0.0,
                relay_processing_us: 100.0,
                rtt_samples: crate::sync::DEFAULT_RTT_SAMPLES,
                probe_interval_ms: 5.0,
                ntp_lead_ms: 200.0,
            },
            dataplane: DataplaneSettings {
                latency_ms: 2.0,
                jitter_ms: 0.5,
                bandwidth_bytes_per_s: 0.0,
                socket_bytes: 256 * 1024,
                buffer_depth: 64,
                max_unacked: 1024,
                merge_timeout_ms: 500.0,
                watermark: true,
            },
            payload: PayloadSettings {
                kind: PayloadKind::Joints2d,
                image_bytes: 160 * 1024,
            },
        };
        match preset {
            Preset::Easy => base,
            Preset::Medium => Self {
                name: "medium".into(),
                duration_s: 29.0,
                rig: RigConfig {
                    moving: 3,
                    ..base.rig.clone()
                },
                ..base
            },
            Preset::Hard => Self {
                name: "hard".into(),
                duration_s: 32.8,
                rig: RigConfig {
                    moving: base.devices,
                    shake: Shake {
                        position_m: 0.01,
                        rotation_deg: 0.3,
                        frequency_hz: 1.5,
                    },
                    ..base.rig.clone()
                },
                noise: NoiseProfile {
                    pose_rotation_deg: 0.2,
                    pose_translation_m: 0.01,
                    ..base.noise.clone()
                },
                ..base
            },
            Preset::Ideal => Self {
                name: "ideal".into(),
                duration_s: 9.9,
                noise: NoiseProfile::none(),
                network: NetworkSettings {
                    jitter_ms: 0.0,
                    ..base.network.clone()
                },
                dataplane: DataplaneSettings {
                    jitter_ms: 0.0,
                    ..base.dataplane.clone()
                },
                ..base
            },
        }
    }

    /// Parses a TOML scenario. An optional top-level `preset` key picks the
    /// base configuration (default `easy`); every other key overrides it.
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let mut overrides: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| SimError::Parse(e.to_string()))?;
        let preset = match overrides.remove("preset") {
            Some(toml::Value::String(name)) => Preset::parse(&name)?,
            Some(other) => return Err(SimError::Parse(format!("preset must be a string, got {other}"))),
            None => Preset::Easy,
        };
        let mut merged = toml::Value::try_from(Self::preset(preset)).map_err(|e| SimError::Parse(e.to_string()))?;
        merge_into(&mut merged, toml::Value::Table(overrides));
        let config: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| SimError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Short SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidConfig(what.to_string()));
        let n = &self.noise;
        let net = &self.network;
        let dp = &self.dataplane;
        if self.devices < 2 || self.devices > usize::from(u16::MAX) {
            return bad("need at least two devices");
        }
        if !(self.frequency_hz > 0.0) || !(self.duration_s >= 0.0) {
            return bad("frequency must be positive and duration non-negative");
        }
        if [
            n.joint_sigma_px,
            n.pose_rotation_deg,
            n.pose_translation_m,
            n.clock_offset_ms,
            n.clock_drift_ppm,
        ]
        .iter()
        .any(|v| !(*v >= 0.0))
        {
            return bad("noise sigmas must be non-negative");
        }
        if !(0.0..=1.0).contains(&n.miss_rate) || !(0.0..=1.0).contains(&net.trigger_loss) {
            return bad("rates must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&n.pose_reversion) {
            return bad("pose reversion must lie in [0, 1]");
        }
        if n.miss_devices.iter().any(|d| *d >= self.devices) {
            return bad("miss device out of range");
        }
        if [
            net.hop_latency_ms,
            net.jitter_ms,
            net.asymmetry_ms,
            net.relay_processing_us,
            net.ntp_lead_ms,
        ]
        .iter()
        .chain(&net.client_extra_ms)
        .any(|v| !(*v >= 0.0))
        {
            return bad("latencies must be non-negative");
        }
        if !net.client_extra_ms.is_empty() && net.client_extra_ms.len() != self.devices - 1 {
            return bad("client_extra_ms needs one entry per client");
        }
        if net.rtt_samples == 0 || !(net.probe_interval_ms > 0.0) {
            return bad("need at least one RTT probe");
        }
        if self.ntp_requests == 0 {
            return bad("need at least one NTP request");
        }
        if [
            dp.latency_ms,
            dp.jitter_ms,
            dp.bandwidth_bytes_per_s,
            dp.merge_timeout_ms,
        ]
        .iter()
        .any(|v| !(*v >= 0.0))
            || dp.socket_bytes == 0
        {
            return bad("data plane parameters must be non-negative");
        }
        Ok(())
    }

    /// Extra one-way latency of client `a` beyond the base hop.
    pub fn client_extra_ms(&self, a: usize) -> f64 {
        if !self.network.client_extra_ms.is_empty() {
            return self.network.client_extra_ms[a];
        }
        let clients = (self.devices - 1) as f64;
        self.network.asymmetry_ms * (a + 1) as f64 / clients
    }
}

fn merge_into(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_into(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sync::schedule_triggers;

    #[test]
    fn presets_have_the_documented_trigger_counts() {
        for (p, n) in [
            (Preset::Easy, 312),
            (Preset::Medium, 291),
            (Preset::Hard, 329),
            (Preset::Ideal, 100),
        ] {
            let c = ScenarioConfig::preset(p);
            c.validate().unwrap();
            assert_eq!(schedule_triggers(c.frequency_hz, c.duration_s).unwrap().len(), n);
        }
    }

    #[test]
    fn toml_overrides_merge_into_the_preset() {
        let text = r#"
            preset = "hard"
            seed = 9
            scheme = "ntp_averaged"
            [network]
            jitter_ms = 8.0
            [payload]
            kind = "SILHOUETTE"
        "#;
        let c = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(c.name, "hard");
        assert_eq!(c.seed, 9);
        assert_eq!(c.scheme, SchemeKind::NtpAveraged);
        assert_eq!(c.network.jitter_ms, 8.0);
        assert_eq!(c.network.hop_latency_ms, 5.0);
        assert_eq!(c.payload.kind, PayloadKind::Silhouette);
        assert_eq!(c.rig.moving, 6);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ScenarioConfig::preset(Preset::Medium);
        let back = ScenarioConfig::from_toml_str(&format!("preset = \"easy\"\n{}", c.to_toml())).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ScenarioConfig::from_toml_str("preset = \"nope\"").is_err());
        assert!(ScenarioConfig::from_toml_str("bogus = 1").is_err());
        assert!(ScenarioConfig::from_toml_str("[noise]\nmiss_rate = 1.5").is_err());
        assert!(ScenarioConfig::from_toml_str("devices = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::preset(Preset::Easy);
        let b = ScenarioConfig { seed: 2, ..a.clone() };
        assert_eq!(a.hash().len(), 16);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn asymmetry_spreads_over_clients() {
        let mut c = ScenarioConfig::preset(Preset::Easy);
        c.network.asymmetry_ms = 10.0;
        assert!((c.client_extra_ms(4) - 10.0).abs() < 1e-12);
        assert!((c.client_extra_ms(0) - 2.0).abs() < 1e-12);
    }
}

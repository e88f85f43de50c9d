//! Pipeline configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::AssociationConfig;
use crate::evaluation::MapScoreConfig;
use crate::geometry::PoseNoise;
use crate::map_optimization::MapConfig;
use crate::pose_update::PoseUpdateConfig;
use crate::simulation::{PairProtocol, ScenarioConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub frames: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Observation resampling step (m).
    pub resolution: f64,
    /// Per-point sigma is `kappa · ‖p‖`.
    pub kappa: f64,
    /// Per-frame odometry uncertainty used for gating and as the pose prior
    /// (radians, meters).
    pub pose_noise: PoseNoise,
    pub use_pose_update: bool,
    pub association: AssociationConfig,
    pub pose_update: PoseUpdateConfig,
    pub map: MapConfig,
    pub map_score: MapScoreConfig,
    pub scenario: ScenarioConfig,
    pub pairs: PairProtocol,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolution: 0.5,
            kappa: 0.01,
            pose_noise: PoseNoise::new(0.3f64.to_radians(), 0.3),
            use_pose_update: true,
            association: AssociationConfig::default(),
            pose_update: PoseUpdateConfig::default(),
            map: MapConfig::default(),
            map_score: MapScoreConfig::default(),
            scenario: ScenarioConfig::default(),
            pairs: PairProtocol::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded. Paths are excluded so
    /// the same settings hash identically wherever files live.
    pub fn hash(&self) -> String {
        let mut clean = self.clone();
        clean.paths = PathsConfig::default();
        let bytes = serde_json::to_vec(&clean).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let mut cfg = PipelineConfig::default();
        cfg.kappa = 0.013;
        cfg.association.use_consistency = false;
        cfg.paths.out = Some("out".into());
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"resolution": 0.5, "bogus": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"map": {"chrod": 3.0}}"#).is_err());
        let partial = PipelineConfig::from_json(r#"{"kappa": 0.02}"#).unwrap();
        assert_eq!(partial.resolution, 0.5);
        assert_eq!(partial.kappa, 0.02);
    }
}

use std::fs;
use std::path::Path;

use eid_core::adversarial::GanConfig;
use eid_core::data::{HazeRange, SceneSpec};
use eid_core::trainer::{TrainConfig, Variant};
use eid_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Cells of an ablation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub transforms: Vec<String>,
    /// Run cells on separate threads (bounded by `EID_THREADS`).
    pub parallel: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: Variant::ALL.to_vec(),
            transforms: vec!["rotate".into()],
            parallel: false,
        }
    }
}

/// Every option of every subcommand. Flags override the matching keys; the
/// effective document is written as `config.json` into each output
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub haze: HazeRange,
    pub count: usize,
    pub train: TrainConfig,
    pub gan: GanConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneSpec::default(),
            haze: HazeRange::default(),
            count: 64,
            train: TrainConfig::default(),
            gan: GanConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
            key: "config".into(),
            value: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    /// Writes `config.json` into `dir`, creating it.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let p = dir.join("config.json");
        fs::write(&p, self.to_json()).map_err(|e| Error::Io { path: p, source: e })
    }
}

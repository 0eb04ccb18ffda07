//! The combined configuration file: `[engine]` and `[gateway]` tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayConfig;
use crate::model::EngineConfig;

/// Environment variable naming the configuration file.
pub const ENV_CONFIG: &str = "POLYLEARN_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub engine: EngineConfig,
    pub gateway: GatewayConfig,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let s: Settings = toml::from_str(text).map_err(|e| e.to_string())?;
        s.engine.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

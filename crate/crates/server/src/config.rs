use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use emfi_core::RigConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Holds `calibration.json` and one directory per campaign under `campaigns/`.
    pub workspace: PathBuf,
    pub rig: RigConfig,
    /// Real time spent per attempt on a simulated rig. The simulator finishes
    /// cycles in microseconds; a small pace lets clients follow along.
    pub sim_attempt_pace_ms: u64,
    /// Device commands waiting for the worker before callers get `busy`.
    pub queue_depth: usize,
    pub reply_timeout_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            workspace: PathBuf::from("emfi-workspace"),
            rig: RigConfig::default(),
            sim_attempt_pace_ms: 0,
            queue_depth: 16,
            reply_timeout_ms: 30_000,
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> emfi_core::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn campaigns_dir(&self) -> PathBuf {
        self.workspace.join("campaigns")
    }

    pub fn calibration_path(&self) -> PathBuf {
        self.workspace.join("calibration.json")
    }
}

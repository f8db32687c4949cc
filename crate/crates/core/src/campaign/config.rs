use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiePoint, GridSpec, PayloadKind, SupplyVoltages, TriggerPlan};
use crate::pulse::PulseConfig;

/// Delays closer than this (in wait cycles) belong to the same group.
pub const DEFAULT_GROUPING_THRESHOLD: u32 = 3;
pub const DEFAULT_SWEEP_ATTEMPTS: u64 = 20;

/// What a campaign does. Grid and points are in die coordinates (mm from
/// the die corner); the grid's `z` is the working height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CampaignMode {
    Scan {
        grid: GridSpec,
        attempts_per_position: u64,
    },
    Fixed {
        at: DiePoint,
        z: f64,
        attempts: u64,
    },
    Sweep {
        at: DiePoint,
        z: f64,
        lo: u32,
        hi: u32,
        #[serde(default = "one")]
        step: u32,
        #[serde(default = "sweep_attempts")]
        attempts_per_delay: u64,
        #[serde(default = "grouping")]
        grouping_threshold: u32,
    },
}

fn one() -> u32 {
    1
}

fn sweep_attempts() -> u64 {
    DEFAULT_SWEEP_ATTEMPTS
}

fn grouping() -> u32 {
    DEFAULT_GROUPING_THRESHOLD
}

impl CampaignMode {
    pub fn name(&self) -> &'static str {
        match self {
            CampaignMode::Scan { .. } => "scan",
            CampaignMode::Fixed { .. } => "attack",
            CampaignMode::Sweep { .. } => "sweep",
        }
    }
}

/// Per-step time budgets of one attack cycle, ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleTimeouts {
    pub charge_ms: u64,
    pub spi_ms: u64,
    pub output_ms: u64,
    pub quiet_ms: u64,
}

impl Default for CycleTimeouts {
    fn default() -> Self {
        CycleTimeouts {
            charge_ms: 1000,
            spi_ms: 2000,
            output_ms: 500,
            quiet_ms: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    #[serde(default)]
    pub name: String,
    pub mode: CampaignMode,
    pub payload: PayloadKind,
    pub pulse: PulseConfig,
    #[serde(default)]
    pub supply: SupplyVoltages,
    /// Used by scans and fixed-point attacks; sweeps set their own delays.
    #[serde(default)]
    pub trigger: TriggerPlan,
    #[serde(default)]
    pub timeouts: CycleTimeouts,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_feed")]
    pub feed_mm_s: f64,
    /// Leave timeouts and boot failures out of success-rate denominators.
    #[serde(default)]
    pub exclude_errors: bool,
}

fn default_feed() -> f64 {
    10.0
}

impl CampaignConfig {
    pub fn new(mode: CampaignMode, payload: PayloadKind, pulse: PulseConfig) -> Self {
        CampaignConfig {
            name: String::new(),
            mode,
            payload,
            pulse,
            supply: SupplyVoltages::nominal(),
            trigger: TriggerPlan::default(),
            timeouts: CycleTimeouts::default(),
            seed: 0,
            feed_mm_s: default_feed(),
            exclude_errors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.payload.validate()?;
        self.pulse.validate()?;
        self.supply.validate()?;
        if !(self.feed_mm_s.is_finite() && self.feed_mm_s > 0.0) {
            return Err(Error::validation("feed must be positive"));
        }
        match &self.mode {
            CampaignMode::Scan {
                grid,
                attempts_per_position,
            } => {
                grid.validate()?;
                if *attempts_per_position == 0 {
                    return Err(Error::validation("attempts per position must be positive"));
                }
            }
            CampaignMode::Fixed { attempts, z, .. } => {
                if *attempts == 0 {
                    return Err(Error::validation("attempts must be positive"));
                }
                if !z.is_finite() {
                    return Err(Error::validation("z must be finite"));
                }
            }
            CampaignMode::Sweep {
                step,
                attempts_per_delay,
                z,
                ..
            } => {
                if self.payload != PayloadKind::ArkVerify {
                    return Err(Error::validation("delay sweeps need the key verification payload"));
                }
                if *step == 0 {
                    return Err(Error::validation("sweep step must be positive"));
                }
                if *attempts_per_delay == 0 {
                    return Err(Error::validation("attempts per delay must be positive"));
                }
                if !z.is_finite() {
                    return Err(Error::validation("z must be finite"));
                }
            }
        }
        Ok(())
    }
}

//! The full set of device handles a campaign drives.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::{DieAnchor, OffsetCalibration};
use crate::campaign::Interlock;
use crate::clock::{SharedClock, VirtualClock, WallClock};
use crate::console::DutConsole;
use crate::error::Result;
use crate::model::{PayloadKind, StagePosition, SupplyVoltages};
use crate::motion::{MotionLimits, Stage};
use crate::pulse::{PulseGenState, PulseGenerator};
use crate::sim::{SimBench, SimOptions};
use crate::transport::{SerialSettings, SerialTransport};
use crate::trigger::{PowerState, TriggerUnit};

/// Serial ports of a hardware rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialPorts {
    pub stage: SerialSettings,
    pub pulse: SerialSettings,
    pub trigger: SerialSettings,
    pub console: SerialSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum RigConfig {
    Simulated(Box<SimOptions>),
    Serial {
        ports: SerialPorts,
        #[serde(default)]
        limits: MotionLimits,
        #[serde(default)]
        anchor: Option<DieAnchor>,
    },
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig::Simulated(Box::default())
    }
}

/// What the operator console shows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigStatus {
    pub position: StagePosition,
    pub homed: bool,
    pub moving: bool,
    pub pulse_state: Option<PulseGenState>,
    pub armed: bool,
    pub power: PowerState,
    pub supply: SupplyVoltages,
    pub simulated: bool,
}

pub struct Rig {
    pub stage: Stage,
    pub pulse: PulseGenerator,
    pub trigger: TriggerUnit,
    pub console: DutConsole,
    pub interlock: Interlock,
    pub clock: SharedClock,
    /// Die corner and size; required before die coordinates can be used.
    pub anchor: Option<DieAnchor>,
    /// Offset for the mounted tip; required before campaigns can run.
    pub calibration: Option<OffsetCalibration>,
    /// Last setpoints sent to the supply rails.
    pub supply: SupplyVoltages,
    sim: Option<SimBench>,
}

impl Rig {
    /// A simulated rig whose calibration matches the bench exactly.
    pub fn simulated(options: SimOptions) -> Result<Rig> {
        Self::simulated_with(options, Interlock::new())
    }

    pub fn simulated_with(options: SimOptions, interlock: Interlock) -> Result<Rig> {
        let clock = VirtualClock::new();
        let shared: SharedClock = Arc::new(clock.clone());
        let anchor = options.anchor;
        let calibration = options.probe_offset.clone();
        let limits = options.limits;
        let bench = SimBench::new(options, clock)?;
        Ok(Rig {
            stage: Stage::new(bench.stage_link(), limits, interlock.clone(), shared.clone())?,
            pulse: PulseGenerator::new(bench.pulse_link(), interlock.clone(), shared.clone()),
            trigger: TriggerUnit::new(bench.trigger_link(), interlock.clone()),
            console: DutConsole::new(bench.console_link()),
            interlock,
            clock: shared,
            anchor: Some(anchor),
            calibration: Some(calibration),
            supply: SupplyVoltages::nominal(),
            sim: Some(bench),
        })
    }

    pub fn open(config: &RigConfig) -> Result<Rig> {
        match config {
            RigConfig::Simulated(options) => Self::simulated((**options).clone()),
            RigConfig::Serial {
                ports,
                limits,
                anchor,
            } => {
                let interlock = Interlock::new();
                let clock: SharedClock = Arc::new(WallClock::new());
                let open = |s: &SerialSettings| -> Result<Box<SerialTransport>> {
                    Ok(Box::new(SerialTransport::open(s)?))
                };
                Ok(Rig {
                    stage: Stage::new(open(&ports.stage)?, *limits, interlock.clone(), clock.clone())?,
                    pulse: PulseGenerator::new(open(&ports.pulse)?, interlock.clone(), clock.clone()),
                    trigger: TriggerUnit::new(open(&ports.trigger)?, interlock.clone()),
                    console: DutConsole::new(open(&ports.console)?),
                    interlock,
                    clock,
                    anchor: *anchor,
                    calibration: None,
                    supply: SupplyVoltages::nominal(),
                    sim: None,
                })
            }
        }
    }

    pub fn sim(&self) -> Option<&SimBench> {
        self.sim.as_ref()
    }

    /// Prepares per-attempt randomness. Only the simulator draws any.
    pub fn begin_attempt(&self, seed: u64, seq: u64) {
        if let Some(sim) = &self.sim {
            sim.reseed(seed, seq);
        }
    }

    /// Selects the flash image. On hardware the emulated flash is loaded
    /// out of band, so this only affects the simulator.
    pub fn select_payload(&self, payload: PayloadKind) {
        match &self.sim {
            Some(sim) => sim.set_payload(payload),
            None => tracing::info!(?payload, "payload selection is external on hardware"),
        }
    }

    /// Snapshot without touching the devices.
    pub fn status(&self) -> RigStatus {
        let state = self.stage.state();
        RigStatus {
            position: state.position,
            homed: state.homed,
            moving: state.moving,
            pulse_state: self.pulse.last_state().cloned(),
            armed: self.interlock.flags().pulse_armed,
            power: self.trigger.power(),
            supply: self.supply,
            simulated: self.sim.is_some(),
        }
    }
}

impl std::fmt::Debug for Rig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Rig")
            .field("stage", &self.stage)
            .field("anchor", &self.anchor)
            .field("simulated", &self.sim.is_some())
            .finish_non_exhaustive()
    }
}

//! Electromagnetic fault injection rig control.
//!
//! Drivers for the XYZ stage, pulse generator, trigger/power unit and target
//! console, an in-process simulation of all of them, calibration helpers,
//! attack campaigns and their logs and reports.

pub mod calibration;
pub mod campaign;
pub mod clock;
pub mod console;
pub mod dut;
pub mod error;
pub mod grid;
pub mod model;
pub mod motion;
pub mod persist;
pub mod pulse;
pub mod rig;
pub mod sim;
pub mod stats;
pub mod transport;
pub mod trigger;

pub use error::{Error, Result};
pub use model::{
    AttemptOutcome, AttemptRecord, CycleStep, DiePoint, GridSpec, OutcomeHistogram, PayloadKind,
    StagePosition, SuccessStats, SupplyVoltages, TriggerPlan, Volts,
};
pub use pulse::{ProbeTip, PulseConfig, Winding};
pub use rig::{Rig, RigConfig, RigStatus};

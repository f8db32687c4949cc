//! XYZ stage control over the Marlin-style line protocol.

mod gcode;
mod sim;
mod stage;

pub use gcode::{
    decode, decode_position_report, encode, format_position_report, parse_line, GCodeCommand,
    GLine,
};
pub use sim::MarlinSim;
pub use stage::{MachineState, MoveAck, Stage};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StagePosition;

/// Soft limits and kinematics of the stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionLimits {
    /// Travel per axis, mm. Valid coordinates are `0..=travel`.
    pub travel: f64,
    /// Positioning quantum, mm.
    pub step: f64,
    /// Maximum speed per axis, mm/s.
    pub max_speed: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        MotionLimits {
            travel: 100.0,
            step: 0.0025,
            max_speed: 10.0,
        }
    }
}

impl MotionLimits {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.travel) && positive(self.step) && positive(self.max_speed)) {
            return Err(Error::validation("motion limits must all be positive"));
        }
        if self.travel < self.step {
            return Err(Error::validation("travel must be at least one step"));
        }
        Ok(())
    }

    /// Checks every axis of `target` against `0..=travel`.
    pub fn check(&self, target: &StagePosition) -> Result<()> {
        for (axis, v) in target.axes() {
            if !v.is_finite() {
                return Err(Error::validation(format!("axis {axis} target is not finite")));
            }
            // Half a step of slack: the firmware rounds to the nearest step anyway.
            if v < -self.step / 2.0 || v > self.travel + self.step / 2.0 {
                return Err(Error::Limit {
                    axis,
                    value: v,
                    max: self.travel,
                });
            }
        }
        Ok(())
    }

    pub fn steps_of(&self, mm: f64) -> i64 {
        (mm / self.step).round() as i64
    }

    pub fn mm_of(&self, steps: i64) -> f64 {
        crate::model::steps_to_units(steps, self.step)
    }

    /// Minimum time for a straight move; axes run in parallel.
    pub fn move_duration(&self, from: &StagePosition, to: &StagePosition, feed_mm_s: f64) -> f64 {
        from.chebyshev_distance(to) / feed_mm_s.min(self.max_speed)
    }
}

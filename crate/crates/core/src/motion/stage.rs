use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::gcode::{decode_position_report, encode, GCodeCommand};
use super::MotionLimits;
use crate::campaign::{DeviceCommand, Interlock};
use crate::clock::SharedClock;
use crate::error::{Error, Result};
use crate::model::StagePosition;
use crate::transport::{transact, LineTransport};

const DEVICE: &str = "motion";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MachineState {
    pub position: StagePosition,
    pub homed: bool,
    pub moving: bool,
}

/// Returned once the firmware confirms a move is complete.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveAck {
    pub position: StagePosition,
    pub elapsed: Duration,
}

/// Exclusive handle to the XYZ stage.
pub struct Stage {
    link: Box<dyn LineTransport>,
    limits: MotionLimits,
    state: MachineState,
    interlock: Interlock,
    clock: SharedClock,
    timeout: Duration,
}

impl Stage {
    pub fn new(
        link: Box<dyn LineTransport>,
        limits: MotionLimits,
        interlock: Interlock,
        clock: SharedClock,
    ) -> Result<Self> {
        limits.validate()?;
        Ok(Stage {
            link,
            limits,
            state: MachineState::default(),
            interlock,
            clock,
            timeout: Duration::from_secs(2),
        })
    }

    pub fn limits(&self) -> &MotionLimits {
        &self.limits
    }

    pub fn state(&self) -> MachineState {
        self.state
    }

    /// Per-line response timeout, on top of the expected motion time.
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn send(&mut self, cmd: &GCodeCommand, motion_secs: f64) -> Result<Vec<String>> {
        let timeout = self.timeout + Duration::from_secs_f64(motion_secs * 2.0);
        let mut replies = Vec::new();
        for line in encode(cmd).lines() {
            let resp = transact(self.link.as_mut(), DEVICE, line, timeout, |l| {
                l == "ok" || l.starts_with("Error")
            })?;
            if let Some(err) = resp.iter().find(|l| l.starts_with("Error")) {
                return Err(Error::device(DEVICE, err.clone()));
            }
            replies.extend(resp);
        }
        Ok(replies)
    }

    /// Homes all axes; establishes the origin.
    pub fn home(&mut self) -> Result<MoveAck> {
        self.interlock.begin_motion(DeviceCommand::Home)?;
        let start = self.clock.elapsed();
        let secs = self.state.position.chebyshev_distance(&StagePosition::ORIGIN)
            / self.limits.max_speed
            + self.limits.travel / self.limits.max_speed;
        self.state.moving = true;
        let res = self.send(&GCodeCommand::Home, secs);
        self.state.moving = false;
        res?;
        let pos = self.get_position()?;
        if pos != StagePosition::ORIGIN {
            return Err(Error::device(
                DEVICE,
                format!("homing finished at {pos}, expected origin"),
            ));
        }
        self.state.homed = true;
        Ok(MoveAck {
            position: pos,
            elapsed: self.clock.elapsed() - start,
        })
    }

    /// Queries the firmware for its current position.
    pub fn get_position(&mut self) -> Result<StagePosition> {
        let replies = self.send(&GCodeCommand::ReportPosition, 0.0)?;
        let report = replies
            .iter()
            .find(|l| l.starts_with("X:"))
            .ok_or_else(|| Error::device(DEVICE, "M114 returned no position report"))?;
        let pos = decode_position_report(report)?;
        self.state.position = pos;
        Ok(pos)
    }

    pub fn set_fan(&mut self, index: u8, duty: u8) -> Result<()> {
        self.send(&GCodeCommand::SetFanSpeed { index, duty }, 0.0)?;
        Ok(())
    }

    fn precheck(&self, target: &StagePosition, feed_mm_s: f64) -> Result<StagePosition> {
        if !self.state.homed {
            return Err(Error::State {
                device: DEVICE,
                op: "move",
                state: "not homed".into(),
            });
        }
        if !(feed_mm_s.is_finite() && feed_mm_s > 0.0) {
            return Err(Error::validation(format!(
                "feed must be positive, got {feed_mm_s}"
            )));
        }
        self.limits.check(target)?;
        Ok(target.quantized(self.limits.step))
    }

    /// Moves to `target` and blocks until the firmware reports arrival.
    ///
    /// Limit, homing and interlock violations are detected before any command
    /// is sent. A target equal to the current position returns immediately.
    pub fn move_to(&mut self, target: StagePosition, feed_mm_s: f64) -> Result<MoveAck> {
        let target = self.precheck(&target, feed_mm_s)?;
        if target == self.state.position {
            self.interlock.check_motion()?;
            return Ok(MoveAck {
                position: target,
                elapsed: Duration::ZERO,
            });
        }
        let cmd = GCodeCommand::move_absolute(target, feed_mm_s)?;
        self.execute_move(cmd, target, feed_mm_s)
    }

    /// Relative move; same checks as [`Stage::move_to`].
    pub fn jog(&mut self, dx: f64, dy: f64, dz: f64, feed_mm_s: f64) -> Result<MoveAck> {
        let target = self.state.position.offset(dx, dy, dz);
        let target = self.precheck(&target, feed_mm_s)?;
        let delta = StagePosition::new(
            target.x - self.state.position.x,
            target.y - self.state.position.y,
            target.z - self.state.position.z,
        );
        if delta == StagePosition::ORIGIN {
            self.interlock.check_motion()?;
            return Ok(MoveAck {
                position: target,
                elapsed: Duration::ZERO,
            });
        }
        let cmd = GCodeCommand::move_relative(delta, feed_mm_s)?;
        self.execute_move(cmd, target, feed_mm_s)
    }

    fn execute_move(
        &mut self,
        cmd: GCodeCommand,
        target: StagePosition,
        feed_mm_s: f64,
    ) -> Result<MoveAck> {
        self.interlock.begin_motion(DeviceCommand::Move)?;
        let start = self.clock.elapsed();
        let secs = self
            .limits
            .move_duration(&self.state.position, &target, feed_mm_s);
        self.state.moving = true;
        let res = self
            .send(&cmd, secs)
            .and_then(|_| self.send(&GCodeCommand::FinishMoves, secs));
        self.state.moving = false;
        res?;
        let pos = self.get_position()?;
        if pos.chebyshev_distance(&target) > self.limits.step / 2.0 {
            return Err(Error::device(
                DEVICE,
                format!("stage reports {pos} after move to {target}"),
            ));
        }
        Ok(MoveAck {
            position: pos,
            elapsed: self.clock.elapsed() - start,
        })
    }
}

impl std::fmt::Debug for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stage")
            .field("limits", &self.limits)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

use std::time::Duration;

use super::gcode::{format_position_report, parse_line};
use super::MotionLimits;
use crate::clock::VirtualClock;
use crate::model::StagePosition;

/// Stock Marlin semantics for the supported subset, running on a virtual clock.
///
/// Positions are kept as integer step counts. Moves beyond the travel are
/// clamped by software endstops, as the real firmware does.
#[derive(Debug, Clone)]
pub struct MarlinSim {
    limits: MotionLimits,
    steps: [i64; 3],
    homed: bool,
    relative: bool,
    fans: [u8; 8],
    moves: u64,
}

impl MarlinSim {
    pub fn new(limits: MotionLimits) -> Self {
        MarlinSim {
            limits,
            steps: [0; 3],
            homed: false,
            relative: false,
            fans: [0; 8],
            moves: 0,
        }
    }

    pub fn position(&self) -> StagePosition {
        let mm = |s| self.limits.mm_of(s);
        StagePosition::new(mm(self.steps[0]), mm(self.steps[1]), mm(self.steps[2]))
    }

    pub fn is_homed(&self) -> bool {
        self.homed
    }

    pub fn fan(&self, index: usize) -> Option<u8> {
        self.fans.get(index).copied()
    }

    /// Motion commands executed so far (homing included).
    pub fn move_count(&self) -> u64 {
        self.moves
    }

    fn travel_to(&mut self, target: [i64; 3], feed_mm_s: f64, clock: &VirtualClock) {
        let max_steps = self.limits.steps_of(self.limits.travel);
        let target = target.map(|s| s.clamp(0, max_steps));
        let from = self.position();
        self.steps = target;
        let secs = self.limits.move_duration(&from, &self.position(), feed_mm_s);
        clock.advance(Duration::from_secs_f64(secs));
        self.moves += 1;
    }

    /// Executes one line and returns the firmware's reply lines.
    pub fn handle(&mut self, line: &str, clock: &VirtualClock) -> Vec<String> {
        let parsed = match parse_line(line.trim(), 0) {
            Ok(p) => p,
            Err(_) => {
                return vec![format!("echo:Unknown command: \"{}\"", line.trim()), "ok".into()]
            }
        };
        let mut out = Vec::new();
        match parsed.word.as_str() {
            "G28" => {
                let speed = self.limits.max_speed;
                self.travel_to([0; 3], speed, clock);
                self.homed = true;
            }
            "G90" => self.relative = false,
            "G91" => self.relative = true,
            "G0" | "G1" => {
                let feed = parsed
                    .param('F')
                    .map(|f| f / 60.0)
                    .unwrap_or(self.limits.max_speed);
                let mut target = self.steps;
                for (i, axis) in ['X', 'Y', 'Z'].into_iter().enumerate() {
                    if let Some(v) = parsed.param(axis) {
                        let s = self.limits.steps_of(v);
                        target[i] = if self.relative { target[i] + s } else { s };
                    }
                }
                self.travel_to(target, feed, clock);
            }
            // Moves complete synchronously in the simulator.
            "M400" => {}
            "M114" => out.push(format_position_report(&self.position(), self.steps)),
            "M106" => {
                let idx = parsed.param('P').unwrap_or(0.0) as usize;
                let duty = parsed.param('S').unwrap_or(255.0).clamp(0.0, 255.0) as u8;
                if let Some(f) = self.fans.get_mut(idx) {
                    *f = duty;
                }
            }
            other => out.push(format!("echo:Unknown command: \"{other}\"")),
        }
        out.push("ok".into());
        out
    }
}

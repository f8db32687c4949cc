//! Domain types shared by every part of the rig.
//!
//! Unit conventions, used everywhere in this crate:
//!
//! | quantity         | unit                | representation      |
//! |------------------|---------------------|---------------------|
//! | lengths          | millimeters         | `f64`               |
//! | supply voltages  | volts               | [`Volts`]           |
//! | pulse voltage    | volts               | `u32`               |
//! | pulse width      | nanoseconds         | `u32`               |
//! | trigger delays   | wait cycles         | `u32`               |
//! | feed rates       | mm/s (API), mm/min (wire) | `f64` / `u32` |

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::PulseConfig;

/// An absolute stage position in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StagePosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl StagePosition {
    pub const ORIGIN: StagePosition = StagePosition {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        StagePosition { x, y, z }
    }

    pub fn axes(&self) -> [(char, f64); 3] {
        [('X', self.x), ('Y', self.y), ('Z', self.z)]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Largest per-axis distance. Axes move independently, so this bounds move time.
    pub fn chebyshev_distance(&self, other: &StagePosition) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }

    /// Rounds every coordinate to the nearest multiple of `quantum`.
    pub fn quantized(&self, quantum: f64) -> StagePosition {
        let q = |v: f64| quantize(v, quantum);
        StagePosition::new(q(self.x), q(self.y), q(self.z))
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> StagePosition {
        StagePosition::new(self.x + dx, self.y + dy, self.z + dz)
    }
}

impl fmt::Display for StagePosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4}) mm", self.x, self.y, self.z)
    }
}

/// Nearest multiple of `quantum`.
///
/// Quanta with an integral reciprocal (0.0025 mm = 1/400) are computed by
/// division, which yields the float closest to the decimal value. A position
/// printed with enough decimals then parses back to the identical float.
pub fn quantize(value: f64, quantum: f64) -> f64 {
    steps_to_units((value / quantum).round() as i64, quantum)
}

/// `steps * quantum`, rounded the same way as [`quantize`].
pub fn steps_to_units(steps: i64, quantum: f64) -> f64 {
    let inv = (1.0 / quantum).round();
    if (inv * quantum - 1.0).abs() < 1e-12 {
        steps as f64 / inv
    } else {
        steps as f64 * quantum
    }
}

/// A point on the die surface, relative to the die corner, in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiePoint {
    pub x: f64,
    pub y: f64,
}

impl DiePoint {
    pub fn new(x: f64, y: f64) -> Self {
        DiePoint { x, y }
    }

    pub fn distance(&self, other: &DiePoint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// A rectangular scan lattice.
///
/// Borders are inclusive: a 4 x 3 mm area at 1 mm pitch has 5 x 4 points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: StagePosition,
    pub width: f64,
    pub height: f64,
    pub pitch: f64,
    pub z: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            return Err(Error::validation(format!(
                "grid pitch must be positive, got {}",
                self.pitch
            )));
        }
        if !(self.width.is_finite() && self.width >= 0.0) {
            return Err(Error::validation(format!(
                "grid width must be non-negative, got {}",
                self.width
            )));
        }
        if !(self.height.is_finite() && self.height >= 0.0) {
            return Err(Error::validation(format!(
                "grid height must be non-negative, got {}",
                self.height
            )));
        }
        if !self.origin.is_finite() || !self.z.is_finite() {
            return Err(Error::validation("grid origin must be finite"));
        }
        Ok(())
    }
}

/// A supply rail voltage in volts.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Volts(pub f64);

impl Volts {
    pub fn millivolts(self) -> u32 {
        (self.0 * 1000.0).round() as u32
    }

    pub fn from_millivolts(mv: u32) -> Volts {
        Volts(f64::from(mv) / 1000.0)
    }
}

impl fmt::Display for Volts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} V", self.0)
    }
}

/// The two CPU rails reachable over SVI2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplyVoltages {
    pub v_soc: Volts,
    pub v_core: Volts,
}

impl SupplyVoltages {
    pub const MAX: f64 = 1.5;

    pub fn nominal() -> Self {
        SupplyVoltages {
            v_soc: Volts(0.9),
            v_core: Volts(1.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("v_soc", self.v_soc), ("v_core", self.v_core)] {
            if !(v.0 > 0.0 && v.0 <= Self::MAX) {
                return Err(Error::range(what, v.0, 0.0, Self::MAX));
            }
        }
        Ok(())
    }
}

impl Default for SupplyVoltages {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Trigger delay after the SPI event, with a symmetric jitter window, in wait cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct TriggerPlan {
    pub delay: u32,
    pub window: u32,
}

impl TriggerPlan {
    pub fn new(delay: u32, window: u32) -> Self {
        TriggerPlan { delay, window }
    }

    /// Inclusive range the effective delay is drawn from. Clamped at zero.
    pub fn bounds(&self) -> (u32, u32) {
        (
            self.delay.saturating_sub(self.window),
            self.delay.saturating_add(self.window),
        )
    }
}

impl fmt::Display for TriggerPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.delay, self.window)
    }
}

/// Successes out of attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SuccessStats {
    pub successes: u64,
    pub attempts: u64,
}

impl SuccessStats {
    pub fn new(successes: u64, attempts: u64) -> Result<Self> {
        if successes > attempts {
            return Err(Error::validation(format!(
                "successes ({successes}) exceed attempts ({attempts})"
            )));
        }
        Ok(SuccessStats {
            successes,
            attempts,
        })
    }

    pub fn record(&mut self, success: bool) {
        self.attempts += 1;
        if success {
            self.successes += 1;
        }
    }

    pub fn merge(&mut self, other: SuccessStats) {
        self.successes += other.successes;
        self.attempts += other.attempts;
    }
}

impl fmt::Display for SuccessStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.successes, self.attempts)
    }
}

/// Classified result of one attack cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttemptOutcome {
    NoEffect,
    PayloadFault,
    Crash,
    BypassSuccess,
    BootFailure,
    Timeout,
}

impl AttemptOutcome {
    pub const ALL: [AttemptOutcome; 6] = [
        AttemptOutcome::NoEffect,
        AttemptOutcome::PayloadFault,
        AttemptOutcome::Crash,
        AttemptOutcome::BypassSuccess,
        AttemptOutcome::BootFailure,
        AttemptOutcome::Timeout,
    ];

    /// A fault landed in the payload or the verification was bypassed.
    pub fn is_success(self) -> bool {
        matches!(
            self,
            AttemptOutcome::PayloadFault | AttemptOutcome::BypassSuccess
        )
    }

    /// The cycle never reached the point where a fault could be judged.
    pub fn is_error(self) -> bool {
        matches!(self, AttemptOutcome::Timeout | AttemptOutcome::BootFailure)
    }

    /// Anything other than a clean run.
    pub fn is_fault(self) -> bool {
        matches!(
            self,
            AttemptOutcome::PayloadFault | AttemptOutcome::Crash | AttemptOutcome::BypassSuccess
        )
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AttemptOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Per-outcome counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeHistogram {
    counts: [u64; 6],
}

impl OutcomeHistogram {
    pub fn add(&mut self, outcome: AttemptOutcome) {
        self.counts[outcome.index()] += 1;
    }

    pub fn get(&self, outcome: AttemptOutcome) -> u64 {
        self.counts[outcome.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &OutcomeHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (AttemptOutcome, u64)> + '_ {
        AttemptOutcome::ALL.iter().map(|o| (*o, self.get(*o)))
    }
}

/// Code the simulated (or real) target runs while the pulse lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayloadKind {
    /// Increments a register counter `iterations` times, then compares.
    CounterLoop { iterations: u32 },
    /// Writes `word` to `n` stack slots, waits, reads them back.
    SramPattern { word: u32, n: u32 },
    /// The on-chip bootloader's root key hash comparison.
    ArkVerify,
}

impl PayloadKind {
    pub const DEFAULT_ITERATIONS: u32 = 1000;
    pub const DEFAULT_SRAM_WORDS: u32 = 64;
    pub const DEFAULT_SRAM_WORD: u32 = 0xA5A5_A5A5;

    pub fn counter_loop() -> Self {
        PayloadKind::CounterLoop {
            iterations: Self::DEFAULT_ITERATIONS,
        }
    }

    pub fn sram_pattern() -> Self {
        PayloadKind::SramPattern {
            word: Self::DEFAULT_SRAM_WORD,
            n: Self::DEFAULT_SRAM_WORDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PayloadKind::CounterLoop { iterations: 0 } => {
                Err(Error::validation("counter loop needs at least one iteration"))
            }
            PayloadKind::SramPattern { n: 0, .. } => {
                Err(Error::validation("SRAM pattern needs at least one word"))
            }
            _ => Ok(()),
        }
    }
}

/// Steps of one attack cycle, in the order they were executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStep {
    Disarm,
    Move,
    Arm,
    Charge,
    PowerOn,
    AwaitSpi,
    Collect,
    Classify,
    PowerOff,
}

impl CycleStep {
    /// The full sequence of an attack cycle that ran to completion.
    pub const CANONICAL: [CycleStep; 9] = [
        CycleStep::Disarm,
        CycleStep::Move,
        CycleStep::Arm,
        CycleStep::Charge,
        CycleStep::PowerOn,
        CycleStep::AwaitSpi,
        CycleStep::Collect,
        CycleStep::Classify,
        CycleStep::PowerOff,
    ];
}

/// Everything about one attack cycle. Written once, never modified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    /// Cycle duration in nanoseconds (virtual or wall time).
    pub duration_ns: u64,
    pub position: StagePosition,
    pub die_point: DiePoint,
    pub pulse: PulseConfig,
    pub supply: SupplyVoltages,
    pub trigger: TriggerPlan,
    /// Sampled delay actually used, if the SPI event arrived.
    pub effective_delay: Option<u32>,
    pub payload: PayloadKind,
    pub outcome: AttemptOutcome,
    pub output: String,
    pub steps: Vec<CycleStep>,
}

impl AttemptRecord {
    pub fn finished_at(&self) -> DateTime<Utc> {
        self.timestamp + chrono::Duration::nanoseconds(self.duration_ns as i64)
    }
}

//! Simulated device under test.
//!
//! The target boots like the security co-processor: it needs a minimum SoC
//! voltage, reads its first flash block over SPI (the trigger anchor) and
//! then runs one of three payloads while the pulse lands. Whether a pulse
//! does anything is decided by [`FaultModel`]: Gaussian susceptibility blobs
//! on the die, a hard pulse-voltage knee, a SoC-voltage gate and, for the
//! key verification, narrow timing windows.

use std::path::Path;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttemptOutcome, DiePoint, PayloadKind, Volts};
use crate::pulse::PulseConfig;

pub const FAULT_MODEL_SCHEMA: u32 = 1;

/// What a susceptible spot does when a pulse lands on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultEffect {
    LoopFault,
    SramFlip,
    Crash,
    ArkBypass,
}

impl FaultEffect {
    /// Effects only show up while the matching payload runs; crashes hit any payload.
    pub fn affects(self, payload: &PayloadKind) -> bool {
        matches!(
            (self, payload),
            (FaultEffect::Crash, _)
                | (FaultEffect::LoopFault, PayloadKind::CounterLoop { .. })
                | (FaultEffect::SramFlip, PayloadKind::SramPattern { .. })
                | (FaultEffect::ArkBypass, PayloadKind::ArkVerify)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultBlob {
    pub center: DiePoint,
    pub sigma: f64,
    pub p_max: f64,
    pub effect: FaultEffect,
}

impl FaultBlob {
    pub fn susceptibility(&self, at: &DiePoint) -> f64 {
        let d2 = (at.x - self.center.x).powi(2) + (at.y - self.center.y).powi(2);
        self.p_max * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Delay range (in wait cycles) in which the key comparison can be skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BypassWindow {
    pub center: u32,
    pub half_width: u32,
    /// Scales the blob probability inside this window.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl BypassWindow {
    pub fn contains(&self, cycles: u32) -> bool {
        cycles.abs_diff(self.center) <= self.half_width
    }
}

/// Position, voltage, supply and timing susceptibility of the simulated target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    pub schema_version: u32,
    pub blobs: Vec<FaultBlob>,
    /// Pulses below this voltage never cause an effect, volts.
    pub voltage_knee: u32,
    /// At or above this SoC voltage, probabilities are multiplied by
    /// `vsoc_nominal_suppression`.
    pub vsoc_suppression_threshold: Volts,
    pub vsoc_nominal_suppression: f64,
    pub bypass_windows: Vec<BypassWindow>,
    /// Used when the campaign does not supply its own seed.
    #[serde(default)]
    pub seed: u64,
}

impl FaultModel {
    /// A model that reproduces the qualitative findings of a full-chip scan on
    /// a 22 x 9 mm die: no effect at nominal SoC voltage, loop and SRAM
    /// hot spots in different places at 0.59 V, and the four key-verification
    /// delays with their relative success rates.
    pub fn bench_default() -> FaultModel {
        let blob = |x, y, sigma, p_max, effect| FaultBlob {
            center: DiePoint::new(x, y),
            sigma,
            p_max,
            effect,
        };
        FaultModel {
            schema_version: FAULT_MODEL_SCHEMA,
            blobs: vec![
                blob(6.0, 3.0, 0.8, 0.25, FaultEffect::LoopFault),
                blob(14.0, 6.5, 0.6, 0.12, FaultEffect::LoopFault),
                blob(9.0, 2.0, 0.7, 0.20, FaultEffect::SramFlip),
                blob(6.0, 3.0, 0.8, 0.2206, FaultEffect::ArkBypass),
                blob(11.0, 5.0, 1.5, 0.03, FaultEffect::Crash),
            ],
            voltage_knee: 400,
            vsoc_suppression_threshold: Volts(0.60),
            vsoc_nominal_suppression: 0.0,
            bypass_windows: vec![
                BypassWindow {
                    center: 128,
                    half_width: 4,
                    weight: 0.0158 / 0.2206,
                },
                BypassWindow {
                    center: 2364,
                    half_width: 4,
                    weight: 1.0,
                },
                BypassWindow {
                    center: 2384,
                    half_width: 4,
                    weight: 0.0352 / 0.2206,
                },
                BypassWindow {
                    center: 2391,
                    half_width: 2,
                    weight: 0.0068 / 0.2206,
                },
            ],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != FAULT_MODEL_SCHEMA {
            return Err(Error::validation(format!(
                "unsupported fault model schema {} (expected {FAULT_MODEL_SCHEMA})",
                self.schema_version
            )));
        }
        for b in &self.blobs {
            if !(b.sigma.is_finite() && b.sigma > 0.0) {
                return Err(Error::validation("blob sigma must be positive"));
            }
            if !(0.0..=1.0).contains(&b.p_max) {
                return Err(Error::validation("blob p_max must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.vsoc_nominal_suppression) {
            return Err(Error::validation("suppression multiplier must lie in [0, 1]"));
        }
        for w in &self.bypass_windows {
            if !(0.0..=1.0).contains(&w.weight) {
                return Err(Error::validation("bypass window weight must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FaultModel> {
        let text = std::fs::read_to_string(path)?;
        let model: FaultModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn vsoc_factor(&self, v_soc: Volts) -> f64 {
        if v_soc >= self.vsoc_suppression_threshold {
            self.vsoc_nominal_suppression
        } else {
            1.0
        }
    }

    fn window_weight(&self, cycles: u32) -> f64 {
        self.bypass_windows
            .iter()
            .find(|w| w.contains(cycles))
            .map_or(0.0, |w| w.weight)
    }

    /// Per-blob effect probabilities for one pulse, highest first.
    pub fn effect_probabilities(
        &self,
        at: &DiePoint,
        pulse: &PulseConfig,
        v_soc: Volts,
        cycles: u32,
        payload: &PayloadKind,
    ) -> Vec<(FaultEffect, f64)> {
        if pulse.voltage < self.voltage_knee {
            return Vec::new();
        }
        let gate = self.vsoc_factor(v_soc);
        let mut out: Vec<(FaultEffect, f64)> = self
            .blobs
            .iter()
            .filter(|b| b.effect.affects(payload))
            .map(|b| {
                let mut p = b.susceptibility(at) * gate;
                if b.effect == FaultEffect::ArkBypass {
                    p *= self.window_weight(cycles);
                }
                (b.effect, p.clamp(0.0, 1.0))
            })
            .filter(|(_, p)| *p > 0.0)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

/// Timing and behaviour of the simulated target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutConfig {
    /// Below this SoC voltage the co-processor does not boot.
    pub boot_threshold: Volts,
    /// From power-good to the first SPI flash read.
    pub boot_latency_ms: u64,
    /// Key verification duration after the SPI event.
    pub verification_us: f64,
    pub payload_runtime_ms: u64,
    /// The flash carries a replaced root key, so an unfaulted verification halts.
    pub ark_key_modified: bool,
}

impl Default for DutConfig {
    fn default() -> Self {
        DutConfig {
            boot_threshold: Volts(0.56),
            boot_latency_ms: 1500,
            verification_us: 53.0,
            payload_runtime_ms: 250,
            ark_key_modified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DutState {
    Off,
    Booting,
    RunningPayload,
    Halted(AttemptOutcome),
}

/// The simulated target's state machine. Time is passed in by the caller.
#[derive(Debug, Clone)]
pub struct SimDut {
    model: FaultModel,
    config: DutConfig,
    payload: PayloadKind,
    state: DutState,
    v_soc: Option<Volts>,
    spi_at: Option<Duration>,
    effect: Option<FaultEffect>,
    boots: u64,
}

impl SimDut {
    pub fn new(model: FaultModel, config: DutConfig, payload: PayloadKind) -> Self {
        SimDut {
            model,
            config,
            payload,
            state: DutState::Off,
            v_soc: None,
            spi_at: None,
            effect: None,
            boots: 0,
        }
    }

    pub fn state(&self) -> &DutState {
        &self.state
    }

    pub fn model(&self) -> &FaultModel {
        &self.model
    }

    pub fn config(&self) -> &DutConfig {
        &self.config
    }

    pub fn payload(&self) -> PayloadKind {
        self.payload
    }

    /// Selects the flash image; takes effect at the next boot.
    pub fn set_payload(&mut self, payload: PayloadKind) {
        self.payload = payload;
    }

    pub fn set_model(&mut self, model: FaultModel) {
        self.model = model;
    }

    /// Number of boots started; increments on every power-on.
    pub fn boot_count(&self) -> u64 {
        self.boots
    }

    /// SoC voltage latched at the last boot.
    pub fn v_soc(&self) -> Option<Volts> {
        self.v_soc
    }

    /// Power-good. Below the boot threshold the target halts without ever
    /// touching the SPI bus.
    pub fn boot(&mut self, v_soc: Volts, now: Duration) -> Result<()> {
        if self.state != DutState::Off {
            return Err(Error::State {
                device: "dut",
                op: "boot",
                state: format!("{:?}", self.state),
            });
        }
        self.boots += 1;
        self.v_soc = Some(v_soc);
        self.effect = None;
        if v_soc < self.config.boot_threshold {
            self.state = DutState::Halted(AttemptOutcome::BootFailure);
            self.spi_at = None;
        } else {
            self.state = DutState::Booting;
            self.spi_at = Some(now + Duration::from_millis(self.config.boot_latency_ms));
        }
        Ok(())
    }

    /// The regulator changed the SoC rail while the target is powered.
    pub fn set_v_soc(&mut self, v_soc: Volts) {
        if self.state != DutState::Off {
            self.v_soc = Some(v_soc);
        }
    }

    /// Time of the pending SPI trigger event, if the target is booting.
    pub fn pending_spi_event(&self) -> Option<Duration> {
        match self.state {
            DutState::Booting => self.spi_at,
            _ => None,
        }
    }

    /// Consumes the SPI event if it happens at or before `until`.
    pub fn take_spi_event(&mut self, until: Duration) -> Option<Duration> {
        let at = self.pending_spi_event().filter(|at| *at <= until)?;
        self.state = DutState::RunningPayload;
        self.spi_at = None;
        Some(at)
    }

    pub fn power_off(&mut self) {
        self.state = DutState::Off;
        self.spi_at = None;
        self.effect = None;
    }

    /// A pulse hits the die at `at`, `cycles` wait cycles after the SPI event.
    /// At most one effect is applied: blobs are tried in order of decreasing
    /// probability and the first successful draw wins.
    pub fn apply_pulse<R: Rng + ?Sized>(
        &mut self,
        at: &DiePoint,
        pulse: &PulseConfig,
        cycles: u32,
        rng: &mut R,
    ) -> Option<FaultEffect> {
        if self.state != DutState::RunningPayload {
            return None;
        }
        let v_soc = self.v_soc.unwrap_or(Volts(0.0));
        let probs = self
            .model
            .effect_probabilities(at, pulse, v_soc, cycles, &self.payload);
        for (effect, p) in probs {
            if rng.random::<f64>() < p {
                self.land(effect);
                return Some(effect);
            }
        }
        None
    }

    /// Test hook: applies `effect` as if a pulse had caused it.
    pub fn force_effect(&mut self, effect: FaultEffect) {
        self.land(effect);
    }

    fn land(&mut self, effect: FaultEffect) {
        if effect == FaultEffect::Crash {
            self.state = DutState::Halted(AttemptOutcome::Crash);
        }
        self.effect = Some(effect);
    }

    /// Lets the payload finish and returns what it prints on the UART, or
    /// `None` if the target is not running (crashed, halted or off).
    pub fn run_payload_to_completion<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<String> {
        if self.state != DutState::RunningPayload {
            return None;
        }
        let effect = self.effect.take();
        let (text, outcome) = match self.payload {
            PayloadKind::CounterLoop { iterations } => {
                let counter = if effect == Some(FaultEffect::LoopFault) {
                    let skipped = rng.random_range(1..=iterations.min(3));
                    iterations - skipped
                } else {
                    iterations
                };
                let outcome = if counter == iterations {
                    AttemptOutcome::NoEffect
                } else {
                    AttemptOutcome::PayloadFault
                };
                (format!("COUNTER {counter} EXPECTED {iterations}"), outcome)
            }
            PayloadKind::SramPattern { word, n } => {
                if effect == Some(FaultEffect::SramFlip) {
                    let index = rng.random_range(0..n);
                    let read = word ^ (1u32 << rng.random_range(0..32));
                    (
                        format!(
                            "SRAM FAULTS 1\nWORD {index} EXPECTED 0x{word:08X} READ 0x{read:08X}"
                        ),
                        AttemptOutcome::PayloadFault,
                    )
                } else {
                    ("SRAM FAULTS 0".to_string(), AttemptOutcome::NoEffect)
                }
            }
            PayloadKind::ArkVerify => {
                if effect == Some(FaultEffect::ArkBypass) {
                    ("OFFCHIP BL EXEC".to_string(), AttemptOutcome::BypassSuccess)
                } else if self.config.ark_key_modified {
                    ("ARK FAIL HALT".to_string(), AttemptOutcome::NoEffect)
                } else {
                    ("ARK OK".to_string(), AttemptOutcome::NoEffect)
                }
            }
        };
        self.state = DutState::Halted(outcome);
        Some(text)
    }
}

/// Maps payload output to an outcome. Anything unrecognised counts as a crash.
pub fn classify_response(output: &str, payload: &PayloadKind) -> AttemptOutcome {
    let output = output.trim();
    if output.lines().any(|l| l.trim() == "OFFCHIP BL EXEC") {
        return AttemptOutcome::BypassSuccess;
    }
    let first = output.lines().next().unwrap_or("").trim();
    let words: Vec<&str> = first.split_whitespace().collect();
    match payload {
        PayloadKind::CounterLoop { .. } => match words.as_slice() {
            ["COUNTER", c, "EXPECTED", e] => match (c.parse::<u64>(), e.parse::<u64>()) {
                (Ok(c), Ok(e)) if c == e => AttemptOutcome::NoEffect,
                (Ok(_), Ok(_)) => AttemptOutcome::PayloadFault,
                _ => AttemptOutcome::Crash,
            },
            _ => AttemptOutcome::Crash,
        },
        PayloadKind::SramPattern { .. } => match words.as_slice() {
            ["SRAM", "FAULTS", k] => match k.parse::<u64>() {
                Ok(0) => AttemptOutcome::NoEffect,
                Ok(_) => AttemptOutcome::PayloadFault,
                Err(_) => AttemptOutcome::Crash,
            },
            _ => AttemptOutcome::Crash,
        },
        PayloadKind::ArkVerify => match first {
            "ARK OK" | "ARK FAIL HALT" => AttemptOutcome::NoEffect,
            _ => AttemptOutcome::Crash,
        },
    }
}

/// Outcome when the target printed nothing before the deadline.
pub fn classify_silence(powered: bool, spi_seen: bool) -> AttemptOutcome {
    match (powered, spi_seen) {
        (false, _) => AttemptOutcome::Timeout,
        (true, false) => AttemptOutcome::BootFailure,
        (true, true) => AttemptOutcome::Crash,
    }
}

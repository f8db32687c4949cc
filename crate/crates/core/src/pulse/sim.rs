use std::time::Duration;

use super::state::{transition, PulseEvent, PulseGenState};
use super::{MAX_VOLTAGE, MAX_WIDTH_NS, MIN_WIDTH_NS};
use crate::clock::{Clock, VirtualClock};

/// In-process pulse generator speaking the `KEY=VALUE` protocol.
#[derive(Debug, Clone)]
pub struct ShouterSim {
    state: PulseGenState,
    voltage: u32,
    width_ns: u32,
    charge_latency: Duration,
    charge_started: Option<Duration>,
    pulses: u64,
}

impl ShouterSim {
    pub fn new(charge_latency: Duration) -> Self {
        ShouterSim {
            state: PulseGenState::Disarmed,
            voltage: MAX_VOLTAGE,
            width_ns: 80,
            charge_latency,
            charge_started: None,
            pulses: 0,
        }
    }

    pub fn state(&self) -> &PulseGenState {
        &self.state
    }

    /// `(voltage, width_ns)` currently programmed.
    pub fn settings(&self) -> (u32, u32) {
        (self.voltage, self.width_ns)
    }

    pub fn pulses_fired(&self) -> u64 {
        self.pulses
    }

    /// Completes charging once the latency has elapsed.
    pub fn tick(&mut self, clock: &VirtualClock) {
        if let (PulseGenState::Charging, Some(start)) = (&self.state, self.charge_started) {
            if clock.elapsed() >= start + self.charge_latency {
                self.state = PulseGenState::Ready;
                self.charge_started = None;
            }
        }
    }

    /// Forces the device into `Faulted`, as an over-temperature trip would.
    pub fn inject_fault(&mut self, reason: &str) {
        self.state = PulseGenState::Faulted(reason.to_string());
    }

    /// External trigger input. Fires only when Ready; returns the pulse settings.
    pub fn hardware_trigger(&mut self, clock: &VirtualClock) -> Option<(u32, u32)> {
        self.tick(clock);
        match transition(&self.state, PulseEvent::Fire) {
            Ok(next) => {
                self.state = next;
                self.pulses += 1;
                Some((self.voltage, self.width_ns))
            }
            Err(_) => None,
        }
    }

    fn apply(&mut self, event: PulseEvent, clock: &VirtualClock) -> String {
        match transition(&self.state, event) {
            Ok(next) => {
                if next == PulseGenState::Charging {
                    self.charge_started = Some(clock.elapsed());
                }
                if event == PulseEvent::Fire {
                    self.pulses += 1;
                }
                self.state = next;
                "OK".into()
            }
            Err(_) => "ERR STATE".into(),
        }
    }

    fn set(&mut self, key: &str, value: &str) -> String {
        if !self.state.accepts_config() {
            return "ERR STATE".into();
        }
        let Ok(v) = value.parse::<u32>() else {
            return "ERR SYNTAX".into();
        };
        match key {
            "VOLT" if (1..=MAX_VOLTAGE).contains(&v) => self.voltage = v,
            "WIDTH" if (MIN_WIDTH_NS..=MAX_WIDTH_NS).contains(&v) => self.width_ns = v,
            "VOLT" | "WIDTH" => return "ERR RANGE".into(),
            _ => return "ERR SYNTAX".into(),
        }
        "OK".into()
    }

    pub fn handle(&mut self, line: &str, clock: &VirtualClock) -> Vec<String> {
        self.tick(clock);
        let line = line.trim();
        let reply = match line {
            "ARM" => self.apply(PulseEvent::Arm, clock),
            "DISARM" => self.apply(PulseEvent::Disarm, clock),
            "CHARGE" => self.apply(PulseEvent::Charge, clock),
            "FIRE" => self.apply(PulseEvent::Fire, clock),
            "STATUS?" => format!("STATE={}", self.state.wire()),
            "VOLT?" => format!("VOLT={}", self.voltage),
            "WIDTH?" => format!("WIDTH={}", self.width_ns),
            _ => match line
                .strip_prefix("SET ")
                .and_then(|kv| kv.split_once('='))
            {
                Some((k, v)) => self.set(k.trim(), v.trim()),
                None => "ERR SYNTAX".into(),
            },
        };
        vec![reply]
    }
}

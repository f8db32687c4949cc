//! Trigger and power unit: SPI-event-triggered pulse delay, supply voltage
//! commands and PS_ON/PWR_SW sequencing.
//!
//! Serial protocol:
//!
//! ```text
//! TRIG DELAY=<n> WINDOW=<n>      -> OK
//! VSET SOC=<mV> | VSET CORE=<mV> -> OK | ERR RANGE
//! PWR ON | PWR OFF               -> OK
//! PWR?                           -> PS_ON=<0|1> PWR_SW=<0|1>
//! WAIT <ms>                      -> SPI T=<ns> DELAY=<n> | TIMEOUT
//! ```
//!
//! `WAIT` blocks until the next SPI trigger event (reporting the event time
//! and the sampled delay after which the trigger edge went out) or until the
//! given number of milliseconds has passed.

mod device;
mod sim;

pub use device::{SpiEvent, TriggerUnit};
pub use sim::{PowerEvent, TargetBoard, TeensySim, TeensyTiming};

use std::fmt;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TriggerPlan, Volts};

/// Lowest and highest setpoint accepted on either rail, volts.
pub const MIN_SETPOINT: f64 = 0.3;
pub const MAX_SETPOINT: f64 = 1.5;

/// Wait cycles per microsecond. Chosen so that 3000 cycles span the 53 us
/// key verification.
pub const DEFAULT_CYCLES_PER_US: f64 = 3000.0 / 53.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rail {
    Core,
    Soc,
}

impl Rail {
    fn wire(self) -> &'static str {
        match self {
            Rail::Core => "CORE",
            Rail::Soc => "SOC",
        }
    }
}

/// A supply setpoint request on one rail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Svi2Command {
    pub rail: Rail,
    pub setpoint: Volts,
}

impl Svi2Command {
    pub fn new(rail: Rail, setpoint: Volts) -> Result<Self> {
        let cmd = Svi2Command { rail, setpoint };
        cmd.validate()?;
        Ok(cmd)
    }

    pub fn soc(volts: f64) -> Result<Self> {
        Self::new(Rail::Soc, Volts(volts))
    }

    pub fn core(volts: f64) -> Result<Self> {
        Self::new(Rail::Core, Volts(volts))
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.setpoint.0;
        if !(MIN_SETPOINT..=MAX_SETPOINT).contains(&v) {
            return Err(Error::range("supply setpoint", v, MIN_SETPOINT, MAX_SETPOINT));
        }
        Ok(())
    }

    pub fn encode(&self) -> String {
        format!("VSET {}={}", self.rail.wire(), self.setpoint.millivolts())
    }
}

/// Encodes supply requests for the wire. The default text form is what the
/// trigger unit understands; a real regulator bridge can substitute its own.
pub trait SupplyEncoder: Send {
    fn encode(&self, cmd: &Svi2Command) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TextEncoder;

impl SupplyEncoder for TextEncoder {
    fn encode(&self, cmd: &Svi2Command) -> String {
        cmd.encode()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetPower {
    Off,
    On,
}

/// Power control lines. The target is on only when both are asserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PowerState {
    pub ps_on: bool,
    pub pwr_sw: bool,
}

impl PowerState {
    pub fn target(&self) -> TargetPower {
        if self.ps_on && self.pwr_sw {
            TargetPower::On
        } else {
            TargetPower::Off
        }
    }

    pub fn is_on(&self) -> bool {
        self.target() == TargetPower::On
    }

    pub fn parse(line: &str) -> Option<PowerState> {
        let mut ps_on = None;
        let mut pwr_sw = None;
        for kv in line.split_whitespace() {
            match kv.split_once('=')? {
                ("PS_ON", v) => ps_on = Some(flag(v)?),
                ("PWR_SW", v) => pwr_sw = Some(flag(v)?),
                _ => return None,
            }
        }
        Some(PowerState {
            ps_on: ps_on?,
            pwr_sw: pwr_sw?,
        })
    }
}

fn flag(v: &str) -> Option<bool> {
    match v {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PS_ON={} PWR_SW={}",
            u8::from(self.ps_on),
            u8::from(self.pwr_sw)
        )
    }
}

/// Draws an effective delay uniformly from the plan's window.
pub fn sample_delay<R: Rng + ?Sized>(plan: &TriggerPlan, rng: &mut R) -> u32 {
    let (lo, hi) = plan.bounds();
    rng.random_range(lo..=hi)
}

/// Converts wait cycles to time.
pub fn cycles_to_duration(cycles: u32, cycles_per_us: f64) -> Duration {
    Duration::from_secs_f64(f64::from(cycles) / cycles_per_us * 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn setpoint_bounds() {
        assert!(Svi2Command::soc(0.59).is_ok());
        assert!(Svi2Command::soc(0.55).is_ok());
        assert!(Svi2Command::soc(0.29).is_err());
        assert!(matches!(Svi2Command::core(1.51), Err(Error::Range { .. })));
        assert_eq!(Svi2Command::soc(0.59).unwrap().encode(), "VSET SOC=590");
        assert_eq!(TextEncoder.encode(&Svi2Command::core(1.1).unwrap()), "VSET CORE=1100");
    }

    #[test]
    fn power_state_wire() {
        let s = PowerState {
            ps_on: true,
            pwr_sw: false,
        };
        assert_eq!(s.to_string(), "PS_ON=1 PWR_SW=0");
        assert_eq!(PowerState::parse(&s.to_string()), Some(s));
        assert_eq!(s.target(), TargetPower::Off);
        assert_eq!(PowerState::parse("PS_ON=2 PWR_SW=0"), None);
        assert_eq!(PowerState::parse("PS_ON=1"), None);
    }

    #[test]
    fn delays_stay_in_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = TriggerPlan::new(2364, 4);
        for _ in 0..5000 {
            let d = sample_delay(&plan, &mut rng);
            assert!((2360..=2368).contains(&d));
        }
        assert_eq!(sample_delay(&TriggerPlan::new(0, 0), &mut rng), 0);
        assert!(sample_delay(&TriggerPlan::new(2, 5), &mut rng) <= 7);
    }

    #[test]
    fn delay_distribution_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let plan = TriggerPlan::new(2364, 4);
        let mut counts = [0u32; 9];
        let n = 10_000;
        for _ in 0..n {
            counts[(sample_delay(&plan, &mut rng) - 2360) as usize] += 1;
        }
        let expected = f64::from(n) / 9.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (f64::from(c) - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new(8.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 = {chi2}, p = {p}");
    }

    #[test]
    fn full_range_spans_verification() {
        let d = cycles_to_duration(3000, DEFAULT_CYCLES_PER_US);
        assert!((d.as_secs_f64() * 1e6 - 53.0).abs() < 1e-6);
    }
}

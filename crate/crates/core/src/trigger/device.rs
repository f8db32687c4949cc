use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{PowerState, Svi2Command, SupplyEncoder, TextEncoder};
use crate::campaign::{DeviceCommand, Interlock};
use crate::error::{Error, Result};
use crate::model::TriggerPlan;
use crate::transport::{transact, LineTransport};

const DEVICE: &str = "trigger";

/// An SPI trigger event and the delay after which the pulse was triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpiEvent {
    /// Event time on the trigger unit's clock, ns.
    pub t_ns: u64,
    pub delay: u32,
}

impl SpiEvent {
    fn parse(line: &str) -> Option<SpiEvent> {
        let rest = line.strip_prefix("SPI ")?;
        let mut t_ns = None;
        let mut delay = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=')? {
                ("T", v) => t_ns = v.parse().ok(),
                ("DELAY", v) => delay = v.parse().ok(),
                _ => return None,
            }
        }
        Some(SpiEvent {
            t_ns: t_ns?,
            delay: delay?,
        })
    }
}

/// Exclusive handle to the trigger and power unit.
pub struct TriggerUnit {
    link: Box<dyn LineTransport>,
    interlock: Interlock,
    encoder: Box<dyn SupplyEncoder>,
    plan: Option<TriggerPlan>,
    power: PowerState,
    timeout: Duration,
}

impl TriggerUnit {
    pub fn new(link: Box<dyn LineTransport>, interlock: Interlock) -> Self {
        TriggerUnit {
            link,
            interlock,
            encoder: Box::new(TextEncoder),
            plan: None,
            power: PowerState::default(),
            timeout: Duration::from_millis(500),
        }
    }

    pub fn with_encoder(mut self, encoder: Box<dyn SupplyEncoder>) -> Self {
        self.encoder = encoder;
        self
    }

    pub fn plan(&self) -> Option<TriggerPlan> {
        self.plan
    }

    /// Last known state of the power lines.
    pub fn power(&self) -> PowerState {
        self.power
    }

    fn query(&mut self, line: &str, timeout: Duration) -> Result<String> {
        let mut replies = transact(self.link.as_mut(), DEVICE, line, timeout, |_| true)?;
        Ok(replies.pop().unwrap_or_default())
    }

    fn command(&mut self, line: &str) -> Result<()> {
        let reply = self.query(line, self.timeout)?;
        if reply == "OK" {
            Ok(())
        } else {
            Err(Error::device(DEVICE, format!("{line}: {reply}")))
        }
    }

    pub fn configure_trigger(&mut self, plan: TriggerPlan) -> Result<()> {
        self.command(&format!(
            "TRIG DELAY={} WINDOW={}",
            plan.delay, plan.window
        ))?;
        self.plan = Some(plan);
        Ok(())
    }

    /// Sends a rail setpoint. While the target is off the unit latches it and
    /// applies it at the next power-on.
    pub fn set_supply(&mut self, cmd: Svi2Command) -> Result<()> {
        cmd.validate()?;
        let line = self.encoder.encode(&cmd);
        let reply = self.query(&line, self.timeout)?;
        match reply.as_str() {
            "OK" => Ok(()),
            "ERR RANGE" => Err(Error::range(
                "supply setpoint",
                cmd.setpoint.0,
                super::MIN_SETPOINT,
                super::MAX_SETPOINT,
            )),
            other => Err(Error::device(DEVICE, format!("{line}: {other}"))),
        }
    }

    /// Reads the power lines back from the unit.
    pub fn refresh_power(&mut self) -> Result<PowerState> {
        let reply = self.query("PWR?", self.timeout)?;
        self.power = PowerState::parse(&reply)
            .ok_or_else(|| Error::device(DEVICE, format!("bad power report {reply:?}")))?;
        Ok(self.power)
    }

    /// Asserts PS_ON, then PWR_SW.
    pub fn power_on(&mut self) -> Result<()> {
        self.interlock.note(DeviceCommand::PowerOn);
        self.command("PWR ON")?;
        self.power = PowerState {
            ps_on: true,
            pwr_sw: true,
        };
        Ok(())
    }

    /// Releases PS_ON. A no-op when the target is already off.
    pub fn power_off(&mut self) -> Result<()> {
        if !self.power.ps_on {
            return Ok(());
        }
        self.interlock.note(DeviceCommand::PowerOff);
        self.command("PWR OFF")?;
        self.power = PowerState::default();
        Ok(())
    }

    /// Blocks until the next SPI event (and its trigger edge) or the timeout.
    pub fn await_spi_event(&mut self, timeout: Duration) -> Result<Option<SpiEvent>> {
        if self.plan.is_none() {
            return Err(Error::State {
                device: DEVICE,
                op: "await an SPI event",
                state: "unconfigured".into(),
            });
        }
        let reply = self.query(
            &format!("WAIT {}", timeout.as_millis()),
            self.timeout + timeout,
        )?;
        if reply == "TIMEOUT" {
            return Ok(None);
        }
        SpiEvent::parse(&reply)
            .map(Some)
            .ok_or_else(|| Error::device(DEVICE, format!("bad SPI report {reply:?}")))
    }
}

impl std::fmt::Debug for TriggerUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TriggerUnit")
            .field("plan", &self.plan)
            .field("power", &self.power)
            .finish_non_exhaustive()
    }
}

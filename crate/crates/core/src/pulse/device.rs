use std::time::Duration;

use super::state::PulseGenState;
use super::waveform::PulseWaveform;
use super::PulseConfig;
use crate::campaign::{DeviceCommand, Interlock};
use crate::clock::SharedClock;
use crate::error::{Error, Result};
use crate::transport::{transact, LineTransport};

const DEVICE: &str = "pulse";
const POLL: Duration = Duration::from_millis(5);

fn is_reply(l: &str) -> bool {
    l == "OK" || l.starts_with("ERR") || l.contains('=')
}

/// Exclusive handle to the pulse generator.
pub struct PulseGenerator {
    link: Box<dyn LineTransport>,
    interlock: Interlock,
    clock: SharedClock,
    config: Option<PulseConfig>,
    last_state: Option<PulseGenState>,
    timeout: Duration,
}

impl PulseGenerator {
    pub fn new(link: Box<dyn LineTransport>, interlock: Interlock, clock: SharedClock) -> Self {
        PulseGenerator {
            link,
            interlock,
            clock,
            config: None,
            last_state: None,
            timeout: Duration::from_millis(500),
        }
    }

    pub fn config(&self) -> Option<&PulseConfig> {
        self.config.as_ref()
    }

    /// State as of the last exchange with the device, without querying it.
    pub fn last_state(&self) -> Option<&PulseGenState> {
        self.last_state.as_ref()
    }

    fn query(&mut self, line: &str) -> Result<String> {
        let mut replies = transact(self.link.as_mut(), DEVICE, line, self.timeout, is_reply)?;
        Ok(replies.pop().unwrap_or_default())
    }

    fn command(&mut self, line: &str, op: &'static str) -> Result<()> {
        let reply = self.query(line)?;
        match reply.as_str() {
            "OK" => Ok(()),
            "ERR STATE" => Err(Error::State {
                device: DEVICE,
                op,
                state: self
                    .status()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|_| "unknown".into()),
            }),
            other => Err(Error::device(DEVICE, format!("{line}: {other}"))),
        }
    }

    fn read_value(&mut self, key: &str) -> Result<u32> {
        let reply = self.query(&format!("{key}?"))?;
        reply
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::device(DEVICE, format!("bad {key} readback {reply:?}")))
    }

    pub fn status(&mut self) -> Result<PulseGenState> {
        let reply = self.query("STATUS?")?;
        let state = reply
            .strip_prefix("STATE=")
            .and_then(PulseGenState::parse)
            .ok_or_else(|| Error::device(DEVICE, format!("bad status {reply:?}")))?;
        self.last_state = Some(state.clone());
        Ok(state)
    }

    /// Writes voltage and width and verifies them by readback.
    pub fn set_config(&mut self, cfg: PulseConfig) -> Result<()> {
        cfg.validate()?;
        let state = self.status()?;
        if !state.accepts_config() {
            return Err(Error::State {
                device: DEVICE,
                op: "configure",
                state: state.to_string(),
            });
        }
        self.command(&format!("SET VOLT={}", cfg.voltage), "configure")?;
        self.command(&format!("SET WIDTH={}", cfg.width_ns), "configure")?;
        let (v, w) = (self.read_value("VOLT")?, self.read_value("WIDTH")?);
        if v != cfg.voltage || w != cfg.width_ns {
            return Err(Error::device(
                DEVICE,
                format!(
                    "readback {v} V / {w} ns differs from {} V / {} ns",
                    cfg.voltage, cfg.width_ns
                ),
            ));
        }
        self.config = Some(cfg);
        Ok(())
    }

    /// Disarmed -> Armed. Motion is locked out before the command is sent.
    pub fn arm(&mut self) -> Result<()> {
        self.interlock.set_armed(true);
        self.interlock.note(DeviceCommand::Arm);
        let res = self.command("ARM", "arm");
        if res.is_ok() {
            self.last_state = Some(PulseGenState::Armed);
        } else if matches!(self.status(), Ok(PulseGenState::Disarmed)) {
            self.interlock.note(DeviceCommand::Disarm);
            self.interlock.set_armed(false);
        }
        res
    }

    /// Any state -> Disarmed. Motion is released only after the device confirms.
    pub fn disarm(&mut self) -> Result<()> {
        self.command("DISARM", "disarm")?;
        self.last_state = Some(PulseGenState::Disarmed);
        self.interlock.note(DeviceCommand::Disarm);
        self.interlock.set_armed(false);
        Ok(())
    }

    /// Armed -> Charging. See [`PulseGenerator::wait_ready`].
    pub fn charge(&mut self) -> Result<()> {
        self.command("CHARGE", "charge")?;
        self.last_state = Some(PulseGenState::Charging);
        self.interlock.note(DeviceCommand::Charge);
        Ok(())
    }

    /// Polls until the device reports Ready.
    pub fn wait_ready(&mut self, budget: Duration) -> Result<()> {
        let deadline = self.clock.elapsed() + budget;
        loop {
            match self.status()? {
                PulseGenState::Ready => return Ok(()),
                PulseGenState::Charging => {}
                other => {
                    return Err(Error::State {
                        device: DEVICE,
                        op: "wait for charge",
                        state: other.to_string(),
                    })
                }
            }
            if self.clock.elapsed() >= deadline {
                return Err(Error::Timeout {
                    waiting_for: "pulse generator to charge".into(),
                    timeout: budget,
                });
            }
            self.clock.sleep(POLL);
        }
    }

    /// Software fire, for bench checks. Campaigns fire through the hardware
    /// trigger instead.
    pub fn fire(&mut self) -> Result<PulseWaveform> {
        let cfg = self
            .config
            .ok_or_else(|| Error::NotFound("pulse configuration".into()))?;
        self.command("FIRE", "fire")?;
        self.last_state = Some(PulseGenState::Armed);
        self.interlock.note(DeviceCommand::Fire);
        Ok(PulseWaveform::simulate(&cfg))
    }
}

impl std::fmt::Debug for PulseGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PulseGenerator")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

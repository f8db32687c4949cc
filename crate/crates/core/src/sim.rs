//! A complete simulated bench: stage, pulse generator, trigger unit and
//! target, all advancing one shared virtual clock.
//!
//! Each simulator sits behind a [`LineTransport`], so the same drivers talk
//! to the bench and to real hardware.

use std::collections::VecDeque;
use std::io;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{stage_to_die, DieAnchor, OffsetCalibration};
use crate::clock::{Clock, VirtualClock};
use crate::dut::{DutConfig, DutState, FaultModel, SimDut};
use crate::model::{DiePoint, PayloadKind, StagePosition, Volts};
use crate::motion::{MarlinSim, MotionLimits};
use crate::pulse::{ProbeTip, PulseConfig, PulseGenState, ShouterSim, Winding};
use crate::transport::LineTransport;
use crate::trigger::{PowerEvent, PowerState, TargetBoard, TeensySim, TeensyTiming};

/// Everything needed to build a simulated bench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub fault_model: FaultModel,
    pub dut: DutConfig,
    pub limits: MotionLimits,
    pub teensy: TeensyTiming,
    pub charge_latency_ms: u64,
    /// Where the die really is.
    pub anchor: DieAnchor,
    /// The real camera-to-tip offset.
    pub probe_offset: OffsetCalibration,
    /// The tip physically mounted.
    pub probe: ProbeTip,
    pub payload: PayloadKind,
    /// Record every power line change (unbounded; meant for tests).
    pub power_trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            fault_model: FaultModel::bench_default(),
            dut: DutConfig::default(),
            limits: MotionLimits::default(),
            teensy: TeensyTiming::default(),
            charge_latency_ms: 50,
            anchor: DieAnchor {
                corner: StagePosition::new(40.0, 30.0, 12.1),
                width: 22.0,
                height: 9.0,
            },
            probe_offset: OffsetCalibration::from_offset(1.25, -0.75),
            probe: ProbeTip::new(4.0, Winding::Cw),
            payload: PayloadKind::counter_loop(),
            power_trace: false,
        }
    }
}

#[derive(Debug)]
struct Bench {
    marlin: MarlinSim,
    shouter: ShouterSim,
    teensy: TeensySim,
    dut: SimDut,
    rng: ChaCha8Rng,
    anchor: DieAnchor,
    truth: OffsetCalibration,
    probe: ProbeTip,
    console: VecDeque<String>,
    payload_started: Option<Duration>,
    pulses_landed: u64,
}

/// The target as seen from the trigger unit.
struct Board<'a> {
    dut: &'a mut SimDut,
    shouter: &'a mut ShouterSim,
    marlin: &'a MarlinSim,
    rng: &'a mut ChaCha8Rng,
    anchor: &'a DieAnchor,
    truth: &'a OffsetCalibration,
    probe: ProbeTip,
    clock: &'a VirtualClock,
    payload_started: &'a mut Option<Duration>,
    pulses_landed: &'a mut u64,
}

impl TargetBoard for Board<'_> {
    fn power_on(&mut self, v_soc: Volts, now: Duration) {
        self.dut.power_off();
        // Boot is only refused when the target is not off, which was just ensured.
        let _ = self.dut.boot(v_soc, now);
        *self.payload_started = None;
    }

    fn power_off(&mut self) {
        self.dut.power_off();
        *self.payload_started = None;
    }

    fn supply_changed(&mut self, v_soc: Volts) {
        self.dut.set_v_soc(v_soc);
    }

    fn next_spi_event(&mut self, until: Duration) -> Option<Duration> {
        let at = self.dut.take_spi_event(until)?;
        *self.payload_started = Some(at);
        Some(at)
    }

    fn trigger_edge(&mut self, delay: u32) {
        let Some((voltage, width_ns)) = self.shouter.hardware_trigger(self.clock) else {
            return;
        };
        *self.pulses_landed += 1;
        let at = stage_to_die(&self.marlin.position(), self.anchor, self.truth);
        let cfg = PulseConfig {
            voltage,
            width_ns,
            probe: self.probe,
        };
        self.dut.apply_pulse(&at, &cfg, delay, &mut *self.rng);
    }

    fn rng(&mut self) -> &mut dyn RngCore {
        &mut *self.rng
    }
}

impl Bench {
    fn handle_trigger(&mut self, line: &str, clock: &VirtualClock) -> Vec<String> {
        let Bench {
            marlin,
            shouter,
            teensy,
            dut,
            rng,
            anchor,
            truth,
            probe,
            payload_started,
            pulses_landed,
            ..
        } = self;
        let mut board = Board {
            dut,
            shouter,
            marlin,
            rng,
            anchor,
            truth,
            probe: *probe,
            clock,
            payload_started,
            pulses_landed,
        };
        teensy.handle(line, clock, &mut board)
    }

    fn console_line(&mut self, timeout: Duration, clock: &VirtualClock) -> Option<String> {
        if let Some(line) = self.console.pop_front() {
            return Some(line);
        }
        let now = clock.elapsed();
        if let (DutState::RunningPayload, Some(started)) = (self.dut.state(), self.payload_started) {
            let done = started + Duration::from_millis(self.dut.config().payload_runtime_ms);
            if done <= now + timeout {
                clock.advance_to(done);
                if let Some(text) = self.dut.run_payload_to_completion(&mut self.rng) {
                    self.console.extend(text.lines().map(str::to_string));
                    return self.console.pop_front();
                }
            }
        }
        clock.advance_to(now + timeout);
        None
    }
}

/// Handle to a simulated bench. Clones share the same devices.
#[derive(Debug, Clone)]
pub struct SimBench {
    inner: Arc<Mutex<Bench>>,
    clock: VirtualClock,
    options: Arc<SimOptions>,
}

impl SimBench {
    pub fn new(options: SimOptions, clock: VirtualClock) -> crate::Result<Self> {
        options.fault_model.validate()?;
        options.limits.validate()?;
        options.payload.validate()?;
        let mut teensy = TeensySim::new(options.teensy);
        teensy.set_keep_trace(options.power_trace);
        let bench = Bench {
            marlin: MarlinSim::new(options.limits),
            shouter: ShouterSim::new(Duration::from_millis(options.charge_latency_ms)),
            teensy,
            dut: SimDut::new(
                options.fault_model.clone(),
                options.dut.clone(),
                options.payload,
            ),
            rng: ChaCha8Rng::seed_from_u64(options.fault_model.seed),
            anchor: options.anchor,
            truth: options.probe_offset.clone(),
            probe: options.probe,
            console: VecDeque::new(),
            payload_started: None,
            pulses_landed: 0,
        };
        Ok(SimBench {
            inner: Arc::new(Mutex::new(bench)),
            clock,
            options: Arc::new(options),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Bench> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn options(&self) -> &SimOptions {
        &self.options
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    /// Restarts the random stream for one attempt, so any attempt can be
    /// replayed in isolation.
    pub fn reseed(&self, seed: u64, stream: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        self.lock().rng = rng;
    }

    /// Selects the flash image the target boots next.
    pub fn set_payload(&self, payload: PayloadKind) {
        self.lock().dut.set_payload(payload);
    }

    pub fn set_fault_model(&self, model: FaultModel) {
        self.lock().dut.set_model(model);
    }

    pub fn stage_position(&self) -> StagePosition {
        self.lock().marlin.position()
    }

    /// Die point currently under the probe tip.
    pub fn probe_die_point(&self) -> DiePoint {
        let b = self.lock();
        stage_to_die(&b.marlin.position(), &b.anchor, &b.truth)
    }

    pub fn pulse_state(&self) -> PulseGenState {
        self.lock().shouter.state().clone()
    }

    /// Voltage and width as stored inside the simulated generator.
    pub fn pulse_settings(&self) -> (u32, u32) {
        self.lock().shouter.settings()
    }

    pub fn inject_pulse_fault(&self, reason: &str) {
        self.lock().shouter.inject_fault(reason);
    }

    pub fn power(&self) -> PowerState {
        self.lock().teensy.power()
    }

    pub fn power_trace(&self) -> Vec<PowerEvent> {
        self.lock().teensy.power_trace().to_vec()
    }

    pub fn dut_state(&self) -> DutState {
        self.lock().dut.state().clone()
    }

    pub fn boot_count(&self) -> u64 {
        self.lock().dut.boot_count()
    }

    /// Pulses that reached the die through the hardware trigger.
    pub fn pulses_landed(&self) -> u64 {
        self.lock().pulses_landed
    }

    fn link<F>(&self, handler: F) -> Box<dyn LineTransport>
    where
        F: FnMut(&mut Bench, &str, &VirtualClock) -> Vec<String> + Send + 'static,
    {
        Box::new(SimLink {
            bench: self.inner.clone(),
            clock: self.clock.clone(),
            handler,
            pending: VecDeque::new(),
        })
    }

    pub fn stage_link(&self) -> Box<dyn LineTransport> {
        self.link(|b, line, clock| b.marlin.handle(line, clock))
    }

    pub fn pulse_link(&self) -> Box<dyn LineTransport> {
        self.link(|b, line, clock| b.shouter.handle(line, clock))
    }

    pub fn trigger_link(&self) -> Box<dyn LineTransport> {
        self.link(|b, line, clock| b.handle_trigger(line, clock))
    }

    pub fn console_link(&self) -> Box<dyn LineTransport> {
        Box::new(ConsoleLink {
            bench: self.inner.clone(),
            clock: self.clock.clone(),
        })
    }
}

/// Request/response link into one simulator. Waiting on an empty link
/// consumes the full timeout of virtual time.
struct SimLink<F> {
    bench: Arc<Mutex<Bench>>,
    clock: VirtualClock,
    handler: F,
    pending: VecDeque<String>,
}

impl<F> LineTransport for SimLink<F>
where
    F: FnMut(&mut Bench, &str, &VirtualClock) -> Vec<String> + Send,
{
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        let mut bench = self.bench.lock().unwrap_or_else(|e| e.into_inner());
        let replies = (self.handler)(&mut bench, line, &self.clock);
        self.pending.extend(replies);
        Ok(())
    }

    fn recv_line(&mut self, timeout: Duration) -> io::Result<Option<String>> {
        if let Some(line) = self.pending.pop_front() {
            return Ok(Some(line));
        }
        self.clock.advance(timeout);
        Ok(None)
    }
}

/// The target's UART. Output appears when the running payload finishes.
struct ConsoleLink {
    bench: Arc<Mutex<Bench>>,
    clock: VirtualClock,
}

impl LineTransport for ConsoleLink {
    fn send_line(&mut self, _line: &str) -> io::Result<()> {
        Ok(())
    }

    fn recv_line(&mut self, timeout: Duration) -> io::Result<Option<String>> {
        let mut bench = self.bench.lock().unwrap_or_else(|e| e.into_inner());
        Ok(bench.console_line(timeout, &self.clock))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::transact;

    fn ask(link: &mut Box<dyn LineTransport>, line: &str) -> Vec<String> {
        transact(link.as_mut(), "test", line, Duration::from_millis(10), |_| true).unwrap()
    }

    #[test]
    fn full_boot_through_links() {
        let clock = VirtualClock::new();
        let bench = SimBench::new(SimOptions::default(), clock.clone()).unwrap();
        let mut trig = bench.trigger_link();
        let mut console = bench.console_link();
        assert_eq!(ask(&mut trig, "TRIG DELAY=10 WINDOW=0"), ["OK"]);
        assert_eq!(ask(&mut trig, "PWR ON"), ["OK"]);
        let spi = ask(&mut trig, "WAIT 2000");
        assert_eq!(spi, ["SPI T=1600000000 DELAY=10"]);
        assert_eq!(bench.pulses_landed(), 0);
        assert_eq!(
            console.recv_line(Duration::from_millis(500)).unwrap().as_deref(),
            Some("COUNTER 1000 EXPECTED 1000")
        );
        assert!(clock.elapsed() >= Duration::from_millis(1850));
        assert_eq!(console.recv_line(Duration::from_millis(20)).unwrap(), None);
        assert_eq!(ask(&mut trig, "PWR OFF"), ["OK"]);
        assert_eq!(bench.dut_state(), DutState::Off);
    }

    #[test]
    fn armed_generator_fires_on_spi_event() {
        let clock = VirtualClock::new();
        let bench = SimBench::new(SimOptions::default(), clock.clone()).unwrap();
        let mut pulse = bench.pulse_link();
        let mut trig = bench.trigger_link();
        ask(&mut pulse, "ARM");
        ask(&mut pulse, "CHARGE");
        clock.advance(Duration::from_millis(60));
        ask(&mut trig, "PWR ON");
        ask(&mut trig, "WAIT 2000");
        assert_eq!(bench.pulses_landed(), 1);
        assert_eq!(bench.pulse_state(), PulseGenState::Armed);
    }

    #[test]
    fn reseed_is_reproducible() {
        let clock = VirtualClock::new();
        let bench = SimBench::new(SimOptions::default(), clock).unwrap();
        let mut trig = bench.trigger_link();
        ask(&mut trig, "TRIG DELAY=100 WINDOW=50");
        let mut delays = Vec::new();
        for _ in 0..2 {
            bench.reseed(9, 4);
            ask(&mut trig, "PWR ON");
            delays.push(ask(&mut trig, "WAIT 2000").remove(0));
            ask(&mut trig, "PWR OFF");
        }
        assert_eq!(
            delays[0].split_once("DELAY").unwrap().1,
            delays[1].split_once("DELAY").unwrap().1
        );
    }
}

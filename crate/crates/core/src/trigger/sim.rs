use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{cycles_to_duration, sample_delay, PowerState, DEFAULT_CYCLES_PER_US};
use crate::clock::{Clock, VirtualClock};
use crate::model::{SupplyVoltages, TriggerPlan, Volts};

/// Changes on the power control lines, in the order they happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerEvent {
    PsOn,
    PwrSw,
    PsOff,
}

/// What the trigger unit is wired to: the target's power input, its SPI bus
/// and the pulse generator's trigger input.
pub trait TargetBoard {
    fn power_on(&mut self, v_soc: Volts, now: Duration);
    fn power_off(&mut self);
    fn supply_changed(&mut self, v_soc: Volts);
    /// Consumes the next SPI event if it happens at or before `until`.
    fn next_spi_event(&mut self, until: Duration) -> Option<Duration>;
    /// A trigger edge `delay` cycles after the SPI event.
    fn trigger_edge(&mut self, delay: u32);
    fn rng(&mut self) -> &mut dyn RngCore;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeensyTiming {
    pub cycles_per_us: f64,
    /// Pause between asserting PS_ON and pressing PWR_SW.
    pub ps_on_to_pwr_sw_ms: u64,
    /// Time for the rails to collapse after PS_ON is released.
    pub power_off_settle_ms: u64,
}

impl Default for TeensyTiming {
    fn default() -> Self {
        TeensyTiming {
            cycles_per_us: DEFAULT_CYCLES_PER_US,
            ps_on_to_pwr_sw_ms: 100,
            power_off_settle_ms: 500,
        }
    }
}

/// In-process trigger unit.
#[derive(Debug, Clone)]
pub struct TeensySim {
    timing: TeensyTiming,
    plan: TriggerPlan,
    supply: SupplyVoltages,
    power: PowerState,
    trace: Vec<PowerEvent>,
    keep_trace: bool,
}

impl TeensySim {
    pub fn new(timing: TeensyTiming) -> Self {
        TeensySim {
            timing,
            plan: TriggerPlan::new(0, 0),
            supply: SupplyVoltages::nominal(),
            power: PowerState::default(),
            trace: Vec::new(),
            keep_trace: true,
        }
    }

    pub fn plan(&self) -> TriggerPlan {
        self.plan
    }

    pub fn supply(&self) -> SupplyVoltages {
        self.supply
    }

    pub fn power(&self) -> PowerState {
        self.power
    }

    pub fn power_trace(&self) -> &[PowerEvent] {
        &self.trace
    }

    /// Long campaigns switch the trace off to bound memory.
    pub fn set_keep_trace(&mut self, keep: bool) {
        self.keep_trace = keep;
        if !keep {
            self.trace.clear();
        }
    }

    fn event(&mut self, e: PowerEvent) {
        if self.keep_trace {
            self.trace.push(e);
        }
    }

    pub fn handle(
        &mut self,
        line: &str,
        clock: &VirtualClock,
        board: &mut dyn TargetBoard,
    ) -> Vec<String> {
        let line = line.trim();
        let reply = match line.split_once(' ') {
            Some(("TRIG", rest)) => self.trig(rest),
            Some(("VSET", rest)) => self.vset(rest, board),
            Some(("WAIT", ms)) => match ms.trim().parse::<u64>() {
                Ok(ms) => self.wait(Duration::from_millis(ms), clock, board),
                Err(_) => "ERR SYNTAX".into(),
            },
            Some(("PWR", "ON")) => {
                if !self.power.is_on() {
                    self.power.ps_on = true;
                    self.event(PowerEvent::PsOn);
                    clock.advance(Duration::from_millis(self.timing.ps_on_to_pwr_sw_ms));
                    self.power.pwr_sw = true;
                    self.event(PowerEvent::PwrSw);
                    board.power_on(self.supply.v_soc, clock.elapsed());
                }
                "OK".into()
            }
            Some(("PWR", "OFF")) => {
                if self.power.ps_on {
                    self.power = PowerState::default();
                    self.event(PowerEvent::PsOff);
                    board.power_off();
                    clock.advance(Duration::from_millis(self.timing.power_off_settle_ms));
                }
                "OK".into()
            }
            None if line == "PWR?" => self.power.to_string(),
            _ => "ERR SYNTAX".into(),
        };
        vec![reply]
    }

    fn trig(&mut self, rest: &str) -> String {
        let mut delay = None;
        let mut window = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=').map(|(k, v)| (k, v.parse::<u32>())) {
                Some(("DELAY", Ok(v))) => delay = Some(v),
                Some(("WINDOW", Ok(v))) => window = Some(v),
                _ => return "ERR SYNTAX".into(),
            }
        }
        match (delay, window) {
            (Some(d), Some(w)) => {
                self.plan = TriggerPlan::new(d, w);
                "OK".into()
            }
            _ => "ERR SYNTAX".into(),
        }
    }

    fn vset(&mut self, rest: &str, board: &mut dyn TargetBoard) -> String {
        let Some((rail, mv)) = rest.trim().split_once('=') else {
            return "ERR SYNTAX".into();
        };
        let Ok(mv) = mv.parse::<u32>() else {
            return "ERR SYNTAX".into();
        };
        if !(300..=1500).contains(&mv) {
            return "ERR RANGE".into();
        }
        let v = Volts::from_millivolts(mv);
        match rail {
            "SOC" => {
                self.supply.v_soc = v;
                if self.power.is_on() {
                    board.supply_changed(v);
                }
            }
            "CORE" => self.supply.v_core = v,
            _ => return "ERR SYNTAX".into(),
        }
        "OK".into()
    }

    fn wait(&mut self, budget: Duration, clock: &VirtualClock, board: &mut dyn TargetBoard) -> String {
        let deadline = clock.elapsed() + budget;
        if self.power.is_on() {
            if let Some(at) = board.next_spi_event(deadline) {
                clock.advance_to(at);
                let delay = sample_delay(&self.plan, board.rng());
                clock.advance(cycles_to_duration(delay, self.timing.cycles_per_us));
                board.trigger_edge(delay);
                return format!("SPI T={} DELAY={delay}", at.as_nanos());
            }
        }
        clock.advance_to(deadline);
        "TIMEOUT".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Boots 1.5 s after power-on if the SoC rail is at least 0.56 V.
    struct Board {
        spi_at: Option<Duration>,
        boots: u32,
        edges: Vec<u32>,
        v_soc: Option<Volts>,
        rng: ChaCha8Rng,
    }

    impl Board {
        fn new() -> Self {
            Board {
                spi_at: None,
                boots: 0,
                edges: Vec::new(),
                v_soc: None,
                rng: ChaCha8Rng::seed_from_u64(5),
            }
        }
    }

    impl TargetBoard for Board {
        fn power_on(&mut self, v_soc: Volts, now: Duration) {
            self.boots += 1;
            self.v_soc = Some(v_soc);
            self.spi_at = (v_soc.0 >= 0.56).then(|| now + Duration::from_millis(1500));
        }
        fn power_off(&mut self) {
            self.spi_at = None;
            self.v_soc = None;
        }
        fn supply_changed(&mut self, v_soc: Volts) {
            self.v_soc = Some(v_soc);
        }
        fn next_spi_event(&mut self, until: Duration) -> Option<Duration> {
            let at = self.spi_at.filter(|at| *at <= until)?;
            self.spi_at = None;
            Some(at)
        }
        fn trigger_edge(&mut self, delay: u32) {
            self.edges.push(delay);
        }
        fn rng(&mut self) -> &mut dyn RngCore {
            &mut self.rng
        }
    }

    fn send(t: &mut TeensySim, line: &str, clock: &VirtualClock, board: &mut Board) -> String {
        t.handle(line, clock, board).remove(0)
    }

    #[test]
    fn power_sequence_and_spi_event() {
        let clock = VirtualClock::new();
        let mut board = Board::new();
        let mut t = TeensySim::new(TeensyTiming::default());
        assert_eq!(send(&mut t, "TRIG DELAY=2364 WINDOW=4", &clock, &mut board), "OK");
        assert_eq!(send(&mut t, "PWR ON", &clock, &mut board), "OK");
        assert_eq!(t.power_trace(), &[PowerEvent::PsOn, PowerEvent::PwrSw]);
        assert_eq!(clock.elapsed(), Duration::from_millis(100));
        assert_eq!(send(&mut t, "PWR?", &clock, &mut board), "PS_ON=1 PWR_SW=1");
        let reply = send(&mut t, "WAIT 3000", &clock, &mut board);
        assert!(reply.starts_with("SPI T=1600000000 DELAY="), "{reply}");
        let d = board.edges[0];
        assert!((2360..=2368).contains(&d));
        assert_eq!(send(&mut t, "WAIT 10", &clock, &mut board), "TIMEOUT");
    }

    #[test]
    fn unpowered_wait_times_out() {
        let clock = VirtualClock::new();
        let mut board = Board::new();
        let mut t = TeensySim::new(TeensyTiming::default());
        assert_eq!(send(&mut t, "WAIT 2000", &clock, &mut board), "TIMEOUT");
        assert_eq!(clock.elapsed(), Duration::from_secs(2));
        assert!(board.edges.is_empty());
    }

    #[test]
    fn power_off_is_idempotent_and_stops_events() {
        let clock = VirtualClock::new();
        let mut board = Board::new();
        let mut t = TeensySim::new(TeensyTiming::default());
        assert_eq!(send(&mut t, "PWR OFF", &clock, &mut board), "OK");
        assert!(t.power_trace().is_empty());
        assert_eq!(clock.elapsed(), Duration::ZERO);
        send(&mut t, "PWR ON", &clock, &mut board);
        send(&mut t, "PWR OFF", &clock, &mut board);
        assert_eq!(send(&mut t, "WAIT 5000", &clock, &mut board), "TIMEOUT");
        send(&mut t, "PWR ON", &clock, &mut board);
        assert_eq!(board.boots, 2);
        assert_eq!(
            t.power_trace(),
            &[
                PowerEvent::PsOn,
                PowerEvent::PwrSw,
                PowerEvent::PsOff,
                PowerEvent::PsOn,
                PowerEvent::PwrSw
            ]
        );
    }

    #[test]
    fn supply_setpoints() {
        let clock = VirtualClock::new();
        let mut board = Board::new();
        let mut t = TeensySim::new(TeensyTiming::default());
        assert_eq!(send(&mut t, "VSET SOC=550", &clock, &mut board), "OK");
        send(&mut t, "PWR ON", &clock, &mut board);
        assert_eq!(board.v_soc, Some(Volts(0.55)));
        assert_eq!(send(&mut t, "WAIT 3000", &clock, &mut board), "TIMEOUT");
        assert_eq!(send(&mut t, "VSET SOC=590", &clock, &mut board), "OK");
        assert_eq!(board.v_soc, Some(Volts(0.59)));
        assert_eq!(send(&mut t, "VSET SOC=1600", &clock, &mut board), "ERR RANGE");
        assert_eq!(send(&mut t, "VSET GPU=900", &clock, &mut board), "ERR SYNTAX");
        assert_eq!(send(&mut t, "TRIG DELAY=x WINDOW=1", &clock, &mut board), "ERR SYNTAX");
    }
}

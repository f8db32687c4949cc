use std::time::Duration;

use crate::dut::{classify_response, classify_silence};
use crate::error::Result;
use crate::model::{AttemptOutcome, AttemptRecord, CycleStep, DiePoint, StagePosition, TriggerPlan};
use crate::rig::Rig;
use crate::trigger::SpiEvent;

use super::CampaignConfig;

/// One scheduled attack cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedAttempt {
    pub die_point: DiePoint,
    pub target: StagePosition,
    pub plan: TriggerPlan,
}

struct Observed {
    spi: Option<SpiEvent>,
    output: Option<String>,
    outcome: AttemptOutcome,
}

/// Runs one attack cycle:
/// disarm, move, arm, charge, power on, await the SPI event (the trigger
/// unit fires the pulse), collect output, classify, power off.
///
/// Device errors end the cycle early with a `Timeout` outcome; the target is
/// still powered off and the generator disarmed before returning.
pub fn run_cycle(
    rig: &mut Rig,
    attempt: &PlannedAttempt,
    cfg: &CampaignConfig,
    seq: u64,
) -> AttemptRecord {
    let start = rig.clock.elapsed();
    let timestamp = rig.clock.now_utc();
    rig.begin_attempt(cfg.seed, seq);
    let mut steps = Vec::with_capacity(CycleStep::CANONICAL.len());

    let observed = execute(rig, attempt, cfg, &mut steps);
    let (effective_delay, output, outcome) = match observed {
        Ok(o) => (o.spi.map(|e| e.delay), o.output.unwrap_or_default(), o.outcome),
        Err(e) => {
            tracing::warn!(seq, error = %e, "cycle aborted");
            // Make the rig safe; failures here show up in the next cycle.
            let _ = rig.pulse.disarm();
            (None, format!("error: {e}"), AttemptOutcome::Timeout)
        }
    };
    match rig.trigger.power_off() {
        Ok(()) => steps.push(CycleStep::PowerOff),
        Err(e) => tracing::warn!(seq, error = %e, "power off failed"),
    }

    AttemptRecord {
        seq,
        timestamp,
        duration_ns: (rig.clock.elapsed() - start).as_nanos() as u64,
        position: attempt.target,
        die_point: attempt.die_point,
        pulse: cfg.pulse,
        supply: cfg.supply,
        trigger: attempt.plan,
        effective_delay,
        payload: cfg.payload,
        outcome,
        output,
        steps,
    }
}

fn execute(
    rig: &mut Rig,
    attempt: &PlannedAttempt,
    cfg: &CampaignConfig,
    steps: &mut Vec<CycleStep>,
) -> Result<Observed> {
    let t = &cfg.timeouts;
    rig.pulse.disarm()?;
    steps.push(CycleStep::Disarm);
    rig.stage.move_to(attempt.target, cfg.feed_mm_s)?;
    steps.push(CycleStep::Move);
    rig.pulse.arm()?;
    steps.push(CycleStep::Arm);
    rig.pulse.charge()?;
    rig.pulse.wait_ready(Duration::from_millis(t.charge_ms))?;
    steps.push(CycleStep::Charge);
    rig.console.drain()?;
    rig.trigger.power_on()?;
    steps.push(CycleStep::PowerOn);
    let spi = rig.trigger.await_spi_event(Duration::from_millis(t.spi_ms))?;
    steps.push(CycleStep::AwaitSpi);
    let output = rig.console.collect(
        Duration::from_millis(t.output_ms),
        Duration::from_millis(t.quiet_ms),
    )?;
    steps.push(CycleStep::Collect);
    let outcome = match &output {
        Some(text) => classify_response(text, &cfg.payload),
        None => classify_silence(rig.trigger.power().is_on(), spi.is_some()),
    };
    steps.push(CycleStep::Classify);
    Ok(Observed {
        spi,
        output,
        outcome,
    })
}

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cycle::{run_cycle, PlannedAttempt};
use super::results::{attack_stats, sweep_groups, DelayGroup, ScanResult};
use super::{CampaignConfig, CampaignMode};
use crate::calibration::{die_to_stage_unchecked, DieAnchor, OffsetCalibration};
use crate::error::{Error, Result};
use crate::grid::generate_grid;
use crate::model::{AttemptRecord, DiePoint, GridSpec, PayloadKind, StagePosition, SuccessStats, TriggerPlan};
use crate::rig::Rig;
use crate::trigger::Svi2Command;

/// Receives every attempt as soon as it completes.
pub trait AttemptSink {
    fn record(&mut self, record: &AttemptRecord) -> Result<()>;
}

impl AttemptSink for Vec<AttemptRecord> {
    fn record(&mut self, record: &AttemptRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

impl<F: FnMut(&AttemptRecord) -> Result<()>> AttemptSink for F {
    fn record(&mut self, record: &AttemptRecord) -> Result<()> {
        self(record)
    }
}

/// Forwards each record to two sinks in turn.
pub struct Tee<'a>(pub &'a mut dyn AttemptSink, pub &'a mut dyn AttemptSink);

impl AttemptSink for Tee<'_> {
    fn record(&mut self, record: &AttemptRecord) -> Result<()> {
        self.0.record(record)?;
        self.1.record(record)
    }
}

/// Checked between cycles, never inside one.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    /// Attempts in the log after this run, including resumed ones.
    pub completed: u64,
    pub total: u64,
    pub cancelled: bool,
}

/// Expands a campaign into its attempt schedule. Attempt `i` always gets
/// sequence id `i`, which is what makes resuming exact.
pub fn plan_attempts(
    cfg: &CampaignConfig,
    anchor: &DieAnchor,
    cal: &OffsetCalibration,
) -> Result<Vec<PlannedAttempt>> {
    let at = |p: DiePoint, z: f64, plan: TriggerPlan| {
        let mut target = die_to_stage_unchecked(&p, anchor, cal);
        target.z = z;
        PlannedAttempt {
            die_point: p,
            target,
            plan,
        }
    };
    let mut out = Vec::new();
    match &cfg.mode {
        CampaignMode::Scan {
            grid,
            attempts_per_position,
        } => {
            for p in generate_grid(grid)? {
                let a = at(DiePoint::new(p.x, p.y), grid.z, cfg.trigger);
                out.extend(std::iter::repeat_n(a, *attempts_per_position as usize));
            }
        }
        CampaignMode::Fixed { at: p, z, attempts } => {
            out.extend(std::iter::repeat_n(at(*p, *z, cfg.trigger), *attempts as usize));
        }
        CampaignMode::Sweep {
            at: p,
            z,
            lo,
            hi,
            step,
            attempts_per_delay,
            ..
        } => {
            if lo <= hi {
                for d in (*lo..=*hi).step_by(*step as usize) {
                    let a = at(*p, *z, TriggerPlan::new(d, 0));
                    out.extend(std::iter::repeat_n(a, *attempts_per_delay as usize));
                }
            }
        }
    }
    Ok(out)
}

fn prepare(rig: &mut Rig, cfg: &CampaignConfig) -> Result<()> {
    rig.pulse.disarm()?;
    if !rig.stage.state().homed {
        rig.stage.home()?;
    }
    rig.pulse.set_config(cfg.pulse)?;
    rig.trigger.set_supply(Svi2Command::soc(cfg.supply.v_soc.0)?)?;
    rig.trigger.set_supply(Svi2Command::core(cfg.supply.v_core.0)?)?;
    rig.supply = cfg.supply;
    rig.trigger.refresh_power()?;
    rig.trigger.power_off()?;
    rig.select_payload(cfg.payload);
    Ok(())
}

/// Runs (or continues) a campaign. `done` holds the records already in the
/// campaign's log; they must be the schedule's prefix.
pub fn run_campaign(
    rig: &mut Rig,
    cfg: &CampaignConfig,
    done: &[AttemptRecord],
    sink: &mut dyn AttemptSink,
    cancel: &CancelToken,
) -> Result<RunReport> {
    cfg.validate()?;
    let anchor = rig
        .anchor
        .ok_or_else(|| Error::NotFound("die anchor".into()))?;
    let cal = rig
        .calibration
        .clone()
        .ok_or_else(|| Error::NotFound("probe offset calibration".into()))?;
    let schedule = plan_attempts(cfg, &anchor, &cal)?;
    let total = schedule.len() as u64;
    if done.len() > schedule.len() {
        return Err(Error::validation("log holds more attempts than the campaign"));
    }
    for (i, r) in done.iter().enumerate() {
        if r.seq != i as u64 || r.die_point != schedule[i].die_point {
            return Err(Error::validation(format!(
                "log entry {i} (seq {}) does not match this campaign",
                r.seq
            )));
        }
    }

    prepare(rig, cfg)?;
    if let Some(last) = done.last() {
        rig.stage.move_to(schedule[done.len() - 1].target, cfg.feed_mm_s)?;
        rig.clock.resume_at(last.finished_at());
    }

    let mut completed = done.len() as u64;
    let mut cancelled = false;
    let result = (|| -> Result<()> {
        for (i, attempt) in schedule.iter().enumerate().skip(done.len()) {
            if cancel.is_cancelled() {
                cancelled = true;
                break;
            }
            if rig.trigger.plan() != Some(attempt.plan) {
                rig.trigger.configure_trigger(attempt.plan)?;
            }
            let record = run_cycle(rig, attempt, cfg, i as u64);
            sink.record(&record)?;
            completed += 1;
        }
        Ok(())
    })();
    let _ = rig.pulse.disarm();
    let _ = rig.trigger.power_off();
    result?;
    Ok(RunReport {
        completed,
        total,
        cancelled,
    })
}

fn with_mode(cfg: &CampaignConfig, mode: CampaignMode) -> CampaignConfig {
    let mut c = cfg.clone();
    c.mode = mode;
    c
}

/// Scans `grid` (die coordinates) with `attempts` cycles per position.
pub fn run_scan(
    rig: &mut Rig,
    cfg: &CampaignConfig,
    grid: GridSpec,
    attempts: u64,
    sink: &mut dyn AttemptSink,
) -> Result<ScanResult> {
    let cfg = with_mode(
        cfg,
        CampaignMode::Scan {
            grid,
            attempts_per_position: attempts,
        },
    );
    let mut records = Vec::new();
    run_campaign(rig, &cfg, &[], &mut Tee(&mut records, sink), &CancelToken::new())?;
    let mut result = ScanResult::from_records(&records, cfg.exclude_errors);
    result.grid = Some(grid);
    Ok(result)
}

/// Tries every `step`-th delay in `lo..=hi` and groups the delays that
/// produced a bypass.
#[allow(clippy::too_many_arguments)]
pub fn run_delay_sweep(
    rig: &mut Rig,
    cfg: &CampaignConfig,
    at: DiePoint,
    (lo, hi): (u32, u32),
    step: u32,
    attempts_per_delay: u64,
    grouping_threshold: u32,
    sink: &mut dyn AttemptSink,
) -> Result<Vec<DelayGroup>> {
    if lo > hi {
        return Ok(Vec::new());
    }
    let z = rig.anchor.map_or(0.0, |a| a.corner.z);
    let cfg = with_mode(
        cfg,
        CampaignMode::Sweep {
            at,
            z,
            lo,
            hi,
            step,
            attempts_per_delay,
            grouping_threshold,
        },
    );
    let mut records = Vec::new();
    run_campaign(rig, &cfg, &[], &mut Tee(&mut records, sink), &CancelToken::new())?;
    Ok(sweep_groups(&records, grouping_threshold))
}

/// Repeats the attack at one position and trigger plan.
pub fn run_attack(
    rig: &mut Rig,
    cfg: &CampaignConfig,
    at: DiePoint,
    plan: TriggerPlan,
    attempts: u64,
    sink: &mut dyn AttemptSink,
) -> Result<SuccessStats> {
    if cfg.payload != PayloadKind::ArkVerify {
        return Err(Error::validation("attacks need the key verification payload"));
    }
    let z = rig.anchor.map_or(0.0, |a| a.corner.z);
    let mut cfg = with_mode(cfg, CampaignMode::Fixed { at, z, attempts });
    cfg.trigger = plan;
    let mut records = Vec::new();
    run_campaign(rig, &cfg, &[], &mut Tee(&mut records, sink), &CancelToken::new())?;
    Ok(attack_stats(&records, cfg.exclude_errors))
}

/// Rescans one coarse pitch around the coarse optimum at `pitch_fine` and
/// returns the fine optimum. Without any coarse success the coarse best
/// point is returned unchanged.
pub fn refine_position(
    rig: &mut Rig,
    cfg: &CampaignConfig,
    coarse: &ScanResult,
    pitch_fine: f64,
    attempts: u64,
    sink: &mut dyn AttemptSink,
) -> Result<DiePoint> {
    let grid = coarse
        .grid
        .ok_or_else(|| Error::validation("coarse result carries no grid"))?;
    if !(pitch_fine > 0.0 && pitch_fine < grid.pitch) {
        return Err(Error::validation(format!(
            "fine pitch {pitch_fine} must be positive and below the coarse pitch {}",
            grid.pitch
        )));
    }
    let Some(best) = coarse.argmax() else {
        return Ok(coarse
            .positions
            .first()
            .map_or(DiePoint::new(grid.origin.x, grid.origin.y), |p| p.die_point));
    };
    let c = best.die_point;
    let (x_max, y_max) = match rig.anchor {
        Some(a) => (a.width, a.height),
        None => (f64::INFINITY, f64::INFINITY),
    };
    let x0 = (c.x - grid.pitch).max(0.0);
    let y0 = (c.y - grid.pitch).max(0.0);
    let fine = GridSpec {
        origin: StagePosition::new(x0, y0, grid.z),
        width: (c.x + grid.pitch).min(x_max) - x0,
        height: (c.y + grid.pitch).min(y_max) - y0,
        pitch: pitch_fine,
        z: grid.z,
    };
    let result = run_scan(rig, cfg, fine, attempts, sink)?;
    Ok(result.argmax().map_or(c, |p| p.die_point))
}

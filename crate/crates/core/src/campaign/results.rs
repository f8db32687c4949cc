use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{
    AttemptOutcome, AttemptRecord, DiePoint, GridSpec, OutcomeHistogram, StagePosition,
    SuccessStats, TriggerPlan,
};

fn counts(outcome: AttemptOutcome, exclude_errors: bool) -> bool {
    !(exclude_errors && outcome.is_error())
}

/// Outcomes at one scan position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionResult {
    pub die_point: DiePoint,
    pub position: StagePosition,
    pub stats: SuccessStats,
    pub histogram: OutcomeHistogram,
}

/// Per-position results in scan order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScanResult {
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub positions: Vec<PositionResult>,
}

fn key(p: &DiePoint) -> (i64, i64) {
    // 0.1 um resolution is far below any scan pitch.
    ((p.x * 1e4).round() as i64, (p.y * 1e4).round() as i64)
}

impl ScanResult {
    pub fn from_records<'a, I>(records: I, exclude_errors: bool) -> ScanResult
    where
        I: IntoIterator<Item = &'a AttemptRecord>,
    {
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        let mut positions: Vec<PositionResult> = Vec::new();
        for r in records {
            let i = *index.entry(key(&r.die_point)).or_insert_with(|| {
                positions.push(PositionResult {
                    die_point: r.die_point,
                    position: r.position,
                    stats: SuccessStats::default(),
                    histogram: OutcomeHistogram::default(),
                });
                positions.len() - 1
            });
            let p = &mut positions[i];
            p.histogram.add(r.outcome);
            if counts(r.outcome, exclude_errors) {
                p.stats.record(r.outcome.is_success());
            }
        }
        ScanResult {
            grid: None,
            positions,
        }
    }

    pub fn total_attempts(&self) -> u64 {
        self.positions.iter().map(|p| p.histogram.total()).sum()
    }

    /// Positions with at least one fault of any kind (payload fault, crash or bypass).
    pub fn total_faults(&self) -> u64 {
        self.positions
            .iter()
            .flat_map(|p| p.histogram.iter())
            .filter(|(o, _)| o.is_fault())
            .map(|(_, n)| n)
            .sum()
    }

    /// Position with the most successes. Ties go to the lowest y, then x.
    /// `None` if nothing succeeded anywhere.
    pub fn argmax(&self) -> Option<&PositionResult> {
        self.positions
            .iter()
            .filter(|p| p.stats.successes > 0)
            .min_by(|a, b| {
                b.stats
                    .successes
                    .cmp(&a.stats.successes)
                    .then(a.die_point.y.total_cmp(&b.die_point.y))
                    .then(a.die_point.x.total_cmp(&b.die_point.x))
            })
    }
}

/// A run of adjacent delays that produced at least one bypass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayGroup {
    pub median: u32,
    pub first: u32,
    pub last: u32,
    /// Bypasses within the group.
    pub successes: u64,
}

/// Groups successful delays. `delays` holds one entry per successful delay
/// value with its success count. Consecutive delays at most `threshold`
/// apart are merged; each group reports the lower median of its delays.
pub fn group_delays(delays: &BTreeMap<u32, u64>, threshold: u32) -> Vec<DelayGroup> {
    let mut groups: Vec<Vec<(u32, u64)>> = Vec::new();
    for (&d, &n) in delays.iter().filter(|(_, &n)| n > 0) {
        match groups.last_mut() {
            Some(g) if d - g.last().map_or(d, |l| l.0) <= threshold => g.push((d, n)),
            _ => groups.push(vec![(d, n)]),
        }
    }
    groups
        .into_iter()
        .map(|g| DelayGroup {
            median: g[(g.len() - 1) / 2].0,
            first: g[0].0,
            last: g[g.len() - 1].0,
            successes: g.iter().map(|x| x.1).sum(),
        })
        .collect()
}

/// Delay groups from sweep records, keyed on the commanded delay.
pub fn sweep_groups<'a, I>(records: I, threshold: u32) -> Vec<DelayGroup>
where
    I: IntoIterator<Item = &'a AttemptRecord>,
{
    let mut hits: BTreeMap<u32, u64> = BTreeMap::new();
    for r in records {
        if r.outcome == AttemptOutcome::BypassSuccess {
            *hits.entry(r.trigger.delay).or_default() += 1;
        }
    }
    group_delays(&hits, threshold)
}

/// Success statistics per trigger plan, in order of first appearance.
pub fn stats_by_plan<'a, I>(records: I, exclude_errors: bool) -> Vec<(TriggerPlan, SuccessStats)>
where
    I: IntoIterator<Item = &'a AttemptRecord>,
{
    let mut out: Vec<(TriggerPlan, SuccessStats)> = Vec::new();
    for r in records {
        let i = match out.iter().position(|(p, _)| *p == r.trigger) {
            Some(i) => i,
            None => {
                out.push((r.trigger, SuccessStats::default()));
                out.len() - 1
            }
        };
        if counts(r.outcome, exclude_errors) {
            out[i].1.record(r.outcome.is_success());
        }
    }
    out
}

/// Overall success statistics.
pub fn attack_stats<'a, I>(records: I, exclude_errors: bool) -> SuccessStats
where
    I: IntoIterator<Item = &'a AttemptRecord>,
{
    let mut s = SuccessStats::default();
    for r in records {
        if counts(r.outcome, exclude_errors) {
            s.record(r.outcome.is_success());
        }
    }
    s
}

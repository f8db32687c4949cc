//! Attack cycles and the procedures built from them: grid scans, delay
//! sweeps, fixed-point attacks and position refinement.

mod config;
mod cycle;
mod interlock;
mod results;
mod runner;

pub use config::{
    CampaignConfig, CampaignMode, CycleTimeouts, DEFAULT_GROUPING_THRESHOLD, DEFAULT_SWEEP_ATTEMPTS,
};
pub use cycle::{run_cycle, PlannedAttempt};
pub use interlock::{find_motion_while_armed, DeviceCommand, Interlock, InterlockFlags};
pub use results::{
    attack_stats, group_delays, stats_by_plan, sweep_groups, DelayGroup, PositionResult,
    ScanResult,
};
pub use runner::{
    plan_attempts, refine_position, run_attack, run_campaign, run_delay_sweep, run_scan,
    AttemptSink, CancelToken, RunReport, Tee,
};

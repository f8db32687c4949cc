#![allow(dead_code)]

use emfi_core::campaign::{CampaignConfig, CampaignMode};
use emfi_core::dut::{BypassWindow, FaultBlob, FaultEffect, FaultModel, FAULT_MODEL_SCHEMA};
use emfi_core::sim::SimOptions;
use emfi_core::{
    DiePoint, GridSpec, PayloadKind, PulseConfig, Rig, StagePosition, SupplyVoltages, Volts,
};

/// Working height: the sim's die corner z.
pub const WORK_Z: f64 = 12.1;

/// Whole 22 x 9 mm die at `pitch`, in die coordinates.
pub fn die_grid(pitch: f64) -> GridSpec {
    GridSpec {
        origin: StagePosition::new(0.0, 0.0, WORK_Z),
        width: 22.0,
        height: 9.0,
        pitch,
        z: WORK_Z,
    }
}

pub fn blob(x: f64, y: f64, sigma: f64, p_max: f64, effect: FaultEffect) -> FaultBlob {
    FaultBlob {
        center: DiePoint::new(x, y),
        sigma,
        p_max,
        effect,
    }
}

/// Fault model with the given blobs, 400 V knee and a hard 0.60 V gate.
pub fn model(blobs: Vec<FaultBlob>, windows: Vec<BypassWindow>) -> FaultModel {
    FaultModel {
        schema_version: FAULT_MODEL_SCHEMA,
        blobs,
        voltage_knee: 400,
        vsoc_suppression_threshold: Volts(0.60),
        vsoc_nominal_suppression: 0.0,
        bypass_windows: windows,
        seed: 0,
    }
}

pub fn window(center: u32, half_width: u32) -> BypassWindow {
    BypassWindow {
        center,
        half_width,
        weight: 1.0,
    }
}

pub fn options(model: FaultModel) -> SimOptions {
    SimOptions {
        fault_model: model,
        ..SimOptions::default()
    }
}

pub fn rig(model: FaultModel) -> Rig {
    Rig::simulated(options(model)).expect("simulated rig")
}

pub fn supply(v_soc: f64) -> SupplyVoltages {
    SupplyVoltages {
        v_soc: Volts(v_soc),
        ..SupplyVoltages::nominal()
    }
}

pub fn scan_config(
    grid: GridSpec,
    attempts: u64,
    payload: PayloadKind,
    v_soc: f64,
    seed: u64,
) -> CampaignConfig {
    let mut cfg = CampaignConfig::new(
        CampaignMode::Scan {
            grid,
            attempts_per_position: attempts,
        },
        payload,
        PulseConfig::large_tip_default(),
    );
    cfg.supply = supply(v_soc);
    cfg.seed = seed;
    cfg
}

pub mod strategies {
    use chrono::{DateTime, Utc};
    use emfi_core::motion::GCodeCommand;
    use emfi_core::{
        AttemptOutcome, AttemptRecord, CycleStep, DiePoint, PayloadKind, ProbeTip, PulseConfig,
        StagePosition, SupplyVoltages, TriggerPlan, Volts, Winding,
    };
    use proptest::prelude::*;

    /// A coordinate with at most three decimals, as the wire format carries.
    pub fn wire_coord() -> impl Strategy<Value = f64> {
        (-999_999i64..=999_999).prop_map(|k| k as f64 / 1000.0)
    }

    pub fn wire_position() -> impl Strategy<Value = StagePosition> {
        (wire_coord(), wire_coord(), wire_coord()).prop_map(|(x, y, z)| StagePosition::new(x, y, z))
    }

    pub fn gcode() -> impl Strategy<Value = GCodeCommand> {
        prop_oneof![
            Just(GCodeCommand::Home),
            Just(GCodeCommand::ReportPosition),
            Just(GCodeCommand::FinishMoves),
            (wire_position(), 1u32..=600_000)
                .prop_map(|(target, feed)| GCodeCommand::MoveAbsolute { target, feed }),
            (wire_position(), 1u32..=600_000)
                .prop_map(|(delta, feed)| GCodeCommand::MoveRelative { delta, feed }),
            (any::<u8>(), any::<u8>())
                .prop_map(|(index, duty)| GCodeCommand::SetFanSpeed { index, duty }),
        ]
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            -1000.0..1000.0f64,
        ]
    }

    fn timestamp() -> impl Strategy<Value = DateTime<Utc>> {
        (0i64..4_000_000_000, 0u32..1_000_000_000)
            .prop_map(|(s, ns)| DateTime::from_timestamp(s, ns).expect("in range"))
    }

    pub fn payload() -> impl Strategy<Value = PayloadKind> {
        prop_oneof![
            (1u32..100_000).prop_map(|iterations| PayloadKind::CounterLoop { iterations }),
            (any::<u32>(), 1u32..4096).prop_map(|(word, n)| PayloadKind::SramPattern { word, n }),
            Just(PayloadKind::ArkVerify),
        ]
    }

    fn pulse() -> impl Strategy<Value = PulseConfig> {
        (1u32..=500, 15u32..=960, prop::bool::ANY, prop::bool::ANY).prop_map(|(v, w, big, cw)| {
            PulseConfig {
                voltage: v,
                width_ns: w,
                probe: ProbeTip::new(
                    if big { 4.0 } else { 1.0 },
                    if cw { Winding::Cw } else { Winding::Ccw },
                ),
            }
        })
    }

    pub fn outcome() -> impl Strategy<Value = AttemptOutcome> {
        prop::sample::select(AttemptOutcome::ALL.to_vec())
    }

    pub fn record() -> impl Strategy<Value = AttemptRecord> {
        (
            (any::<u64>(), timestamp(), any::<u64>()),
            (finite(), finite(), finite(), finite(), finite()),
            (pulse(), 0.3..1.5f64, 0.3..1.5f64),
            (any::<u32>(), any::<u32>(), prop::option::of(any::<u32>())),
            (payload(), outcome(), ".{0,40}"),
            prop::sample::subsequence(CycleStep::CANONICAL.to_vec(), 0..=9),
        )
            .prop_map(
                |(
                    (seq, timestamp, duration_ns),
                    (x, y, z, dx, dy),
                    (pulse, soc, core),
                    (delay, window, effective_delay),
                    (payload, outcome, output),
                    steps,
                )| AttemptRecord {
                    seq,
                    timestamp,
                    duration_ns,
                    position: StagePosition::new(x, y, z),
                    die_point: DiePoint::new(dx, dy),
                    pulse,
                    supply: SupplyVoltages {
                        v_soc: Volts(soc),
                        v_core: Volts(core),
                    },
                    trigger: TriggerPlan { delay, window },
                    effective_delay,
                    payload,
                    outcome,
                    output,
                    steps,
                },
            )
    }
}

mod common;

use std::time::Duration;

use common::{blob, model};
use emfi_core::dut::{
    classify_response, classify_silence, DutConfig, DutState, FaultEffect, FaultModel, SimDut,
};
use emfi_core::stats::confidence_interval;
use emfi_core::{AttemptOutcome, DiePoint, PayloadKind, PulseConfig, SuccessStats, Volts};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FAR: Duration = Duration::from_secs(60);

fn running(model: FaultModel, payload: PayloadKind, v_soc: f64) -> SimDut {
    let mut dut = SimDut::new(model, DutConfig::default(), payload);
    dut.boot(Volts(v_soc), Duration::ZERO).unwrap();
    dut.take_spi_event(FAR).expect("boots");
    dut
}

fn pulse_rate(
    model: &FaultModel,
    payload: PayloadKind,
    at: DiePoint,
    pulse: PulseConfig,
    cycles: u32,
    trials: u64,
) -> SuccessStats {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut stats = SuccessStats::default();
    for _ in 0..trials {
        let mut dut = running(model.clone(), payload, 0.59);
        dut.apply_pulse(&at, &pulse, cycles, &mut rng);
        let out = dut.run_payload_to_completion(&mut rng);
        let outcome = match out {
            Some(text) => classify_response(&text, &payload),
            None => AttemptOutcome::Crash,
        };
        stats.record(outcome.is_success());
    }
    stats
}

#[test]
fn blob_center_rate_matches_p_max() {
    let m = model(vec![blob(5.0, 5.0, 0.7, 0.3, FaultEffect::LoopFault)], vec![]);
    let s = pulse_rate(
        &m,
        PayloadKind::counter_loop(),
        DiePoint::new(5.0, 5.0),
        PulseConfig::large_tip_default(),
        0,
        10_000,
    );
    let (lo, hi) = confidence_interval(s, 0.99).unwrap();
    assert!(lo <= 0.3 && 0.3 <= hi, "{s} -> [{lo}, {hi}]");
}

#[test]
fn below_knee_never_faults() {
    let m = FaultModel::bench_default();
    let mut weak = PulseConfig::large_tip_default();
    weak.voltage = 399;
    let s = pulse_rate(&m, PayloadKind::counter_loop(), DiePoint::new(6.0, 3.0), weak, 0, 10_000);
    assert_eq!(s.successes, 0);
}

#[test]
fn outside_bypass_windows_never_bypasses() {
    let m = FaultModel::bench_default();
    let s = pulse_rate(
        &m,
        PayloadKind::ArkVerify,
        DiePoint::new(6.0, 3.0),
        PulseConfig::large_tip_default(),
        1000,
        10_000,
    );
    assert_eq!(s.successes, 0);
    let inside = pulse_rate(
        &m,
        PayloadKind::ArkVerify,
        DiePoint::new(6.0, 3.0),
        PulseConfig::large_tip_default(),
        2364,
        2000,
    );
    assert!(inside.successes > 0);
}

#[test]
fn payload_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut dut = running(FaultModel::bench_default(), PayloadKind::counter_loop(), 0.59);
    assert_eq!(
        dut.run_payload_to_completion(&mut rng).as_deref(),
        Some("COUNTER 1000 EXPECTED 1000")
    );

    let mut dut = running(FaultModel::bench_default(), PayloadKind::sram_pattern(), 0.59);
    dut.force_effect(FaultEffect::SramFlip);
    let out = dut.run_payload_to_completion(&mut rng).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "SRAM FAULTS 1");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("WORD ") && lines[1].contains("EXPECTED 0xA5A5A5A5"));
    assert_eq!(classify_response(&out, &PayloadKind::sram_pattern()), AttemptOutcome::PayloadFault);

    let mut dut = running(FaultModel::bench_default(), PayloadKind::ArkVerify, 0.59);
    assert_eq!(dut.run_payload_to_completion(&mut rng).as_deref(), Some("ARK FAIL HALT"));
    let mut dut = running(FaultModel::bench_default(), PayloadKind::ArkVerify, 0.59);
    dut.force_effect(FaultEffect::ArkBypass);
    assert_eq!(dut.run_payload_to_completion(&mut rng).as_deref(), Some("OFFCHIP BL EXEC"));

    let mut dut = running(FaultModel::bench_default(), PayloadKind::counter_loop(), 0.59);
    dut.force_effect(FaultEffect::Crash);
    assert_eq!(dut.run_payload_to_completion(&mut rng), None);
    assert_eq!(*dut.state(), DutState::Halted(AttemptOutcome::Crash));
}

#[test]
fn classification_table() {
    let counter = PayloadKind::counter_loop();
    assert_eq!(classify_response("COUNTER 1000 EXPECTED 1000", &counter), AttemptOutcome::NoEffect);
    assert_eq!(classify_response("COUNTER 998 EXPECTED 1000", &counter), AttemptOutcome::PayloadFault);
    assert_eq!(classify_response("OFFCHIP BL EXEC", &PayloadKind::ArkVerify), AttemptOutcome::BypassSuccess);
    assert_eq!(classify_response("ARK OK", &PayloadKind::ArkVerify), AttemptOutcome::NoEffect);
    assert_eq!(classify_response("\u{1}garbage", &counter), AttemptOutcome::Crash);
    assert_eq!(classify_response("SRAM FAULTS 0", &PayloadKind::sram_pattern()), AttemptOutcome::NoEffect);
    assert_eq!(classify_silence(false, false), AttemptOutcome::Timeout);
    assert_eq!(classify_silence(true, false), AttemptOutcome::BootFailure);
    assert_eq!(classify_silence(true, true), AttemptOutcome::Crash);
}

#[test]
fn bench_default_model_round_trips_through_json() {
    let m = FaultModel::bench_default();
    m.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    assert_eq!(FaultModel::load(&path).unwrap(), m);
    let mut bad = m.clone();
    bad.blobs[0].sigma = 0.0;
    std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(FaultModel::load(&path).is_err());
    let mut bad = m;
    bad.schema_version = 99;
    assert!(bad.validate().is_err());
}

#[derive(Debug, Clone)]
enum Op {
    Boot(u32),
    Off,
    Spi(u64),
    Pulse(u32),
    Finish,
    Soc(u32),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (500u32..700).prop_map(Op::Boot),
        Just(Op::Off),
        (0u64..4000).prop_map(Op::Spi),
        (0u32..3000).prop_map(Op::Pulse),
        Just(Op::Finish),
        (500u32..700).prop_map(Op::Soc),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn spi_only_while_booting(ops in prop::collection::vec(op(), 1..30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dut = SimDut::new(FaultModel::bench_default(), DutConfig::default(), PayloadKind::ArkVerify);
        let mut now = Duration::ZERO;
        for op in ops {
            let before = dut.state().clone();
            match op {
                Op::Boot(mv) => {
                    let res = dut.boot(Volts(f64::from(mv) / 1000.0), now);
                    prop_assert_eq!(res.is_ok(), before == DutState::Off);
                }
                Op::Off => {
                    dut.power_off();
                    prop_assert_eq!(dut.state(), &DutState::Off);
                }
                Op::Spi(ms) => {
                    now += Duration::from_millis(ms);
                    if let Some(at) = dut.take_spi_event(now) {
                        prop_assert_eq!(&before, &DutState::Booting);
                        prop_assert!(at <= now);
                        prop_assert_eq!(dut.state(), &DutState::RunningPayload);
                    }
                }
                Op::Pulse(cycles) => {
                    let effect = dut.apply_pulse(&DiePoint::new(6.0, 3.0), &PulseConfig::large_tip_default(), cycles, &mut rng);
                    if before != DutState::RunningPayload {
                        prop_assert_eq!(effect, None);
                    }
                }
                Op::Finish => {
                    let out = dut.run_payload_to_completion(&mut rng);
                    prop_assert_eq!(out.is_some(), before == DutState::RunningPayload);
                }
                Op::Soc(mv) => dut.set_v_soc(Volts(f64::from(mv) / 1000.0)),
            }
            if matches!(dut.state(), DutState::Off | DutState::Halted(_)) {
                prop_assert_eq!(dut.pending_spi_event(), None);
            }
        }
    }
}

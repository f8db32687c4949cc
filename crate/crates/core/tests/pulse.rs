use std::sync::Arc;
use std::time::Duration;

use emfi_core::campaign::{DeviceCommand, Interlock};
use emfi_core::clock::VirtualClock;
use emfi_core::pulse::{CoilModel, PulseGenState, PulseGenerator, PulseWaveform, REFERENCE_LOAD_OHMS};
use emfi_core::sim::{SimBench, SimOptions};
use emfi_core::{Error, ProbeTip, PulseConfig, Winding};
use proptest::prelude::*;

fn generator() -> (PulseGenerator, SimBench, Interlock) {
    let clock = VirtualClock::new();
    let bench = SimBench::new(SimOptions::default(), clock.clone()).unwrap();
    let interlock = Interlock::with_journal();
    let pulse = PulseGenerator::new(bench.pulse_link(), interlock.clone(), Arc::new(clock));
    (pulse, bench, interlock)
}

fn config(voltage: u32, width_ns: u32, diameter: f64) -> PulseConfig {
    PulseConfig {
        voltage,
        width_ns,
        probe: ProbeTip::new(diameter, Winding::Cw),
    }
}

#[test]
fn bench_fire_sequence() {
    let (mut pulse, bench, interlock) = generator();
    pulse.set_config(PulseConfig::large_tip_default()).unwrap();
    assert!(matches!(pulse.fire(), Err(Error::State { .. })));
    pulse.arm().unwrap();
    assert!(interlock.flags().pulse_armed);
    pulse.charge().unwrap();
    pulse.wait_ready(Duration::from_millis(1000)).unwrap();
    let wave = pulse.fire().unwrap();
    assert!(wave.peak_voltage > 450.0);
    // No recharge: the second fire is refused.
    assert!(matches!(pulse.fire(), Err(Error::State { .. })));
    assert_eq!(bench.pulse_state(), PulseGenState::Armed);
    pulse.disarm().unwrap();
    assert!(interlock.flags().motion_permitted);
    assert_eq!(
        interlock.journal(),
        [DeviceCommand::Arm, DeviceCommand::Charge, DeviceCommand::Fire, DeviceCommand::Disarm]
    );
}

#[test]
fn config_rejected_mid_charge() {
    let (mut pulse, _, _) = generator();
    pulse.arm().unwrap();
    pulse.set_config(PulseConfig::large_tip_default()).unwrap();
    pulse.charge().unwrap();
    assert!(matches!(
        pulse.set_config(PulseConfig::small_tip_default()),
        Err(Error::State { .. })
    ));
}

#[test]
fn charge_timeout_and_fault() {
    let (mut pulse, bench, interlock) = generator();
    pulse.arm().unwrap();
    pulse.charge().unwrap();
    assert!(matches!(
        pulse.wait_ready(Duration::from_millis(10)),
        Err(Error::Timeout { .. })
    ));
    bench.inject_pulse_fault("overtemp");
    assert!(matches!(
        pulse.wait_ready(Duration::from_millis(100)),
        Err(Error::State { .. })
    ));
    // A faulted generator is still treated as armed until it confirms a disarm.
    assert!(interlock.flags().pulse_armed);
    pulse.disarm().unwrap();
    assert!(!interlock.flags().pulse_armed);
}

#[test]
fn larger_tip_gives_wider_pulse_and_more_current() {
    let big = PulseWaveform::simulate(&config(500, 40, 4.0));
    let small = PulseWaveform::simulate(&config(500, 40, 1.0));
    assert!(big.pulse_width_ns > small.pulse_width_ns);
    assert!(big.peak_current > small.peak_current);
}

/// Composite Simpson rule over the coil model, independent of the sampled trace.
fn simpson_energy(cfg: &PulseConfig) -> f64 {
    let model = CoilModel::for_tip(&cfg.probe);
    let width = f64::from(cfg.width_ns);
    let volts = f64::from(cfg.voltage);
    let end = model.settle_ns(width);
    let n = 20_000usize;
    let h = end / n as f64;
    let f = |t: f64| (volts * model.unit_voltage(t, width)).powi(2);
    let mut sum = f(0.0) + f(end);
    for k in 1..n {
        sum += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0 / REFERENCE_LOAD_OHMS
}

#[test]
fn energy_matches_simpson_oracle() {
    for cfg in [config(500, 73, 4.0), config(500, 40, 1.0), config(120, 15, 4.0), config(300, 960, 1.0)] {
        let sampled = PulseWaveform::simulate(&cfg).energy_nj();
        let oracle = simpson_energy(&cfg);
        assert!(
            ((sampled - oracle) / oracle).abs() < 1e-3,
            "{cfg:?}: sampled {sampled} vs oracle {oracle}"
        );
    }
}

fn tip() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![1.0, 4.0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn energy_monotone_in_voltage(lo in 1u32..500, step in 1u32..100, width in 15u32..=960, d in tip()) {
        let hi = (lo + step).min(500);
        prop_assume!(hi > lo);
        let e_lo = simpson_energy(&config(lo, width, d));
        let e_hi = simpson_energy(&config(hi, width, d));
        prop_assert!(e_hi > e_lo);
        let s_lo = PulseWaveform::simulate(&config(lo, width, d)).energy_nj();
        let s_hi = PulseWaveform::simulate(&config(hi, width, d)).energy_nj();
        prop_assert!(s_hi > s_lo);
    }

    #[test]
    fn peak_within_ten_percent(voltage in 1u32..=500, width in 15u32..=960, d in tip()) {
        let cfg = config(voltage, width, d);
        let wave = PulseWaveform::simulate(&cfg);
        let v = f64::from(voltage);
        prop_assert!((wave.peak_voltage - v).abs() <= 0.1 * v, "peak {} for {v}", wave.peak_voltage);
        let first = wave.samples.first().unwrap().voltage;
        let last = wave.samples.last().unwrap().voltage;
        prop_assert!(first.abs() < 1e-9);
        prop_assert!(last.abs() < 0.01 * v, "trace ends at {last}");
    }

    #[test]
    fn readback_equals_write(voltage in 1u32..=500, width in 15u32..=960, d in tip()) {
        let (mut pulse, bench, _) = generator();
        let cfg = config(voltage, width, d);
        pulse.set_config(cfg).unwrap();
        prop_assert_eq!(pulse.config(), Some(&cfg));
        prop_assert_eq!(bench.pulse_settings(), (voltage, width));
    }
}

//! Simulated pulse waveform.
//!
//! The coil voltage is modelled as the response of an underdamped
//! second-order (series RLC) network to a rectangular drive of the configured
//! width. The falling edge discharges through a slower path than the rising
//! edge, which is what makes the larger tip's pulse wider than its command.

use serde::{Deserialize, Serialize};

use super::{PulseConfig, ProbeTip};

/// Second-order network parameters for one probe tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoilModel {
    /// Natural period of the charging edge, ns.
    pub rise_period_ns: f64,
    /// Natural period of the discharging edge, ns.
    pub fall_period_ns: f64,
    pub damping: f64,
    /// Effective capacitance, nF. Scales the current.
    pub capacitance_nf: f64,
}

impl CoilModel {
    pub fn for_tip(tip: &ProbeTip) -> CoilModel {
        if tip.diameter_mm >= 2.5 {
            CoilModel {
                rise_period_ns: 12.0,
                fall_period_ns: 20.0,
                damping: 0.7,
                capacitance_nf: 0.6,
            }
        } else {
            CoilModel {
                rise_period_ns: 8.0,
                fall_period_ns: 10.0,
                damping: 0.7,
                capacitance_nf: 0.25,
            }
        }
    }

    fn edge(period_ns: f64, damping: f64) -> Edge {
        let wn = 2.0 * std::f64::consts::PI / period_ns;
        let root = (1.0 - damping * damping).sqrt();
        Edge {
            wn,
            zeta: damping,
            wd: wn * root,
            root,
        }
    }

    /// Normalised coil voltage (1.0 = configured voltage) at `t` ns for a
    /// drive of `width` ns.
    pub fn unit_voltage(&self, t: f64, width: f64) -> f64 {
        let rise = Self::edge(self.rise_period_ns, self.damping);
        let fall = Self::edge(self.fall_period_ns, self.damping);
        let mut v = rise.step(t);
        if t > width {
            v -= fall.step(t - width);
        }
        v
    }

    /// d/dt of [`CoilModel::unit_voltage`], per ns.
    pub fn unit_slope(&self, t: f64, width: f64) -> f64 {
        let rise = Self::edge(self.rise_period_ns, self.damping);
        let fall = Self::edge(self.fall_period_ns, self.damping);
        let mut d = rise.slope(t);
        if t > width {
            d -= fall.slope(t - width);
        }
        d
    }

    /// Time after which the trace has settled to zero.
    pub fn settle_ns(&self, width: f64) -> f64 {
        let fall = Self::edge(self.fall_period_ns, self.damping);
        width + 14.0 / (fall.zeta * fall.wn)
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    wn: f64,
    zeta: f64,
    wd: f64,
    root: f64,
}

impl Edge {
    fn step(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let decay = (-self.zeta * self.wn * t).exp();
        1.0 - decay * ((self.wd * t).cos() + self.zeta / self.root * (self.wd * t).sin())
    }

    fn slope(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.wn / self.root * (-self.zeta * self.wn * t).exp() * (self.wd * t).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveSample {
    pub t_ns: f64,
    pub voltage: f64,
    pub current: f64,
}

/// Sampled trace plus the usual pulse metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseWaveform {
    pub samples: Vec<WaveSample>,
    pub peak_voltage: f64,
    pub peak_current: f64,
    /// 10 % to 90 % of peak on the leading edge, ns.
    pub rise_time_ns: f64,
    /// 90 % to 10 % of peak on the trailing edge, ns.
    pub fall_time_ns: f64,
    /// Full width at half maximum, ns.
    pub pulse_width_ns: f64,
}

/// Trace resolution.
pub const SAMPLE_NS: f64 = 0.25;

/// Load the generator output is referred to when computing energy, ohms.
pub const REFERENCE_LOAD_OHMS: f64 = 50.0;

impl PulseWaveform {
    pub fn simulate(cfg: &PulseConfig) -> PulseWaveform {
        let model = CoilModel::for_tip(&cfg.probe);
        let width = f64::from(cfg.width_ns);
        let volts = f64::from(cfg.voltage);
        let end = model.settle_ns(width);
        let n = (end / SAMPLE_NS).ceil() as usize + 1;
        // A short lead-in so the trace visibly starts at zero.
        let lead = 8;
        let samples: Vec<WaveSample> = (0..n + lead)
            .map(|k| {
                let t = (k as f64 - lead as f64) * SAMPLE_NS;
                WaveSample {
                    t_ns: t,
                    voltage: volts * model.unit_voltage(t, width),
                    current: model.capacitance_nf * volts * model.unit_slope(t, width),
                }
            })
            .collect();
        Self::from_samples(samples)
    }

    pub fn from_samples(samples: Vec<WaveSample>) -> PulseWaveform {
        let peak_voltage = samples.iter().map(|s| s.voltage).fold(0.0, f64::max);
        let peak_current = samples.iter().map(|s| s.current.abs()).fold(0.0, f64::max);
        let level = |f: f64| f * peak_voltage;
        let rise_10 = first_crossing(&samples, level(0.1));
        let rise_90 = first_crossing(&samples, level(0.9));
        let fall_90 = last_crossing(&samples, level(0.9));
        let fall_10 = last_crossing(&samples, level(0.1));
        let half_up = first_crossing(&samples, level(0.5));
        let half_down = last_crossing(&samples, level(0.5));
        PulseWaveform {
            peak_voltage,
            peak_current,
            rise_time_ns: rise_90 - rise_10,
            fall_time_ns: fall_10 - fall_90,
            pulse_width_ns: half_down - half_up,
            samples,
        }
    }

    /// Energy delivered into [`REFERENCE_LOAD_OHMS`], nJ (trapezoidal rule).
    pub fn energy_nj(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| {
                let dt = w[1].t_ns - w[0].t_ns;
                0.5 * dt * (w[0].voltage.powi(2) + w[1].voltage.powi(2))
            })
            .sum::<f64>()
            / REFERENCE_LOAD_OHMS
    }
}

fn interpolate(a: &WaveSample, b: &WaveSample, level: f64) -> f64 {
    let dv = b.voltage - a.voltage;
    if dv.abs() < f64::EPSILON {
        return a.t_ns;
    }
    a.t_ns + (level - a.voltage) / dv * (b.t_ns - a.t_ns)
}

fn first_crossing(s: &[WaveSample], level: f64) -> f64 {
    s.windows(2)
        .find(|w| w[0].voltage < level && w[1].voltage >= level)
        .map(|w| interpolate(&w[0], &w[1], level))
        .unwrap_or(0.0)
}

fn last_crossing(s: &[WaveSample], level: f64) -> f64 {
    s.windows(2)
        .rev()
        .find(|w| w[0].voltage >= level && w[1].voltage < level)
        .map(|w| interpolate(&w[0], &w[1], level))
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::Winding;

    fn cfg(voltage: u32, width: u32, dia: f64) -> PulseConfig {
        PulseConfig {
            voltage,
            width_ns: width,
            probe: ProbeTip {
                diameter_mm: dia,
                winding: Winding::Cw,
            },
        }
    }

    #[test]
    fn peak_near_configured_voltage() {
        for (v, w, d) in [(500, 73, 4.0), (500, 40, 1.0), (200, 15, 4.0), (50, 960, 1.0)] {
            let wf = PulseWaveform::simulate(&cfg(v, w, d));
            let v = f64::from(v);
            assert!(
                wf.peak_voltage >= 0.9 * v && wf.peak_voltage <= 1.1 * v,
                "{} vs {v}",
                wf.peak_voltage
            );
        }
    }

    #[test]
    fn trace_starts_and_ends_near_zero() {
        let wf = PulseWaveform::simulate(&cfg(500, 73, 4.0));
        assert_eq!(wf.samples[0].voltage, 0.0);
        let last = wf.samples.last().unwrap();
        assert!(last.voltage.abs() < 0.01 * 500.0, "{}", last.voltage);
        assert!(last.current.abs() < 1.0);
    }

    #[test]
    fn larger_tip_is_wider_and_stronger() {
        let small = PulseWaveform::simulate(&cfg(500, 60, 1.0));
        let large = PulseWaveform::simulate(&cfg(500, 60, 4.0));
        assert!(large.pulse_width_ns > small.pulse_width_ns);
        assert!(large.peak_current > small.peak_current);
        assert!(small.rise_time_ns > 0.0 && small.fall_time_ns > 0.0);
    }

    #[test]
    fn fwhm_tracks_command() {
        let wf = PulseWaveform::simulate(&cfg(500, 200, 1.0));
        assert!((wf.pulse_width_ns - 200.0).abs() < 5.0, "{}", wf.pulse_width_ns);
    }
}

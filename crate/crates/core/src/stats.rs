//! Success-rate statistics and campaign duration estimates.

use std::time::Duration;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::SuccessStats;

/// Positions of the default full-chip scan: a 22 mm x 9 mm SoC die at 1 mm
/// pitch with inclusive borders gives 23 x 10 lattice points.
pub const FULL_CHIP_SCAN_POSITIONS: u64 = 230;

/// Default attempts per scan position.
pub const DEFAULT_ATTEMPTS_PER_POSITION: u64 = 100;

/// `successes / attempts`.
pub fn success_rate(stats: SuccessStats) -> Result<f64> {
    if stats.attempts == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok(stats.successes as f64 / stats.attempts as f64)
}

/// Two-sided standard normal quantile for a confidence level, e.g. 1.96 for 0.95.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::range("confidence level", level, 0.0, 1.0));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Wilson score interval for a binomial proportion.
///
/// Stays inside `[0, 1]` and always contains the point estimate, including
/// at zero successes where the normal approximation collapses.
pub fn confidence_interval(stats: SuccessStats, level: f64) -> Result<(f64, f64)> {
    let p_hat = success_rate(stats)?;
    let z = normal_quantile(level)?;
    let n = stats.attempts as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p_hat + z2 / (2.0 * n)) / denom;
    let half = z * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt() / denom;

    let mut low = (center - half).clamp(0.0, 1.0);
    let mut high = (center + half).clamp(0.0, 1.0);
    if stats.successes == 0 {
        low = 0.0;
    }
    if stats.successes == stats.attempts {
        high = 1.0;
    }
    Ok((low.min(p_hat), high.max(p_hat)))
}

/// Wall time of a campaign: positions x attempts x cycle time.
pub fn estimate_campaign_duration(
    positions: u64,
    attempts_per_position: u64,
    cycle: Duration,
) -> Result<Duration> {
    if positions == 0 || attempts_per_position == 0 || cycle.is_zero() {
        return Err(Error::validation(
            "duration estimate needs positive positions, attempts and cycle time",
        ));
    }
    let cycles = positions
        .checked_mul(attempts_per_position)
        .ok_or_else(|| Error::validation("cycle count overflows"))?;
    Ok(Duration::from_secs_f64(cycle.as_secs_f64() * cycles as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(s: u64, n: u64) -> SuccessStats {
        SuccessStats::new(s, n).unwrap()
    }

    #[test]
    fn table_rates() {
        assert_eq!(success_rate(stats(2206, 10000)).unwrap(), 0.2206);
        assert_eq!(success_rate(stats(158, 10000)).unwrap(), 0.0158);
        assert_eq!(success_rate(stats(0, 100)).unwrap(), 0.0);
        assert!(matches!(
            success_rate(stats(0, 0)),
            Err(Error::UndefinedRate)
        ));
    }

    #[test]
    fn wilson_zero_successes() {
        let (lo, hi) = confidence_interval(stats(0, 100), 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
    }

    #[test]
    fn wilson_voltage_glitch_comparison() {
        let (lo, hi) = confidence_interval(stats(98, 20000), 0.95).unwrap();
        assert!(lo < 0.0049 && 0.0049 < hi);
    }

    #[test]
    fn wilson_rejects_bad_level() {
        assert!(confidence_interval(stats(1, 10), 0.0).is_err());
        assert!(confidence_interval(stats(1, 10), 1.0).is_err());
        assert!(confidence_interval(stats(0, 0), 0.95).is_err());
    }

    #[test]
    fn quantile_95() {
        assert!((normal_quantile(0.95).unwrap() - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn durations() {
        let secs = |p, a, c: f64| {
            estimate_campaign_duration(p, a, Duration::from_secs_f64(c))
                .unwrap()
                .as_secs_f64()
        };
        assert!((secs(1, 1, 4.0) - 4.0).abs() < 1e-9);
        assert!((secs(20, 100, 3.9) - 7800.0).abs() < 1e-6);
        assert!((secs(230, 100, 3.9) - 89_700.0).abs() < 1e-6);
        assert!(estimate_campaign_duration(0, 1, Duration::from_secs(1)).is_err());
        assert!(estimate_campaign_duration(1, 1, Duration::ZERO).is_err());
    }
}

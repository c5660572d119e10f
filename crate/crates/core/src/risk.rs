//! Drawdown-banded exposure control.
//!
//! Drawdown is measured against the portfolio's high-water mark. Each band is
//! half-open and lower-inclusive: once `dd >= threshold` the band's multiplier
//! applies to target exposure. A band with multiplier 0 liquidates, after
//! which the book stays flat for `cooldown_days` further steps and re-enters
//! at full exposure with the high-water mark reset to current equity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub threshold: f64,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    /// When false the engine bypasses the state machine entirely.
    pub enabled: bool,
    pub bands: Vec<Band>,
    pub cooldown_days: u32,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            bands: vec![
                Band { threshold: 0.02, multiplier: 0.8 },
                Band { threshold: 0.04, multiplier: 0.6 },
                Band { threshold: 0.06, multiplier: 0.0 },
            ],
            cooldown_days: 1,
        }
    }
}

impl RiskConfig {
    pub fn with_bands(bands: Vec<Band>, cooldown_days: u32) -> Result<Self> {
        let cfg = Self {
            enabled: true,
            bands,
            cooldown_days,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.bands {
            if !(b.threshold > 0.0) {
                return Err(Error::InvalidConfig(format!("band threshold {} must be > 0", b.threshold)));
            }
            if !(0.0..=1.0).contains(&b.multiplier) {
                return Err(Error::InvalidConfig(format!("band multiplier {} outside [0, 1]", b.multiplier)));
            }
        }
        for w in self.bands.windows(2) {
            if !(w[1].threshold > w[0].threshold) {
                return Err(Error::InvalidConfig("band thresholds must be strictly increasing".into()));
            }
            if !(w[1].multiplier < w[0].multiplier) {
                return Err(Error::InvalidConfig("band multipliers must be strictly decreasing".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskState {
    pub high_water_mark: f64,
    pub multiplier: f64,
    pub cooldown_remaining: u32,
    pub liquidated: bool,
}

impl RiskState {
    pub fn new(initial_equity: f64) -> Self {
        Self {
            high_water_mark: initial_equity,
            multiplier: 1.0,
            cooldown_remaining: 0,
            liquidated: false,
        }
    }
}

/// `max(0, (hwm - equity) / hwm)`.
pub fn drawdown(equity: f64, hwm: f64) -> Result<f64> {
    if !(hwm > 0.0) {
        return Err(Error::NonPositiveHwm);
    }
    Ok(((hwm - equity) / hwm).max(0.0))
}

pub fn band_multiplier(dd: f64, config: &RiskConfig) -> f64 {
    config
        .bands
        .iter()
        .take_while(|b| dd >= b.threshold)
        .last()
        .map_or(1.0, |b| b.multiplier)
}

/// Advances the state on today's closing equity and returns the new state
/// together with the multiplier for the next rebalance.
pub fn step(state: RiskState, equity: f64, config: &RiskConfig) -> (RiskState, f64) {
    let mut next = state;
    if state.liquidated {
        if state.cooldown_remaining > 0 {
            next.cooldown_remaining -= 1;
            next.multiplier = 0.0;
        } else {
            next.liquidated = false;
            next.high_water_mark = equity;
            next.multiplier = 1.0;
        }
        return (next, next.multiplier);
    }

    next.high_water_mark = state.high_water_mark.max(equity);
    // hwm is seeded from positive equity and only ever grows or resets to it.
    let dd = drawdown(equity, next.high_water_mark).unwrap_or(0.0);
    let target = band_multiplier(dd, config);
    if target == 0.0 {
        next.liquidated = true;
        next.cooldown_remaining = config.cooldown_days;
        next.multiplier = 0.0;
    } else {
        next.multiplier = target;
    }
    (next, next.multiplier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn drawdown_cases() {
        assert_eq!(drawdown(100.0, 100.0).unwrap(), 0.0);
        assert!((drawdown(97.0, 100.0).unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(drawdown(105.0, 100.0).unwrap(), 0.0);
        assert!(matches!(drawdown(1.0, 0.0), Err(Error::NonPositiveHwm)));
    }

    #[test]
    fn band_table() {
        let cfg = RiskConfig::default();
        let probes = [0.0, 0.019, 0.02, 0.03, 0.039, 0.04, 0.059, 0.06, 0.061, 0.2];
        let expect = [1.0, 1.0, 0.8, 0.8, 0.8, 0.6, 0.6, 0.0, 0.0, 0.0];
        for (dd, m) in probes.iter().zip(expect) {
            assert_eq!(band_multiplier(*dd, &cfg), m, "dd = {dd}");
        }
    }

    #[test]
    fn three_percent_drop_scales_to_point_eight() {
        let cfg = RiskConfig::default();
        let (s, m) = step(RiskState::new(100.0), 100.0, &cfg);
        assert_eq!(m, 1.0);
        let (_, m) = step(s, 97.0, &cfg);
        assert_eq!(m, 0.8);
    }

    #[test]
    fn liquidation_trace() {
        let cfg = RiskConfig::default();
        let mut s = RiskState::new(100.0);
        let mut out = vec![];
        for eq in [100.0, 93.0, 93.0, 93.0, 94.0] {
            let (n, m) = step(s, eq, &cfg);
            s = n;
            out.push((m, s.high_water_mark));
        }
        assert_eq!(
            out,
            vec![(1.0, 100.0), (0.0, 100.0), (0.0, 100.0), (1.0, 93.0), (1.0, 94.0)]
        );
    }

    #[test]
    fn rising_equity_keeps_full_exposure() {
        let cfg = RiskConfig::default();
        let mut s = RiskState::new(1.0);
        for k in 0..50 {
            let eq = 1.0 + k as f64 * 0.01;
            let (n, m) = step(s, eq, &cfg);
            assert_eq!(m, 1.0);
            assert_eq!(n.high_water_mark, eq);
            s = n;
        }
    }

    #[test]
    fn config_validation() {
        assert!(RiskConfig::default().validate().is_ok());
        let bad = |bands| RiskConfig::with_bands(bands, 1).is_err();
        assert!(bad(vec![Band { threshold: 0.04, multiplier: 0.8 }, Band { threshold: 0.02, multiplier: 0.6 }]));
        assert!(bad(vec![Band { threshold: 0.02, multiplier: 0.6 }, Band { threshold: 0.04, multiplier: 0.8 }]));
        assert!(bad(vec![Band { threshold: 0.02, multiplier: 1.5 }]));
        assert!(bad(vec![Band { threshold: 0.0, multiplier: 0.5 }]));
    }

    #[test]
    fn serde_uses_threshold_multiplier_pairs() {
        let json = serde_json::to_value(RiskConfig::default()).unwrap();
        assert_eq!(json["bands"][2]["threshold"], 0.06);
        assert_eq!(json["bands"][0]["multiplier"], 0.8);
        let parsed: RiskConfig = serde_json::from_str(r#"{"cooldown_days": 2}"#).unwrap();
        assert_eq!(parsed.bands, RiskConfig::default().bands);
        assert!(serde_json::from_str::<RiskConfig>(r#"{"cooldown": 2}"#).is_err());
    }

    #[test]
    fn fuzz_multiplier_matches_band_outside_cooldown() {
        let cfg = RiskConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let mut s = RiskState::new(1.0);
            let mut eq = 1.0f64;
            for _ in 0..40 {
                eq *= 1.0 + rng.gen_range(-0.03..0.03);
                let before = s;
                let (after, m) = step(s, eq, &cfg);
                if before.liquidated {
                    if before.cooldown_remaining > 0 {
                        assert_eq!(m, 0.0);
                    } else {
                        assert_eq!((m, after.high_water_mark), (1.0, eq));
                    }
                } else {
                    assert!(after.high_water_mark >= before.high_water_mark);
                    let dd = drawdown(eq, after.high_water_mark).unwrap();
                    assert_eq!(m, band_multiplier(dd, &cfg));
                }
                if after.cooldown_remaining > 0 {
                    assert_eq!(m, 0.0);
                }
                s = after;
            }
        }
    }

    proptest! {
        #[test]
        fn multiplier_non_increasing_in_drawdown(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let cfg = RiskConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(band_multiplier(hi, &cfg) <= band_multiplier(lo, &cfg));
        }

        #[test]
        fn open_band_is_identity(path in prop::collection::vec(0.01f64..10.0, 1..100)) {
            let cfg = RiskConfig::with_bands(vec![Band { threshold: f64::INFINITY, multiplier: 1.0 }], 1).unwrap();
            let mut s = RiskState::new(path[0]);
            for eq in path {
                let (n, m) = step(s, eq, &cfg);
                prop_assert_eq!(m, 1.0);
                s = n;
            }
        }

        #[test]
        fn cooldown_length_is_exact(cooldown in 0u32..5, extra in prop::collection::vec(0.5f64..1.5, 10)) {
            let cfg = RiskConfig { cooldown_days: cooldown, ..RiskConfig::default() };
            let (s, m) = step(RiskState::new(1.0), 0.9, &cfg);
            prop_assert_eq!(m, 0.0);
            let mut s = s;
            let mut zeros = 0;
            for eq in extra {
                let (n, m) = step(s, eq, &cfg);
                if m == 0.0 { zeros += 1 } else {
                    prop_assert_eq!(m, 1.0);
                    prop_assert_eq!(n.high_water_mark, eq);
                    break;
                }
                s = n;
            }
            prop_assert_eq!(zeros, cooldown);
        }
    }
}

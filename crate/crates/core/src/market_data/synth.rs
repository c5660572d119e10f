//! Seeded synthetic market scenarios.

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{align, AlignedPanel, Bar, PriceSeries};
use crate::error::{Error, Result};

/// Length of the embedded crash segment, in daily returns.
pub const CRASH_DAYS: usize = 15;
pub const CRASH_DAILY_RETURN: f64 = -0.03;
pub const REGIME_BLOCK_DAYS: usize = 60;

const DAYS_PER_YEAR: f64 = 365.0;
const MARKET_CORRELATION: f64 = 0.5;
const OHLC_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Bull,
    Crash,
    Sideways,
    RegimeSwitch,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Bull => "bull",
            Scenario::Crash => "crash",
            Scenario::Sideways => "sideways",
            Scenario::RegimeSwitch => "regime_switch",
        }
    }

    /// Annualized (drift, vol) for return index `k`.
    fn params(self, k: usize) -> (f64, f64) {
        match self {
            Scenario::Bull => (0.60, 0.45),
            Scenario::Crash => (0.20, 0.35),
            Scenario::Sideways => (0.0, 0.25),
            Scenario::RegimeSwitch => {
                if (k / REGIME_BLOCK_DAYS) % 2 == 0 {
                    (1.20, 0.50)
                } else {
                    (-1.00, 0.60)
                }
            }
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bull" => Ok(Scenario::Bull),
            "crash" => Ok(Scenario::Crash),
            "sideways" => Ok(Scenario::Sideways),
            "regime_switch" => Ok(Scenario::RegimeSwitch),
            other => Err(Error::InvalidScenario(other.to_string())),
        }
    }
}

fn synth_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date")
}

/// Geometric Brownian closes with annualized drift and volatility.
pub fn gbm_closes(start: f64, drift: f64, vol: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / DAYS_PER_YEAR;
    let mut closes = Vec::with_capacity(n);
    let mut price = start;
    for k in 0..n {
        if k > 0 {
            let z: f64 = rng.sample(StandardNormal);
            price *= ((drift - 0.5 * vol * vol) * dt + vol * dt.sqrt() * z).exp();
        }
        closes.push(price);
    }
    closes
}

/// Ornstein-Uhlenbeck log price around `ln(start)`; `reversion` is the daily pull.
pub fn mean_reverting_closes(start: f64, vol: f64, reversion: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = vol / DAYS_PER_YEAR.sqrt();
    let anchor = start.ln();
    let mut x = anchor;
    let mut closes = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            let z: f64 = rng.sample(StandardNormal);
            x += reversion * (anchor - x) + sd * z;
        }
        closes.push(x.exp());
    }
    closes
}

fn vol_scale(asset: usize, n_assets: usize) -> f64 {
    if n_assets <= 1 {
        1.0
    } else {
        0.7 + 0.6 * asset as f64 / (n_assets - 1) as f64
    }
}

fn scenario_closes(scenario: Scenario, n_assets: usize, n_days: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / DAYS_PER_YEAR;
    let crash = match scenario {
        Scenario::Crash => {
            let begin = n_days / 2;
            begin..(begin + CRASH_DAYS).min(n_days - 1)
        }
        _ => 0..0,
    };
    let mut log_px: Vec<f64> = (0..n_assets).map(|i| (100.0 * (i + 1) as f64).ln()).collect();
    let anchors = log_px.clone();
    let mut closes: Vec<Vec<f64>> = log_px.iter().map(|x| vec![x.exp()]).collect();

    for k in 0..n_days - 1 {
        let market: f64 = rng.sample(StandardNormal);
        let (drift, base_vol) = scenario.params(k);
        for i in 0..n_assets {
            let idio: f64 = rng.sample(StandardNormal);
            let z = MARKET_CORRELATION.sqrt() * market + (1.0 - MARKET_CORRELATION).sqrt() * idio;
            let vol = base_vol * vol_scale(i, n_assets);
            let prev = *closes[i].last().expect("seeded with a start price");
            let next = if crash.contains(&k) {
                prev * (1.0 + CRASH_DAILY_RETURN)
            } else if scenario == Scenario::Sideways {
                log_px[i] += 0.15 * (anchors[i] - log_px[i]) + vol * dt.sqrt() * z;
                log_px[i].exp()
            } else {
                prev * ((drift - 0.5 * vol * vol) * dt + vol * dt.sqrt() * z).exp()
            };
            log_px[i] = next.ln();
            closes[i].push(next);
        }
    }
    closes
}

/// Per-symbol synthetic OHLCV series `SYN0..SYN{n-1}` starting 2023-01-01.
///
/// `crash` holds the closes at exactly -3% per day for 15 returns starting at
/// return index `n_days / 2` (truncated if the series ends first);
/// `regime_switch` alternates 60-day bull and bear blocks.
pub fn synth_series(scenario: Scenario, n_assets: usize, n_days: usize, seed: u64) -> Result<Vec<PriceSeries>> {
    if n_days < 10 {
        return Err(Error::InvalidArgument(format!("n_days must be >= 10, got {n_days}")));
    }
    if n_assets < 1 {
        return Err(Error::InvalidArgument("n_assets must be >= 1".into()));
    }
    let closes = scenario_closes(scenario, n_assets, n_days, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ OHLC_SEED_SALT);
    let start = synth_start();

    closes
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let bars = path
                .iter()
                .enumerate()
                .map(|(k, &close)| {
                    let open = if k == 0 { close } else { path[k - 1] };
                    let high = open.max(close) * (1.0 + 0.01 * rng.gen::<f64>());
                    let low = open.min(close) * (1.0 - 0.01 * rng.gen::<f64>());
                    let volume = 1.0e6 * (1.0 + rng.gen::<f64>());
                    Bar {
                        date: start + Duration::days(k as i64),
                        open,
                        high,
                        low,
                        close,
                        volume,
                    }
                })
                .collect();
            PriceSeries::new(format!("SYN{i}"), bars)
        })
        .collect()
}

pub fn synth_generate(scenario: Scenario, n_assets: usize, n_days: usize, seed: u64) -> Result<AlignedPanel> {
    align(&synth_series(scenario, n_assets, n_days, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let a = synth_generate(Scenario::Bull, 1, 100, 7).unwrap();
        let b = synth_generate(Scenario::Bull, 1, 100, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = synth_generate(Scenario::Bull, 1, 100, 8).unwrap();
        assert_ne!(a.closes(), c.closes());
    }

    #[test]
    fn crash_has_fifteen_minus_three_percent_days() {
        let p = synth_generate(Scenario::Crash, 1, 60, 1).unwrap();
        let r = &p.returns()[0];
        let mut best = 0;
        let mut run = 0;
        for x in r {
            if (x - CRASH_DAILY_RETURN).abs() < 1e-12 {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        assert_eq!(best, CRASH_DAYS);
        assert!((r[30] + 0.03).abs() < 1e-12 && (r[44] + 0.03).abs() < 1e-12);
    }

    #[test]
    fn sideways_shape() {
        let p = synth_generate(Scenario::Sideways, 2, 10, 3).unwrap();
        assert_eq!(p.symbols(), ["SYN0", "SYN1"]);
        assert_eq!(p.n_dates(), 10);
        assert!(p.returns().iter().all(|r| r.len() == 9));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(synth_generate(Scenario::Bull, 1, 9, 0).is_err());
        assert!(synth_generate(Scenario::Bull, 0, 20, 0).is_err());
        assert!(matches!("melt".parse::<Scenario>(), Err(Error::InvalidScenario(_))));
        assert_eq!("regime_switch".parse::<Scenario>().unwrap(), Scenario::RegimeSwitch);
    }

    #[test]
    fn crash_segment_truncates_on_short_series() {
        let p = synth_generate(Scenario::Crash, 1, 20, 1).unwrap();
        let n = p.returns()[0][10..].iter().filter(|x| (**x + 0.03).abs() < 1e-12).count();
        assert_eq!(n, 9);
    }

    #[test]
    fn gbm_has_roughly_requested_vol() {
        let c = gbm_closes(100.0, 0.0, 0.8, 2000, 11);
        let r: Vec<f64> = c.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let v = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        assert!((v * 365f64.sqrt() - 0.8).abs() < 0.08);
    }
}

//! Performance measures for equity curves and return series.
//!
//! Ratios are computed on per-period (daily) returns and annualized by
//! `sqrt(periods_per_year)`; crypto trades every calendar day, so the default
//! year is 365 periods. Fractions stay fractions here; percentages only
//! appear when a report is rendered.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::simple_returns;

pub const DEFAULT_PERIODS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Per-period risk-free rate.
    pub risk_free: f64,
    pub periods_per_year: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            risk_free: 0.0,
            periods_per_year: DEFAULT_PERIODS_PER_YEAR,
        }
    }
}

impl MetricsConfig {
    pub fn annualization(&self) -> f64 {
        self.periods_per_year.sqrt()
    }
}

/// Normalized portfolio value per date, starting at 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl EquityCurve {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::InvalidArgument("equity dates/values length mismatch".into()));
        }
        match values.first() {
            None => return Err(Error::TooShort { needed: 1, got: 0 }),
            Some(&v0) if (v0 - 1.0).abs() > 1e-12 => {
                return Err(Error::InvalidArgument(format!("equity must start at 1.0, got {v0}")))
            }
            _ => {}
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("equity values must be positive".into()));
        }
        Ok(Self { dates, values })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn returns(&self) -> Result<Vec<f64>> {
        simple_returns(&self.values)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date,value\n");
        for (d, v) in self.dates.iter().zip(&self.values) {
            out.push_str(&format!("{},{}\n", d.format(crate::market_data::DATE_FORMAT), v));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub symbol: String,
    pub entry_date: NaiveDate,
    pub exit_date: NaiveDate,
    pub realized_pnl: f64,
    pub win: bool,
}

/// Undefined ratios (zero variance, no downside, zero drawdown) are `None` and
/// serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub roi: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub mdd: f64,
    pub ret_dd: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub vol: f64,
    pub turnover: f64,
    pub win_rate: f64,
    pub win_positions: usize,
    pub total_positions: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n - 1) standard deviation.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// `(V_end - V_start) / V_start`.
pub fn roi(values: &[f64]) -> Result<f64> {
    match values {
        [first, .., last] => Ok((last - first) / first),
        _ => Err(Error::TooShort {
            needed: 2,
            got: values.len(),
        }),
    }
}

fn check_len(returns: &[f64]) -> Result<()> {
    if returns.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: returns.len(),
        });
    }
    Ok(())
}

/// Annualized Sharpe ratio: `mean(r - rf) / std(r - rf) * annualization`.
pub fn sharpe(returns: &[f64], rf: f64, annualization: f64) -> Result<f64> {
    check_len(returns)?;
    let excess: Vec<f64> = returns.iter().map(|r| r - rf).collect();
    let sd = sample_std(&excess);
    // Relative cutoff: a constant series leaves rounding-level residue in the std.
    let scale = excess.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if !(sd > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateVolatility);
    }
    Ok(mean(&excess) / sd * annualization)
}

/// Annualized Sortino ratio with downside deviation taken over all periods.
pub fn sortino(returns: &[f64], rf: f64, annualization: f64) -> Result<f64> {
    check_len(returns)?;
    let excess: Vec<f64> = returns.iter().map(|r| r - rf).collect();
    if !excess.iter().any(|&x| x < 0.0) {
        return Err(Error::NoDownside);
    }
    let downside = (excess.iter().map(|x| x.min(0.0).powi(2)).sum::<f64>() / excess.len() as f64).sqrt();
    Ok(mean(&excess) / downside * annualization)
}

/// Maximum drawdown in one streaming pass over the curve.
pub fn mdd(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in values {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    worst
}

/// Return per unit of drawdown; undefined at zero drawdown.
pub fn ret_dd(roi: f64, mdd: f64) -> Option<f64> {
    (mdd > 0.0).then(|| roi / mdd)
}

/// OLS of strategy excess returns on benchmark excess returns.
/// Returns `(alpha, beta)` with alpha = intercept * periods_per_year.
pub fn alpha_beta(strategy: &[f64], benchmark: &[f64], rf: f64, periods_per_year: f64) -> Result<(f64, f64)> {
    if strategy.len() != benchmark.len() {
        return Err(Error::InvalidArgument(format!(
            "strategy has {} returns, benchmark {}",
            strategy.len(),
            benchmark.len()
        )));
    }
    if strategy.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: strategy.len(),
        });
    }
    let y: Vec<f64> = strategy.iter().map(|r| r - rf).collect();
    let x: Vec<f64> = benchmark.iter().map(|r| r - rf).collect();
    let (mx, my) = (mean(&x), mean(&y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(sxx.sqrt() > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateVolatility);
    }
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    Ok((intercept * periods_per_year, beta))
}

/// Half the L1 distance between two weight vectors.
pub fn traded_fraction(before: &[f64], after: &[f64]) -> f64 {
    0.5 * before.iter().zip(after).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Mean traded fraction over consecutive snapshots.
pub fn turnover<W: AsRef<[f64]>>(history: &[W]) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: history.len(),
        });
    }
    let total: f64 = history
        .windows(2)
        .map(|w| traded_fraction(w[0].as_ref(), w[1].as_ref()))
        .sum();
    Ok(total / (history.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeStats {
    pub win_rate: f64,
    pub win_positions: usize,
    pub total_positions: usize,
}

pub fn trade_stats(trades: &[TradeRecord]) -> TradeStats {
    let total = trades.len();
    let wins = trades.iter().filter(|t| t.win).count();
    TradeStats {
        win_rate: if total == 0 { 0.0 } else { wins as f64 / total as f64 },
        win_positions: wins,
        total_positions: total,
    }
}

/// Assembles a full report. `turnover` is supplied by the caller because
/// only the engine knows which weight changes were actual trades.
pub fn evaluate(
    curve: &EquityCurve,
    benchmark_returns: Option<&[f64]>,
    turnover: f64,
    trades: &[TradeRecord],
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    let values = curve.values();
    let roi = roi(values)?;
    let mdd = mdd(values);
    let rets = curve.returns()?;
    let ann = cfg.annualization();
    let (alpha, beta) = match benchmark_returns.map(|b| alpha_beta(&rets, b, cfg.risk_free, cfg.periods_per_year)) {
        Some(Ok((a, b))) => (Some(a), Some(b)),
        Some(Err(Error::DegenerateVolatility)) | Some(Err(Error::TooShort { .. })) | None => (None, None),
        Some(Err(e)) => return Err(e),
    };
    let stats = trade_stats(trades);
    Ok(MetricsReport {
        roi,
        sharpe: sharpe(&rets, cfg.risk_free, ann).ok(),
        sortino: sortino(&rets, cfg.risk_free, ann).ok(),
        mdd,
        ret_dd: ret_dd(roi, mdd),
        alpha,
        beta,
        vol: sample_std(&rets) * ann,
        turnover,
        win_rate: stats.win_rate,
        win_positions: stats.win_positions,
        total_positions: stats.total_positions,
    })
}

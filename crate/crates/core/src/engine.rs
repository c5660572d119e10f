//! Daily-rebalancing backtest loop and baseline strategies.
//!
//! Timeline for an equity series over date indices `s..=e`:
//!
//! * equity at `s` is 1.0 (all cash);
//! * at the close of each day `t < e` the book is marked, the risk state is
//!   stepped on that closing equity, target weights are computed from data up
//!   to and including close `t`, and holdings are traded to `multiplier *
//!   target` at the same close, paying `fee_bps` on traded notional;
//! * the `t -> t+1` asset returns are then applied and equity recorded at `t+1`.
//!
//! Weights applied over day `t+1` therefore never depend on closes at or after
//! `t+1`.

use std::fmt;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::allocation::{equal_weights, estimate_stats, hybrid_weights_with_floor, AllocConfig};
use crate::error::{Error, Result};
use crate::market_data::{AlignedPanel, DATE_FORMAT};
use crate::metrics::{self, traded_fraction, EquityCurve, MetricsConfig, MetricsReport, TradeRecord};
use crate::risk::{self, RiskConfig, RiskState};

/// Weights below this are treated as a closed position.
const POSITION_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Benchmark {
    /// Equal-initial-weight buy-and-hold of the backtest symbols.
    EqualWeight,
    Symbol(String),
}

impl Serialize for Benchmark {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Benchmark::EqualWeight => s.serialize_str("equal_weight"),
            Benchmark::Symbol(sym) => s.serialize_str(sym),
        }
    }
}

impl<'de> Deserialize<'de> for Benchmark {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        match raw.as_str() {
            "" => Err(de::Error::custom("benchmark must not be empty")),
            "equal_weight" => Ok(Benchmark::EqualWeight),
            _ => Ok(Benchmark::Symbol(raw)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    pub symbols: Vec<String>,
    /// First equity date; defaults to the first date with a full lookback.
    #[serde(default)]
    pub start: Option<NaiveDate>,
    #[serde(default)]
    pub end: Option<NaiveDate>,
    #[serde(default = "default_fee_bps")]
    pub fee_bps: f64,
    #[serde(default)]
    pub alloc: AllocConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default = "default_benchmark")]
    pub benchmark: Benchmark,
    #[serde(default = "default_initial_capital")]
    pub initial_capital: f64,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_fee_bps() -> f64 {
    4.0
}

fn default_benchmark() -> Benchmark {
    Benchmark::EqualWeight
}

fn default_initial_capital() -> f64 {
    1.0
}

impl BacktestConfig {
    pub fn new(symbols: Vec<String>) -> Self {
        Self {
            symbols,
            start: None,
            end: None,
            fee_bps: default_fee_bps(),
            alloc: AllocConfig::default(),
            risk: RiskConfig::default(),
            benchmark: default_benchmark(),
            initial_capital: default_initial_capital(),
            metrics: MetricsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbols.is_empty() {
            return Err(Error::InvalidConfig("backtest needs at least one symbol".into()));
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s >= e {
                return Err(Error::InvalidConfig(format!("start {s} must precede end {e}")));
            }
        }
        if !(self.fee_bps >= 0.0) || !self.fee_bps.is_finite() {
            return Err(Error::InvalidConfig("fee_bps must be >= 0".into()));
        }
        if !(self.initial_capital > 0.0) {
            return Err(Error::InvalidConfig("initial_capital must be > 0".into()));
        }
        self.alloc.validate()?;
        self.risk.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "symbol")]
pub enum Strategy {
    /// Hybrid weights under drawdown control.
    Hybrid,
    /// Equal initial allocation, never rebalanced.
    BuyAndHold,
    SingleAsset(String),
    EqualWeightDaily,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Hybrid => f.write_str("Hybrid (risk-managed)"),
            Strategy::BuyAndHold => f.write_str("Buy and Hold"),
            Strategy::SingleAsset(s) => write!(f, "{s} only"),
            Strategy::EqualWeightDaily => f.write_str("Equal weight (daily)"),
        }
    }
}

/// Post-trade weights for one rebalance; `cash + Σ weights = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub date: NaiveDate,
    pub cash: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: Strategy,
    pub symbols: Vec<String>,
    pub equity: EquityCurve,
    pub weights_history: Vec<WeightSnapshot>,
    /// Traded fraction at each rebalance, aligned with `weights_history`.
    pub traded: Vec<f64>,
    pub trades: Vec<TradeRecord>,
    pub metrics: MetricsReport,
    pub config_echo: BacktestConfig,
}

impl BacktestReport {
    pub fn final_equity(&self) -> f64 {
        *self.equity.values().last().expect("equity is never empty")
    }

    pub fn weights_csv(&self) -> String {
        let mut out = String::from("date,cash");
        for s in &self.symbols {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for snap in &self.weights_history {
            out.push_str(&format!("{},{}", snap.date.format(DATE_FORMAT), snap.cash));
            for w in &snap.weights {
                out.push_str(&format!(",{w}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn trades_csv(&self) -> String {
        let mut out = String::from("symbol,entry_date,exit_date,realized_pnl,win\n");
        for t in &self.trades {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.symbol,
                t.entry_date.format(DATE_FORMAT),
                t.exit_date.format(DATE_FORMAT),
                t.realized_pnl,
                t.win
            ));
        }
        out
    }

    /// Writes `equity.csv`, `weights.csv` and `trades.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("equity.csv", self.equity.to_csv_string()),
            ("weights.csv", self.weights_csv()),
            ("trades.csv", self.trades_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

struct Window {
    start: usize,
    end: usize,
}

fn resolve_window(panel: &AlignedPanel, config: &BacktestConfig, lookback: usize) -> Result<Window> {
    let dates = panel.dates();
    let start = match config.start {
        Some(d) => dates
            .iter()
            .position(|x| *x >= d)
            .ok_or_else(|| Error::InsufficientHistory(format!("no panel dates on or after {d}")))?,
        None => lookback,
    };
    let end = match config.end {
        Some(d) => dates
            .iter()
            .rposition(|x| *x <= d)
            .ok_or_else(|| Error::InsufficientHistory(format!("no panel dates on or before {d}")))?,
        None => dates.len() - 1,
    };
    if start < lookback {
        return Err(Error::InsufficientHistory(format!(
            "insufficient lookback history: start needs {lookback} prior days, panel has {start}"
        )));
    }
    if start >= end {
        return Err(Error::InsufficientHistory(
            "backtest range covers fewer than 2 panel dates".into(),
        ));
    }
    Ok(Window { start, end })
}

struct OpenPosition {
    entry: NaiveDate,
    pnl: f64,
}

fn benchmark_returns(panel: &AlignedPanel, config: &BacktestConfig, w: &Window) -> Result<Vec<f64>> {
    let values: Vec<f64> = match &config.benchmark {
        Benchmark::Symbol(sym) => {
            let c = panel.closes_of(sym)?;
            (w.start..=w.end).map(|t| c[t] / c[w.start]).collect()
        }
        Benchmark::EqualWeight => {
            let cols = config
                .symbols
                .iter()
                .map(|s| panel.closes_of(s))
                .collect::<Result<Vec<_>>>()?;
            let n = cols.len() as f64;
            (w.start..=w.end)
                .map(|t| cols.iter().map(|c| c[t] / c[w.start]).sum::<f64>() / n)
                .collect()
        }
    };
    crate::market_data::simple_returns(&values)
}

fn simulate(panel: &AlignedPanel, config: &BacktestConfig, strategy: &Strategy) -> Result<BacktestReport> {
    config.validate()?;
    let sub = panel.select(&config.symbols)?;
    let n = sub.symbols().len();
    let lookback = config.alloc.lookback();
    let win = resolve_window(&sub, config, lookback)?;
    let fee_rate = config.fee_bps / 10_000.0;
    let risk_on = config.risk.enabled && *strategy == Strategy::Hybrid;

    let single = match strategy {
        Strategy::SingleAsset(sym) => Some(sub.symbol_index(sym)?),
        _ => None,
    };

    let dates = sub.dates();
    let mut holdings = vec![0.0; n];
    let mut cash = 1.0f64;
    let mut state = RiskState::new(1.0);
    let mut equity = vec![1.0];
    let mut history = Vec::with_capacity(win.end - win.start);
    let mut traded_log = Vec::with_capacity(win.end - win.start);
    let mut open: Vec<Option<OpenPosition>> = (0..n).map(|_| None).collect();
    let mut trades = Vec::new();

    for t in win.start..win.end {
        let eq: f64 = holdings.iter().sum::<f64>() + cash;
        let pre: Vec<f64> = holdings.iter().map(|h| h / eq).collect();
        let pre_cash = cash / eq;

        let multiplier = if risk_on {
            let (next, m) = risk::step(state, eq, &config.risk);
            state = next;
            m
        } else {
            1.0
        };

        // None = hold: let weights drift without trading.
        let target: Option<Vec<f64>> = match strategy {
            Strategy::Hybrid => {
                let stats = estimate_stats(&sub, t + 1, &config.alloc)?;
                Some(hybrid_weights_with_floor(&stats, config.alloc.sharpe_floor)?.into_inner())
            }
            Strategy::BuyAndHold if t == win.start => Some(equal_weights(n)?.into_inner()),
            Strategy::BuyAndHold => None,
            Strategy::SingleAsset(_) => {
                let mut w = vec![0.0; n];
                w[single.expect("resolved above")] = 1.0;
                Some(w)
            }
            Strategy::EqualWeightDaily => Some(equal_weights(n)?.into_inner()),
        };

        let (post, post_cash, fees) = match target {
            Some(w) => {
                let post: Vec<f64> = w.iter().map(|x| x * multiplier).collect();
                let post_cash = 1.0 - multiplier;
                let fees: Vec<f64> = post
                    .iter()
                    .zip(&holdings)
                    .map(|(w, h)| fee_rate * (w * eq - h).abs())
                    .collect();
                (post, post_cash, fees)
            }
            None => (pre.clone(), pre_cash, vec![0.0; n]),
        };
        let after_fee = eq - fees.iter().sum::<f64>();

        let mut before = Vec::with_capacity(n + 1);
        before.push(pre_cash);
        before.extend_from_slice(&pre);
        let mut after = Vec::with_capacity(n + 1);
        after.push(post_cash);
        after.extend_from_slice(&post);
        traded_log.push(traded_fraction(&before, &after));

        for i in 0..n {
            let is_open = post[i] > POSITION_EPS;
            match open[i].take() {
                None if is_open => {
                    open[i] = Some(OpenPosition {
                        entry: dates[t],
                        pnl: -fees[i],
                    })
                }
                Some(mut pos) if is_open => {
                    pos.pnl -= fees[i];
                    open[i] = Some(pos);
                }
                Some(pos) => {
                    let pnl = pos.pnl - fees[i];
                    trades.push(close_trade(&sub.symbols()[i], pos.entry, dates[t], pnl, config));
                }
                None => {}
            }
        }

        holdings = post.iter().map(|w| w * after_fee).collect();
        cash = post_cash * after_fee;

        for i in 0..n {
            let gain = holdings[i] * sub.returns()[i][t];
            if let Some(pos) = &mut open[i] {
                pos.pnl += gain;
            }
            holdings[i] += gain;
        }
        equity.push(holdings.iter().sum::<f64>() + cash);
        history.push(WeightSnapshot {
            date: dates[t],
            cash: post_cash,
            weights: post,
        });
    }

    for (i, slot) in open.iter_mut().enumerate() {
        if let Some(pos) = slot.take() {
            trades.push(close_trade(&sub.symbols()[i], pos.entry, dates[win.end], pos.pnl, config));
        }
    }

    let curve = EquityCurve::new(dates[win.start..=win.end].to_vec(), equity)?;
    let bench = benchmark_returns(panel, config, &win)?;
    // The first entry is the initial allocation out of cash, not a rebalance.
    let turnover = if traded_log.len() > 1 {
        traded_log[1..].iter().sum::<f64>() / (traded_log.len() - 1) as f64
    } else {
        0.0
    };
    let metrics = metrics::evaluate(&curve, Some(&bench), turnover, &trades, &config.metrics)?;

    let mut echo = config.clone();
    if !risk_on {
        echo.risk.enabled = false;
    }
    Ok(BacktestReport {
        strategy: strategy.clone(),
        symbols: sub.symbols().to_vec(),
        equity: curve,
        weights_history: history,
        traded: traded_log,
        trades,
        metrics,
        config_echo: echo,
    })
}

fn close_trade(symbol: &str, entry: NaiveDate, exit: NaiveDate, pnl: f64, config: &BacktestConfig) -> TradeRecord {
    let realized_pnl = pnl * config.initial_capital;
    TradeRecord {
        symbol: symbol.to_string(),
        entry_date: entry,
        exit_date: exit,
        realized_pnl,
        win: realized_pnl > 0.0,
    }
}

/// Runs the hybrid-weight strategy under the configured risk control.
pub fn run_backtest(panel: &AlignedPanel, config: &BacktestConfig) -> Result<BacktestReport> {
    simulate(panel, config, &Strategy::Hybrid)
}

/// Runs a baseline over the same window as `config`; risk control is always off.
pub fn run_baseline(panel: &AlignedPanel, kind: &Strategy, config: &BacktestConfig) -> Result<BacktestReport> {
    if *kind == Strategy::Hybrid {
        return Err(Error::InvalidArgument("hybrid is not a baseline".into()));
    }
    simulate(panel, config, kind)
}

/// One row of the comparison table; percentages are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub metrics: MetricsReport,
}

pub fn compare(reports: &[(String, &BacktestReport)]) -> Vec<ComparisonRow> {
    reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            name: name.clone(),
            metrics: r.metrics.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{synth_generate, Scenario};

    fn panel(scenario: Scenario, assets: usize, days: usize, seed: u64) -> AlignedPanel {
        synth_generate(scenario, assets, days, seed).unwrap()
    }

    fn syms(p: &AlignedPanel) -> Vec<String> {
        p.symbols().to_vec()
    }

    #[test]
    fn single_asset_risk_off_tracks_price() {
        let p = panel(Scenario::Bull, 1, 200, 3);
        let mut cfg = BacktestConfig::new(syms(&p));
        cfg.risk.enabled = false;
        cfg.fee_bps = 0.0;
        let r = run_backtest(&p, &cfg).unwrap();
        let c = &p.closes()[0];
        let s = cfg.alloc.lookback();
        assert_eq!(r.equity.len(), p.n_dates() - s);
        assert!((r.final_equity() - c[c.len() - 1] / c[s]).abs() < 1e-9);
        assert!(!r.config_echo.risk.enabled);
    }

    #[test]
    fn initial_fee_is_charged_on_traded_notional() {
        let p = panel(Scenario::Bull, 2, 80, 5);
        let mut cfg = BacktestConfig::new(syms(&p));
        cfg.risk.enabled = false;
        let r = run_backtest(&p, &cfg).unwrap();
        let s = cfg.alloc.lookback();
        let w = &r.weights_history[0].weights;
        // Fully invested from cash: traded notional is 1.0.
        let growth: f64 = w.iter().enumerate().map(|(i, wi)| wi * (1.0 + p.returns()[i][s])).sum();
        let expect = (1.0 - 0.0004) * growth;
        assert!((r.equity.values()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn cash_plus_weights_is_one() {
        let p = panel(Scenario::Crash, 3, 150, 1);
        let r = run_backtest(&p, &BacktestConfig::new(syms(&p))).unwrap();
        for snap in &r.weights_history {
            let s: f64 = snap.cash + snap.weights.iter().sum::<f64>();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn crash_is_contained_relative_to_unmanaged() {
        let p = panel(Scenario::Crash, 1, 120, 1);
        let managed = run_backtest(&p, &BacktestConfig::new(syms(&p))).unwrap();
        let mut off = BacktestConfig::new(syms(&p));
        off.risk.enabled = false;
        let unmanaged = run_backtest(&p, &off).unwrap();
        assert!(managed.metrics.mdd < unmanaged.metrics.mdd);
        assert!(managed.weights_history.iter().any(|w| w.cash == 1.0));
    }

    #[test]
    fn baselines() {
        let up: Vec<f64> = (0..60).map(|k| 100.0 * 1.01f64.powi(k)).collect();
        let dates = (0..60)
            .map(|k| NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(k))
            .collect::<Vec<_>>();
        let p = AlignedPanel::from_closes(dates.clone(), vec!["UP".into()], vec![up.clone()]).unwrap();
        let cfg = BacktestConfig::new(vec!["UP".into()]);
        let r = run_baseline(&p, &Strategy::SingleAsset("UP".into()), &cfg).unwrap();
        assert!(r.metrics.roi > 0.0);
        assert_eq!(r.metrics.mdd, 0.0);

        let q = panel(Scenario::Bull, 3, 100, 9);
        let cfg = BacktestConfig::new(syms(&q));
        let bh = run_baseline(&q, &Strategy::BuyAndHold, &cfg).unwrap();
        assert!(bh.traded[1..].iter().all(|&x| x == 0.0));
        assert_eq!(bh.metrics.turnover, 0.0);
        assert!(!bh.config_echo.risk.enabled);

        let twin = AlignedPanel::from_closes(dates, vec!["A".into(), "B".into()], vec![up.clone(), up]).unwrap();
        let cfg = BacktestConfig::new(vec!["A".into(), "B".into()]);
        let ew = run_baseline(&twin, &Strategy::EqualWeightDaily, &cfg).unwrap();
        assert!(ew.weights_history.iter().all(|w| w.weights == [0.5, 0.5]));
        assert!(ew.metrics.turnover.abs() < 1e-12);

        assert!(run_baseline(&q, &Strategy::Hybrid, &cfg).is_err());
    }

    #[test]
    fn errors() {
        let p = panel(Scenario::Bull, 1, 50, 1);
        let cfg = BacktestConfig::new(vec!["NOPE".into()]);
        assert!(matches!(run_backtest(&p, &cfg), Err(Error::UnknownSymbol(_))));
        let mut cfg = BacktestConfig::new(syms(&p));
        cfg.start = Some(p.dates()[5]);
        let err = run_backtest(&p, &cfg).unwrap_err();
        assert!(err.to_string().contains("insufficient lookback"));
        let mut cfg = BacktestConfig::new(syms(&p));
        cfg.fee_bps = -1.0;
        assert!(run_backtest(&p, &cfg).is_err());
    }

    #[test]
    fn date_range_limits_equity() {
        let p = panel(Scenario::Bull, 2, 120, 2);
        let mut cfg = BacktestConfig::new(syms(&p));
        cfg.start = Some(p.dates()[40]);
        cfg.end = Some(p.dates()[90]);
        let r = run_backtest(&p, &cfg).unwrap();
        assert_eq!(r.equity.len(), 51);
        assert_eq!(r.equity.dates()[0], p.dates()[40]);
        assert_eq!(*r.equity.dates().last().unwrap(), p.dates()[90]);
    }

    #[test]
    fn trade_episodes_are_well_formed() {
        let p = panel(Scenario::RegimeSwitch, 3, 400, 4);
        let r = run_backtest(&p, &BacktestConfig::new(syms(&p))).unwrap();
        assert!(!r.trades.is_empty());
        for t in &r.trades {
            assert!(t.entry_date < t.exit_date);
            assert_eq!(t.win, t.realized_pnl > 0.0);
        }
        assert_eq!(r.metrics.total_positions, r.trades.len());
    }

    #[test]
    fn deterministic_serialization() {
        let p = panel(Scenario::RegimeSwitch, 2, 200, 8);
        let cfg = BacktestConfig::new(syms(&p));
        let a = serde_json::to_string(&run_backtest(&p, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_backtest(&p, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_outputs_have_expected_headers() {
        let p = panel(Scenario::Bull, 2, 60, 2);
        let r = run_backtest(&p, &BacktestConfig::new(syms(&p))).unwrap();
        assert!(r.weights_csv().starts_with("date,cash,SYN0,SYN1\n"));
        assert!(r.trades_csv().starts_with("symbol,entry_date,exit_date,realized_pnl,win\n"));
        assert!(r.equity.to_csv_string().starts_with("date,value\n"));
    }

    #[test]
    fn benchmark_config_round_trips() {
        let mut cfg = BacktestConfig::new(vec!["A".into()]);
        cfg.benchmark = Benchmark::Symbol("BTC".into());
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains(r#""benchmark":"BTC""#));
        let back: BacktestConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let d: BacktestConfig = serde_json::from_str(r#"{"symbols":["A"]}"#).unwrap();
        assert_eq!(d.benchmark, Benchmark::EqualWeight);
        assert_eq!(d.fee_bps, 4.0);
    }
}

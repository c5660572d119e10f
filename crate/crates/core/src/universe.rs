//! Universe screening: liquidity ranks, peg detection and trend classes.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{simple_returns, AlignedPanel, PriceSeries};
use crate::metrics::sample_std;

const DAYS_PER_YEAR: f64 = 365.0;
pub const META_HEADER: &str = "symbol,market_cap_usd,volume_24h_usd";
pub const MIN_TREND_WINDOW: usize = 30;
pub const MIN_PEG_BARS: usize = 31;
pub const PEG_LOOKBACK: usize = 90;
pub const PEG_VOL_CEILING: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMeta {
    pub symbol: String,
    pub market_cap_usd: f64,
    pub volume_24h_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrendClass {
    Upward,
    Volatile,
    Sideways,
    Declining,
}

impl TrendClass {
    pub fn is_tradeable(self) -> bool {
        matches!(self, TrendClass::Upward | TrendClass::Volatile)
    }
}

impl fmt::Display for TrendClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrendClass::Upward => "upward",
            TrendClass::Volatile => "volatile",
            TrendClass::Sideways => "sideways",
            TrendClass::Declining => "declining",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrendThresholds {
    /// Minimum annualized log growth for `Upward`.
    pub up: f64,
    /// Minimum annualized log decline for `Declining`.
    pub down: f64,
    /// `Sideways` needs |growth| below this.
    pub side: f64,
    /// Minimum R² for a directional class.
    pub r_min: f64,
    /// `Sideways` needs annualized volatility below this.
    pub v_low: f64,
}

impl Default for TrendThresholds {
    fn default() -> Self {
        Self {
            up: 0.20,
            down: 0.20,
            side: 0.10,
            r_min: 0.30,
            v_low: 0.40,
        }
    }
}

/// Log-linear fit over a trailing window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    /// Annualized log growth (slope × 365).
    pub growth: f64,
    pub r2: f64,
    /// Annualized volatility of daily simple returns.
    pub vol: f64,
}

impl TrendFit {
    pub fn classify(&self, th: &TrendThresholds) -> TrendClass {
        if self.growth >= th.up && self.r2 >= th.r_min {
            TrendClass::Upward
        } else if self.growth <= -th.down && self.r2 >= th.r_min {
            TrendClass::Declining
        } else if self.growth.abs() < th.side && self.vol < th.v_low {
            TrendClass::Sideways
        } else {
            TrendClass::Volatile
        }
    }
}

pub fn trend_fit(closes: &[f64], window: usize) -> Result<TrendFit> {
    if window < MIN_TREND_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "trend window must be >= {MIN_TREND_WINDOW}, got {window}"
        )));
    }
    if window > closes.len() {
        return Err(Error::TooShort {
            needed: window,
            got: closes.len(),
        });
    }
    let tail = &closes[closes.len() - window..];
    let y: Vec<f64> = tail.iter().map(|c| c.ln()).collect();
    let n = window as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (i, yi) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    // A flat line is fitted perfectly.
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    let vol = sample_std(&simple_returns(tail)?) * DAYS_PER_YEAR.sqrt();
    Ok(TrendFit {
        growth: slope * DAYS_PER_YEAR,
        r2,
        vol,
    })
}

pub fn classify_closes(closes: &[f64], window: usize, thresholds: &TrendThresholds) -> Result<TrendClass> {
    Ok(trend_fit(closes, window)?.classify(thresholds))
}

pub fn classify_trend(series: &PriceSeries, window: usize, thresholds: &TrendThresholds) -> Result<TrendClass> {
    classify_closes(&series.closes(), window, thresholds)
}

/// True when trailing annualized return volatility is below 2%.
pub fn is_pegged(closes: &[f64]) -> Result<bool> {
    if closes.len() < MIN_PEG_BARS {
        return Err(Error::TooShort {
            needed: MIN_PEG_BARS,
            got: closes.len(),
        });
    }
    let tail = &closes[closes.len().saturating_sub(PEG_LOOKBACK + 1)..];
    let vol = sample_std(&simple_returns(tail)?) * DAYS_PER_YEAR.sqrt();
    Ok(vol < PEG_VOL_CEILING)
}

pub fn filter_pegged(series: &PriceSeries) -> Result<bool> {
    is_pegged(&series.closes())
}

/// 1-based ranks by descending value, ties broken by symbol.
fn ranks(metas: &[AssetMeta], key: impl Fn(&AssetMeta) -> f64) -> HashMap<&str, usize> {
    let mut order: Vec<&AssetMeta> = metas.iter().collect();
    order.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.symbol.cmp(&b.symbol)));
    order
        .into_iter()
        .enumerate()
        .map(|(i, m)| (m.symbol.as_str(), i + 1))
        .collect()
}

fn check_metas(metas: &[AssetMeta]) -> Result<()> {
    if metas.is_empty() {
        return Err(Error::InvalidArgument("empty meta list".into()));
    }
    let mut seen = BTreeSet::new();
    for m in metas {
        if !seen.insert(m.symbol.as_str()) {
            return Err(Error::DuplicateSymbol(m.symbol.clone()));
        }
    }
    Ok(())
}

/// Symbols ranked within `top_n` by both market cap and 24h volume.
pub fn rank_screen(metas: &[AssetMeta], top_n: usize) -> Result<BTreeSet<String>> {
    if top_n < 1 {
        return Err(Error::InvalidArgument("top_n must be >= 1".into()));
    }
    check_metas(metas)?;
    let cap = ranks(metas, |m| m.market_cap_usd);
    let vol = ranks(metas, |m| m.volume_24h_usd);
    Ok(metas
        .iter()
        .filter(|m| cap[m.symbol.as_str()] <= top_n && vol[m.symbol.as_str()] <= top_n)
        .map(|m| m.symbol.clone())
        .collect())
}

pub fn load_metas(path: impl AsRef<Path>) -> Result<Vec<AssetMeta>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metas(&text)
}

pub fn parse_metas(text: &str) -> Result<Vec<AssetMeta>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow { row: 1, msg: e.to_string() })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != META_HEADER {
        return Err(Error::BadHeader {
            expected: META_HEADER.into(),
            found: header,
        });
    }
    let mut metas = Vec::new();
    for (i, rec) in reader.deserialize::<AssetMeta>().enumerate() {
        let row = i + 2;
        let meta = rec.map_err(|e| Error::MalformedRow { row, msg: e.to_string() })?;
        if !(meta.market_cap_usd >= 0.0) || !(meta.volume_24h_usd >= 0.0) {
            return Err(Error::MalformedRow {
                row,
                msg: "negative market cap or volume".into(),
            });
        }
        metas.push(meta);
    }
    if metas.is_empty() {
        return Err(Error::InvalidArgument("meta file has no rows".into()));
    }
    check_metas(&metas)?;
    Ok(metas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenConfig {
    pub top_n: usize,
    /// Symbols admitted past the rank screen; they still face trend and peg checks.
    pub include_list: Vec<String>,
    pub window: usize,
    pub thresholds: TrendThresholds,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            top_n: 10,
            include_list: Vec::new(),
            window: 90,
            thresholds: TrendThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseEntry {
    pub symbol: String,
    pub cap_rank: Option<usize>,
    pub vol_rank: Option<usize>,
    pub trend: Option<TrendClass>,
    pub pegged: bool,
    pub admitted: bool,
    /// Empty when admitted; otherwise names the first rule that failed.
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseReport {
    pub entries: Vec<UniverseEntry>,
}

impl UniverseReport {
    pub fn admitted(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.admitted)
            .map(|e| e.symbol.clone())
            .collect()
    }
}

/// Screens every meta symbol plus the include list.
///
/// Rules in order: rank screen (or include list), price data present, not
/// pegged, trend class upward or volatile.
pub fn select_universe(metas: &[AssetMeta], panel: &AlignedPanel, config: &ScreenConfig) -> Result<UniverseReport> {
    let passed = rank_screen(metas, config.top_n)?;
    let cap = ranks(metas, |m| m.market_cap_usd);
    let vol = ranks(metas, |m| m.volume_24h_usd);
    let known: BTreeSet<&str> = metas.iter().map(|m| m.symbol.as_str()).collect();
    let included: BTreeSet<&str> = config.include_list.iter().map(String::as_str).collect();

    for s in &config.include_list {
        if panel.symbol_index(s).is_err() {
            return Err(Error::MissingPriceData(s.clone()));
        }
    }
    for s in panel.symbols() {
        if !known.contains(s.as_str()) && !included.contains(s.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "{s} has price data but no meta entry and is not on the include list"
            )));
        }
    }

    let mut candidates: Vec<&str> = metas.iter().map(|m| m.symbol.as_str()).collect();
    for s in &config.include_list {
        if !known.contains(s.as_str()) && !candidates.contains(&s.as_str()) {
            candidates.push(s);
        }
    }

    let mut entries = Vec::with_capacity(candidates.len());
    for sym in candidates {
        let (trend, pegged) = match panel.closes_of(sym) {
            Ok(closes) => (
                Some(classify_closes(closes, config.window, &config.thresholds)?),
                is_pegged(closes)?,
            ),
            Err(_) => (None, false),
        };
        let reason = if !passed.contains(sym) && !included.contains(sym) {
            format!("rank: outside top {} by market cap and volume", config.top_n)
        } else if trend.is_none() {
            "no price data".to_string()
        } else if pegged {
            "pegged".to_string()
        } else if let Some(t) = trend.filter(|t| !t.is_tradeable()) {
            format!("trend: {t}")
        } else {
            String::new()
        };
        entries.push(UniverseEntry {
            symbol: sym.to_string(),
            cap_rank: cap.get(sym).copied(),
            vol_rank: vol.get(sym).copied(),
            trend,
            pegged,
            admitted: reason.is_empty(),
            reason,
        });
    }
    Ok(UniverseReport { entries })
}

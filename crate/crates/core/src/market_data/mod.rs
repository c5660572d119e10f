//! Daily OHLCV series: loading, validation, alignment and synthesis.
//!
//! Everything downstream reads prices through [`AlignedPanel`], which holds
//! closes for a fixed symbol set over the dates every input series shares.

mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{
    gbm_closes, mean_reverting_closes, synth_generate, synth_series, Scenario, CRASH_DAILY_RETURN,
    CRASH_DAYS, REGIME_BLOCK_DAYS,
};

pub const CSV_HEADER: &str = "date,open,high,low,close,volume";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    /// Checks the OHLCV invariants; `row` is only used for error reporting.
    pub fn validate(&self, row: usize) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite()) || !self.volume.is_finite() {
            return Err(Error::MalformedRow {
                row,
                msg: "non-finite value".into(),
            });
        }
        if prices.iter().any(|&p| p <= 0.0) {
            return Err(Error::NonPositivePrice { row });
        }
        if self.volume < 0.0 {
            return Err(Error::InconsistentBar {
                row,
                msg: "negative volume".into(),
            });
        }
        if self.high < self.open.max(self.close) {
            return Err(Error::InconsistentBar {
                row,
                msg: "high below open/close".into(),
            });
        }
        if self.low > self.open.min(self.close) {
            return Err(Error::InconsistentBar {
                row,
                msg: "low above open/close".into(),
            });
        }
        Ok(())
    }
}

/// Validated daily bars for one symbol, strictly increasing in date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    symbol: String,
    bars: Vec<Bar>,
}

impl PriceSeries {
    /// Builds a series, checking every bar and the date ordering. Row numbers in
    /// errors count the CSV header as row 1.
    pub fn new(symbol: impl Into<String>, bars: Vec<Bar>) -> Result<Self> {
        if bars.is_empty() {
            return Err(Error::NoBars);
        }
        for (i, bar) in bars.iter().enumerate() {
            let row = i + 2;
            bar.validate(row)?;
            if i > 0 {
                let prev = bars[i - 1].date;
                if bar.date == prev {
                    return Err(Error::DuplicateDate { row });
                }
                if bar.date < prev {
                    return Err(Error::UnsortedDates { row });
                }
            }
        }
        Ok(Self {
            symbol: symbol.into(),
            bars,
        })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    /// Renders the series in canonical CSV form.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.bars.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for b in &self.bars {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b.date.format(DATE_FORMAT),
                b.open,
                b.high,
                b.low,
                b.close,
                b.volume
            ));
        }
        out
    }
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, row: usize) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| Error::MalformedRow {
        row,
        msg: format!("missing column {}", idx + 1),
    })?;
    raw.trim().parse().map_err(|_| Error::MalformedRow {
        row,
        msg: format!("cannot parse `{raw}`"),
    })
}

/// Parses canonical CSV text into a validated series.
pub fn parse_series(text: &str, symbol: &str) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 1,
            msg: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header.is_empty() {
        return Err(Error::NoBars);
    }
    if header != CSV_HEADER {
        return Err(Error::BadHeader {
            expected: CSV_HEADER.into(),
            found: header,
        });
    }

    let mut bars = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != 6 {
            return Err(Error::MalformedRow {
                row,
                msg: format!("expected 6 columns, found {}", record.len()),
            });
        }
        let date_raw = record.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(date_raw.trim(), DATE_FORMAT).map_err(|_| {
            Error::MalformedRow {
                row,
                msg: format!("bad date `{date_raw}`"),
            }
        })?;
        bars.push(Bar {
            date,
            open: parse_field(&record, 1, row)?,
            high: parse_field(&record, 2, row)?,
            low: parse_field(&record, 3, row)?,
            close: parse_field(&record, 4, row)?,
            volume: parse_field(&record, 5, row)?,
        });
    }
    PriceSeries::new(symbol, bars)
}

/// Loads `date,open,high,low,close,volume` CSV from disk.
pub fn load_series(path: impl AsRef<Path>, symbol: &str) -> Result<PriceSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series(&text, symbol)
}

pub fn write_csv(series: &PriceSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, series.to_csv_string()).map_err(|e| Error::io(path, e))
}

/// Loads `<dir>/<SYMBOL>.csv` for each symbol.
pub fn load_dir(dir: impl AsRef<Path>, symbols: &[String]) -> Result<Vec<PriceSeries>> {
    symbols
        .iter()
        .map(|s| load_series(dir.as_ref().join(format!("{s}.csv")), s))
        .collect()
}

/// `r_t = closes[t+1] / closes[t] - 1`.
pub fn simple_returns(closes: &[f64]) -> Result<Vec<f64>> {
    if closes.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: closes.len(),
        });
    }
    Ok(closes.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

/// Close and return matrix over a shared date axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPanel {
    dates: Vec<NaiveDate>,
    symbols: Vec<String>,
    closes: Vec<Vec<f64>>,
    returns: Vec<Vec<f64>>,
}

impl AlignedPanel {
    /// Builds a panel from per-symbol closes over `dates`; returns are derived.
    pub fn from_closes(dates: Vec<NaiveDate>, symbols: Vec<String>, closes: Vec<Vec<f64>>) -> Result<Self> {
        if dates.len() < 2 {
            return Err(Error::TooFewSharedDates(dates.len()));
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("panel dates must be strictly increasing".into()));
        }
        if symbols.len() != closes.len() {
            return Err(Error::InvalidArgument("symbol/close count mismatch".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &symbols {
            if !seen.insert(s.as_str()) {
                return Err(Error::DuplicateSymbol(s.clone()));
            }
        }
        for (s, c) in symbols.iter().zip(&closes) {
            if c.len() != dates.len() {
                return Err(Error::InvalidArgument(format!(
                    "{s}: {} closes for {} dates",
                    c.len(),
                    dates.len()
                )));
            }
            if c.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return Err(Error::InvalidArgument(format!("{s}: non-positive close")));
            }
        }
        let returns = closes
            .iter()
            .map(|c| simple_returns(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dates,
            symbols,
            closes,
            returns,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn closes(&self) -> &[Vec<f64>] {
        &self.closes
    }

    /// Per-symbol returns; `returns()[i][t]` is the move from date `t` to `t + 1`.
    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn symbol_index(&self, symbol: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn closes_of(&self, symbol: &str) -> Result<&[f64]> {
        Ok(&self.closes[self.symbol_index(symbol)?])
    }

    /// Sub-panel with the given symbols, in the given order.
    pub fn select(&self, symbols: &[String]) -> Result<Self> {
        let closes = symbols
            .iter()
            .map(|s| self.closes_of(s).map(|c| c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_closes(self.dates.clone(), symbols.to_vec(), closes)
    }

    /// Returns a copy with one close replaced; returns are re-derived.
    pub fn with_close(&self, symbol_idx: usize, date_idx: usize, close: f64) -> Result<Self> {
        let mut closes = self.closes.clone();
        closes[symbol_idx][date_idx] = close;
        Self::from_closes(self.dates.clone(), self.symbols.clone(), closes)
    }
}

/// Inner-joins series on their shared dates. Symbol order follows the input.
pub fn align(series_list: &[PriceSeries]) -> Result<AlignedPanel> {
    let first = series_list
        .first()
        .ok_or_else(|| Error::InvalidArgument("align needs at least one series".into()))?;
    let mut shared: BTreeSet<NaiveDate> = first.bars.iter().map(|b| b.date).collect();
    for s in &series_list[1..] {
        let dates: BTreeSet<NaiveDate> = s.bars.iter().map(|b| b.date).collect();
        shared = shared.intersection(&dates).copied().collect();
    }
    if shared.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    if shared.len() < 2 {
        return Err(Error::TooFewSharedDates(shared.len()));
    }
    let dates: Vec<NaiveDate> = shared.into_iter().collect();
    let closes = series_list
        .iter()
        .map(|s| {
            // Both sides are sorted, so a merge walk suffices.
            let mut out = Vec::with_capacity(dates.len());
            let mut bars = s.bars.iter().peekable();
            for d in &dates {
                while bars.next_if(|b| b.date < *d).is_some() {}
                let b = bars.next().expect("shared date present in every series");
                debug_assert_eq!(b.date, *d);
                out.push(b.close);
            }
            out
        })
        .collect();
    let symbols = series_list.iter().map(|s| s.symbol.clone()).collect();
    AlignedPanel::from_closes(dates, symbols, closes)
}

//! Run configuration, the backtest pipeline and text rendering.
//!
//! JSON carries fractions; percent formatting only happens in text tables.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::allocation::AllocConfig;
use crate::engine::{run_backtest, run_baseline, BacktestConfig, BacktestReport, Benchmark, ComparisonRow, Strategy};
use crate::error::{Error, Result};
use crate::market_data::{align, load_series, AlignedPanel, PriceSeries};
use crate::metrics::MetricsConfig;
use crate::risk::RiskConfig;
use crate::tuner::TuneResult;
use crate::universe::{load_metas, select_universe, ScreenConfig, TrendThresholds, UniverseReport};

pub const TABLE_COLUMNS: [&str; 9] = ["Methods", "Sharpe", "Sortino", "ROI", "MDD", "Ret/DD", "Alpha", "Beta", "Turnover"];
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.txt";
pub const TUNE_FILE: &str = "tune.json";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum UniverseSpec {
    /// Screen `meta_file` symbols plus the include list.
    #[default]
    Auto,
    Symbols(Vec<String>),
}

impl Serialize for UniverseSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            UniverseSpec::Auto => s.serialize_str("auto"),
            UniverseSpec::Symbols(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for UniverseSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            List(Vec<String>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "auto" => Ok(UniverseSpec::Auto),
            Raw::Word(w) => Err(de::Error::custom(format!("universe must be \"auto\" or a symbol list, got \"{w}\""))),
            Raw::List(v) if v.is_empty() => Err(de::Error::custom("universe symbol list is empty")),
            Raw::List(v) => Ok(UniverseSpec::Symbols(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `<SYMBOL>.csv` files.
    pub data_dir: PathBuf,
    #[serde(default)]
    pub meta_file: Option<PathBuf>,
    #[serde(default)]
    pub universe: UniverseSpec,
    #[serde(default)]
    pub include_list: Vec<String>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_trend_window")]
    pub trend_window: usize,
    #[serde(default)]
    pub trend_thresholds: TrendThresholds,
    #[serde(default)]
    pub start: Option<NaiveDate>,
    #[serde(default)]
    pub end: Option<NaiveDate>,
    #[serde(default)]
    pub alloc: AllocConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default = "default_fee_bps")]
    pub fee_bps: f64,
    #[serde(default = "default_benchmark")]
    pub benchmark: Benchmark,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default = "default_true")]
    pub baselines: bool,
    /// Symbol for the single-asset baseline; the first selected symbol if unset.
    #[serde(default)]
    pub single_asset: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_top_n() -> usize {
    ScreenConfig::default().top_n
}

fn default_trend_window() -> usize {
    ScreenConfig::default().window
}

fn default_fee_bps() -> f64 {
    4.0
}

fn default_benchmark() -> Benchmark {
    Benchmark::EqualWeight
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(data_dir: impl Into<PathBuf>, universe: UniverseSpec) -> Self {
        Self {
            data_dir: data_dir.into(),
            meta_file: None,
            universe,
            include_list: Vec::new(),
            top_n: default_top_n(),
            trend_window: default_trend_window(),
            trend_thresholds: TrendThresholds::default(),
            start: None,
            end: None,
            alloc: AllocConfig::default(),
            risk: RiskConfig::default(),
            fee_bps: default_fee_bps(),
            benchmark: default_benchmark(),
            metrics: MetricsConfig::default(),
            baselines: true,
            single_asset: None,
            out_dir: None,
        }
    }

    /// Parses JSON and resolves relative paths against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::json("run config", e))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        cfg.data_dir = base_dir.join(&cfg.data_dir);
        cfg.meta_file = cfg.meta_file.as_deref().map(resolve);
        cfg.out_dir = cfg.out_dir.as_deref().map(resolve);
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn check_paths(&self) -> Result<()> {
        if !self.data_dir.is_dir() {
            return Err(Error::io(
                &self.data_dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
            ));
        }
        if let Some(m) = &self.meta_file {
            if !m.is_file() {
                return Err(Error::io(m, std::io::Error::new(std::io::ErrorKind::NotFound, "meta file not found")));
            }
        }
        if self.universe == UniverseSpec::Auto && self.meta_file.is_none() {
            return Err(Error::InvalidConfig("universe \"auto\" needs meta_file".into()));
        }
        Ok(())
    }

    pub fn screen_config(&self) -> ScreenConfig {
        ScreenConfig {
            top_n: self.top_n,
            include_list: self.include_list.clone(),
            window: self.trend_window,
            thresholds: self.trend_thresholds,
        }
    }

    pub fn backtest_config(&self, symbols: Vec<String>) -> BacktestConfig {
        BacktestConfig {
            symbols,
            start: self.start,
            end: self.end,
            fee_bps: self.fee_bps,
            alloc: self.alloc,
            risk: self.risk.clone(),
            benchmark: self.benchmark.clone(),
            initial_capital: 1.0,
            metrics: self.metrics,
        }
    }
}

fn load_symbols(dir: &Path, symbols: &[String]) -> Result<Vec<PriceSeries>> {
    symbols
        .iter()
        .map(|s| load_series(dir.join(format!("{s}.csv")), s))
        .collect()
}

/// The screened panel; `universe` is set when selection ran.
pub struct ResolvedUniverse {
    pub panel: AlignedPanel,
    pub universe: Option<UniverseReport>,
}

/// Screens the universe against the full loaded panel; trend and peg checks
/// therefore see the whole history in `data_dir`.
pub fn screen(cfg: &RunConfig) -> Result<(AlignedPanel, UniverseReport)> {
    let meta_path = cfg
        .meta_file
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("universe screening needs meta_file".into()))?;
    let metas = load_metas(meta_path)?;
    let mut wanted: Vec<String> = metas.iter().map(|m| m.symbol.clone()).collect();
    for s in &cfg.include_list {
        if !wanted.contains(s) {
            wanted.push(s.clone());
        }
    }
    for s in &cfg.include_list {
        if !cfg.data_dir.join(format!("{s}.csv")).is_file() {
            return Err(Error::MissingPriceData(s.clone()));
        }
    }
    let present: Vec<String> = wanted
        .into_iter()
        .filter(|s| cfg.data_dir.join(format!("{s}.csv")).is_file())
        .collect();
    let panel = align(&load_symbols(&cfg.data_dir, &present)?)?;
    let report = select_universe(&metas, &panel, &cfg.screen_config())?;
    Ok((panel, report))
}

pub fn resolve_universe(cfg: &RunConfig) -> Result<ResolvedUniverse> {
    match &cfg.universe {
        UniverseSpec::Symbols(syms) => Ok(ResolvedUniverse {
            panel: align(&load_symbols(&cfg.data_dir, syms)?)?,
            universe: None,
        }),
        UniverseSpec::Auto => {
            let (panel, report) = screen(cfg)?;
            let admitted = report.admitted();
            if admitted.is_empty() {
                return Err(Error::InvalidConfig("universe screening admitted no symbols".into()));
            }
            Ok(ResolvedUniverse {
                panel: panel.select(&admitted)?,
                universe: Some(report),
            })
        }
    }
}

/// Everything `report.json` holds; enough to re-render the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Effective run config with defaults materialized.
    pub config: RunConfig,
    pub symbols: Vec<String>,
    pub universe: Option<UniverseReport>,
    pub rows: Vec<ComparisonRow>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run report serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn table(&self) -> String {
        render_table(&self.rows)
    }
}

pub struct RunOutput {
    pub report: RunReport,
    /// `(slug, report)`; the managed strategy comes first with slug `hybrid`.
    pub backtests: Vec<(String, BacktestReport)>,
}

pub fn strategy_slug(s: &Strategy) -> String {
    match s {
        Strategy::Hybrid => "hybrid".into(),
        Strategy::BuyAndHold => "buy_and_hold".into(),
        Strategy::EqualWeightDaily => "equal_weight_daily".into(),
        Strategy::SingleAsset(sym) => format!("single_asset_{}", sym.to_lowercase()),
    }
}

fn row_name(r: &BacktestReport) -> String {
    match r.strategy {
        Strategy::Hybrid if !r.config_echo.risk.enabled => "Hybrid (risk off)".into(),
        ref s => s.to_string(),
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let resolved = resolve_universe(cfg)?;
    let symbols = resolved.panel.symbols().to_vec();
    let mut effective = cfg.clone();
    if cfg.baselines && effective.single_asset.is_none() {
        effective.single_asset = Some(symbols[0].clone());
    }
    let bt_cfg = effective.backtest_config(symbols.clone());
    let mut backtests = vec![("hybrid".to_string(), run_backtest(&resolved.panel, &bt_cfg)?)];
    if cfg.baselines {
        let single = effective.single_asset.clone().expect("set above");
        if !symbols.contains(&single) {
            return Err(Error::UnknownSymbol(single));
        }
        for kind in [Strategy::BuyAndHold, Strategy::EqualWeightDaily, Strategy::SingleAsset(single)] {
            let r = run_baseline(&resolved.panel, &kind, &bt_cfg)?;
            backtests.push((strategy_slug(&kind), r));
        }
    }
    let rows = backtests
        .iter()
        .map(|(_, r)| ComparisonRow {
            name: row_name(r),
            metrics: r.metrics.clone(),
        })
        .collect();
    Ok(RunOutput {
        report: RunReport {
            config: effective,
            symbols,
            universe: resolved.universe,
            rows,
        },
        backtests,
    })
}

/// Writes report.json, table.txt, the managed strategy's CSVs at the top
/// level and each baseline's CSVs under `baselines/<slug>/`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (slug, r) in &out.backtests {
        let sub = if slug == "hybrid" { dir.to_path_buf() } else { dir.join("baselines").join(slug) };
        r.write_csvs(&sub)?;
    }
    write_file(&dir.join(REPORT_FILE), &out.report.to_json())?;
    write_file(&dir.join(TABLE_FILE), &out.report.table())
}

pub fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Re-renders the table of an existing run directory.
pub fn rerender(dir: &Path) -> Result<String> {
    Ok(RunReport::load(dir.join(REPORT_FILE))?.table())
}

pub fn fmt_ratio(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => unsign_zero(format!("{x:.2}")),
        _ => "n/a".into(),
    }
}

/// Values that round to zero print without a sign.
fn unsign_zero(s: String) -> String {
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| matches!(c, '0' | '.' | '%')) => rest.to_string(),
        _ => s,
    }
}

/// Fraction rendered as a percentage with one decimal, e.g. 0.078 → "7.8%".
pub fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => unsign_zero(format!("{:.1}%", x * 100.0)),
        _ => "n/a".into(),
    }
}

fn render_grid(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}", w = *w))
            .collect();
        padded.join(" | ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-") + "\n"));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

pub fn table_cells(row: &ComparisonRow) -> Vec<String> {
    let m = &row.metrics;
    vec![
        row.name.clone(),
        fmt_ratio(m.sharpe),
        fmt_ratio(m.sortino),
        fmt_pct(Some(m.roi)),
        fmt_pct(Some(m.mdd)),
        fmt_ratio(m.ret_dd),
        fmt_ratio(m.alpha),
        fmt_ratio(m.beta),
        fmt_pct(Some(m.turnover)),
    ]
}

pub fn render_table(rows: &[ComparisonRow]) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(table_cells).collect();
    render_grid(&TABLE_COLUMNS, &cells)
}

pub fn render_tune_table(result: &TuneResult, top: usize) -> String {
    let header = ["Rank", "Thresholds", "Multipliers", "Cooldown", "Objective", "Sharpe", "ROI", "MDD", "Ret/DD"];
    let rows: Vec<Vec<String>> = result
        .entries
        .iter()
        .take(top)
        .enumerate()
        .map(|(i, e)| {
            let [t1, t2, t3] = e.config.thresholds;
            let [m1, m2] = e.config.multipliers;
            vec![
                (i + 1).to_string(),
                format!("{}/{}/{}", fmt_pct(Some(t1)), fmt_pct(Some(t2)), fmt_pct(Some(t3))),
                format!("{m1:.2}/{m2:.2}/0.00"),
                e.config.cooldown_days.to_string(),
                format!("{} {}", result.objective, e.objective.map_or("n/a".into(), |v| format!("{v:.4}"))),
                fmt_ratio(e.metrics.sharpe),
                fmt_pct(Some(e.metrics.roi)),
                fmt_pct(Some(e.metrics.mdd)),
                fmt_ratio(e.metrics.ret_dd),
            ]
        })
        .collect();
    render_grid(&header, &rows)
}

/// Human-readable screening summary.
pub fn render_universe(report: &UniverseReport) -> String {
    let header = ["Symbol", "Cap rank", "Vol rank", "Trend", "Pegged", "Verdict"];
    let opt = |v: Option<usize>| v.map_or("-".to_string(), |x| x.to_string());
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            vec![
                e.symbol.clone(),
                opt(e.cap_rank),
                opt(e.vol_rank),
                e.trend.map_or("-".into(), |t| t.to_string()),
                if e.pegged { "yes".into() } else { "no".into() },
                if e.admitted { "admitted".into() } else { format!("rejected ({})", e.reason) },
            ]
        })
        .collect();
    let mut out = render_grid(&header, &rows);
    out.push_str(&format!("admitted: {}\n", report.admitted().join(", ")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{synth_series, write_csv, Scenario};
    use crate::metrics::MetricsReport;

    fn metrics() -> MetricsReport {
        MetricsReport {
            roi: 0.1668,
            sharpe: Some(3.0249),
            sortino: None,
            mdd: 0.078,
            ret_dd: Some(2.1385),
            alpha: Some(0.5),
            beta: Some(0.91),
            vol: 0.4,
            turnover: 0.031,
            win_rate: 0.5,
            win_positions: 1,
            total_positions: 2,
        }
    }

    fn synth_dir(assets: usize) -> (tempfile::TempDir, Vec<String>) {
        let dir = tempfile::tempdir().unwrap();
        let series = synth_series(Scenario::Bull, assets, 150, 9).unwrap();
        for s in &series {
            write_csv(s, dir.path().join(format!("{}.csv", s.symbol()))).unwrap();
        }
        (dir, series.iter().map(|s| s.symbol().to_string()).collect())
    }

    #[test]
    fn formatting() {
        assert_eq!(fmt_pct(Some(0.078)), "7.8%");
        assert_eq!(fmt_pct(Some(0.16683)), "16.7%");
        assert_eq!(fmt_ratio(Some(3.0249)), "3.02");
        assert_eq!(fmt_ratio(None), "n/a");
        assert_eq!(fmt_ratio(Some(-0.001)), "0.00");
        assert_eq!(fmt_pct(Some(-0.0001)), "0.0%");
        assert_eq!(fmt_pct(Some(-0.5)), "-50.0%");
        assert_eq!(fmt_ratio(Some(f64::NAN)), "n/a");
    }

    #[test]
    fn table_header_and_row() {
        let t = render_table(&[ComparisonRow { name: "X".into(), metrics: metrics() }]);
        let lines: Vec<&str> = t.lines().collect();
        let header: Vec<&str> = lines[0].split('|').map(str::trim).collect();
        assert_eq!(header, TABLE_COLUMNS);
        let row: Vec<&str> = lines[2].split('|').map(str::trim).collect();
        assert_eq!(row, ["X", "3.02", "n/a", "16.7%", "7.8%", "2.14", "0.50", "0.91", "3.1%"]);
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn config_rejects_unknown_keys_and_missing_paths() {
        let (dir, _) = synth_dir(1);
        let base = dir.path();
        assert!(RunConfig::from_json(r#"{"data_dir": ".", "universe": ["SYN0"], "fee": 3}"#, base).is_err());
        let err = RunConfig::from_json(r#"{"data_dir": "nope", "universe": ["SYN0"]}"#, base).unwrap_err();
        assert!(err.to_string().contains("nope"));
        assert!(RunConfig::from_json(r#"{"data_dir": ".", "universe": "all"}"#, base).is_err());
        assert!(RunConfig::from_json(r#"{"data_dir": "."}"#, base).is_err());
        let ok = RunConfig::from_json(r#"{"data_dir": ".", "universe": ["SYN0"]}"#, base).unwrap();
        assert_eq!(ok.data_dir, base.join("."));
        assert_eq!(ok.fee_bps, 4.0);
    }

    #[test]
    fn run_with_baselines_round_trips() {
        let (dir, syms) = synth_dir(3);
        let cfg = RunConfig::new(dir.path(), UniverseSpec::Symbols(syms));
        let out = run(&cfg).unwrap();
        assert_eq!(out.report.rows.len(), 4);
        assert_eq!(out.report.config.single_asset.as_deref(), Some("SYN0"));
        let run_dir = dir.path().join("run");
        write_run(&out, &run_dir).unwrap();
        let table = fs::read_to_string(run_dir.join(TABLE_FILE)).unwrap();
        assert_eq!(rerender(&run_dir).unwrap(), table);
        assert!(run_dir.join("baselines/buy_and_hold/equity.csv").is_file());
        assert!(run_dir.join("weights.csv").is_file());
        let back = RunReport::load(run_dir.join(REPORT_FILE)).unwrap();
        assert_eq!(back, out.report);
    }

    #[test]
    fn risk_off_is_echoed() {
        let (dir, syms) = synth_dir(2);
        let mut cfg = RunConfig::new(dir.path(), UniverseSpec::Symbols(syms));
        cfg.risk.enabled = false;
        cfg.baselines = false;
        let out = run(&cfg).unwrap();
        assert_eq!(out.report.rows.len(), 1);
        assert_eq!(out.report.rows[0].name, "Hybrid (risk off)");
        assert!(out.report.to_json().contains("\"enabled\": false"));
    }

    #[test]
    fn missing_symbol_file_names_path() {
        let (dir, _) = synth_dir(1);
        let cfg = RunConfig::new(dir.path(), UniverseSpec::Symbols(vec!["ZZZ".into()]));
        let err = run(&cfg).err().unwrap();
        assert!(err.to_string().contains("ZZZ.csv"), "{err}");
    }
}

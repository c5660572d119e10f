//! Daily kline downloader for a public futures REST endpoint.
//!
//! The network sits behind [`Transport`] so tests replay recorded responses.
//! The requested range is half-open: bars whose open date falls in
//! `[start, end)` are kept.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, NaiveTime};
use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::market_data::{write_csv, Bar, PriceSeries};

pub const DEFAULT_BASE_URL: &str = "https://fapi.binance.com";
pub const KLINES_PATH: &str = "/fapi/v1/klines";
pub const INTERVAL: &str = "1d";
pub const MAX_PAGE: usize = 1000;
const DAY_MS: i64 = 86_400_000;
const UNKNOWN_SYMBOL_CODE: i64 = -1121;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self { status: 200, body: body.into() }
    }
}

pub type Query = [(&'static str, String)];

pub trait Transport: Send + Sync {
    fn get(&self, url: &str, query: &Query) -> Result<HttpResponse>;
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested delays without waiting.
#[derive(Default)]
pub struct RecordingSleeper {
    pub delays: Mutex<Vec<Duration>>,
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.delays.lock().unwrap().push(d);
    }
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, query: &Query) -> Result<HttpResponse> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(k, v);
        }
        match req.call() {
            Ok(resp) => {
                let status = resp.status();
                let body = resp.into_string().map_err(|e| Error::Http(e.to_string()))?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => Ok(HttpResponse {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(e) => Err(Error::Http(e.to_string())),
        }
    }
}

/// Serves `<dir>/<SYMBOL>.json`, a full kline array, filtered per request
/// the way the live endpoint filters.
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn fixture_path(&self, symbol: &str) -> PathBuf {
        self.dir.join(format!("{symbol}.json"))
    }
}

fn query_value<'a>(query: &'a Query, key: &str) -> Option<&'a str> {
    query.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
}

impl Transport for FixtureTransport {
    fn get(&self, _url: &str, query: &Query) -> Result<HttpResponse> {
        let symbol = query_value(query, "symbol").unwrap_or_default();
        let path = self.fixture_path(symbol);
        if !path.is_file() {
            return Err(Error::OfflineNoFixture(symbol.to_string()));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let rows: Vec<Value> = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let num = |k: &str, default: i64| query_value(query, k).and_then(|v| v.parse().ok()).unwrap_or(default);
        let (lo, hi) = (num("startTime", i64::MIN), num("endTime", i64::MAX));
        let limit = num("limit", 500) as usize;
        let page: Vec<&Value> = rows
            .iter()
            .filter(|r| r.get(0).and_then(Value::as_i64).is_some_and(|t| t >= lo && t <= hi))
            .take(limit)
            .collect();
        let body = serde_json::to_string(&page).map_err(|e| Error::json("fixture page", e))?;
        Ok(HttpResponse::ok(body))
    }
}

/// Replays a fixed response sequence and records every query.
#[derive(Default)]
pub struct ScriptedTransport {
    responses: Mutex<VecDeque<HttpResponse>>,
    pub calls: Mutex<Vec<Vec<(&'static str, String)>>>,
}

impl ScriptedTransport {
    pub fn new(responses: Vec<HttpResponse>) -> Self {
        Self {
            responses: Mutex::new(responses.into()),
            calls: Mutex::default(),
        }
    }
}

impl Transport for ScriptedTransport {
    fn get(&self, _url: &str, query: &Query) -> Result<HttpResponse> {
        self.calls.lock().unwrap().push(query.to_vec());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| Error::Http("script exhausted".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchRequest {
    pub symbol: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub out_dir: PathBuf,
}

impl FetchRequest {
    pub fn validate(&self) -> Result<()> {
        if self.symbol.is_empty() || !self.symbol.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(Error::InvalidArgument(format!("bad symbol `{}`", self.symbol)));
        }
        if self.start >= self.end {
            return Err(Error::InvalidArgument(format!(
                "start {} must be before end {}",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn out_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.csv", self.symbol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
        }
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || status == 418 || (500..600).contains(&status)
}

fn day_ms(d: NaiveDate) -> i64 {
    d.and_time(NaiveTime::MIN).and_utc().timestamp_millis()
}

fn field_f64(v: &Value) -> Option<f64> {
    match v {
        Value::String(s) => s.parse().ok(),
        Value::Number(n) => n.as_f64(),
        _ => None,
    }
}

/// Maps one kline array to `(open_time_ms, bar)`; volume is the quote volume.
fn parse_kline(row: &Value) -> Result<(i64, Bar)> {
    let bad = |msg: &str| Error::Http(format!("malformed kline: {msg}"));
    let arr = row.as_array().ok_or_else(|| bad("not an array"))?;
    if arr.len() < 8 {
        return Err(bad("fewer than 8 fields"));
    }
    let t = arr[0].as_i64().ok_or_else(|| bad("open time"))?;
    let date = DateTime::from_timestamp_millis(t).ok_or_else(|| bad("open time"))?.date_naive();
    let f = |i: usize| field_f64(&arr[i]).ok_or_else(|| bad("price field"));
    Ok((
        t,
        Bar {
            date,
            open: f(1)?,
            high: f(2)?,
            low: f(3)?,
            close: f(4)?,
            volume: f(7)?,
        },
    ))
}

/// Encodes bars as the endpoint's kline arrays; used to build fixtures.
pub fn encode_klines(series: &PriceSeries) -> String {
    let rows: Vec<Value> = series
        .bars()
        .iter()
        .map(|b| {
            let t = day_ms(b.date);
            serde_json::json!([
                t,
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                (b.volume / b.close).to_string(),
                t + DAY_MS - 1,
                b.volume.to_string(),
                0,
                "0",
                "0",
                "0"
            ])
        })
        .collect();
    Value::Array(rows).to_string()
}

pub struct KlineClient<T: Transport, S: Sleeper> {
    transport: T,
    sleeper: S,
    pub base_url: String,
    pub retry: RetryPolicy,
    pub page_limit: usize,
}

impl<T: Transport, S: Sleeper> KlineClient<T, S> {
    pub fn new(transport: T, sleeper: S) -> Self {
        Self {
            transport,
            sleeper,
            base_url: DEFAULT_BASE_URL.to_string(),
            retry: RetryPolicy::default(),
            page_limit: MAX_PAGE,
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn sleeper(&self) -> &S {
        &self.sleeper
    }

    fn get_page(&self, symbol: &str, start_ms: i64, end_ms: i64) -> Result<Vec<Value>> {
        let url = format!("{}{}", self.base_url, KLINES_PATH);
        let query = [
            ("symbol", symbol.to_string()),
            ("interval", INTERVAL.to_string()),
            ("startTime", start_ms.to_string()),
            ("endTime", end_ms.to_string()),
            ("limit", self.page_limit.min(MAX_PAGE).to_string()),
        ];
        let mut attempt = 0;
        loop {
            let outcome = self.transport.get(&url, &query);
            let retry_reason = match outcome {
                Ok(resp) if resp.status == 200 => {
                    return serde_json::from_str::<Vec<Value>>(&resp.body)
                        .map_err(|e| Error::json(format!("klines page for {symbol}"), e));
                }
                Ok(resp) if resp.status == 400 && error_code(&resp.body) == Some(UNKNOWN_SYMBOL_CODE) => {
                    return Err(Error::UnknownSymbol(symbol.to_string()));
                }
                Ok(resp) if retryable(resp.status) => format!("status {}", resp.status),
                Ok(resp) => return Err(Error::Http(format!("status {}: {}", resp.status, resp.body.trim()))),
                Err(Error::Http(msg)) => msg,
                Err(e) => return Err(e),
            };
            if attempt >= self.retry.max_retries {
                return Err(Error::Http(format!(
                    "{symbol}: giving up after {} retries ({retry_reason})",
                    attempt
                )));
            }
            let delay = self.retry.base_delay * 2u32.saturating_pow(attempt);
            log::warn!("{symbol}: {retry_reason}, retrying in {delay:?}");
            self.sleeper.sleep(delay);
            attempt += 1;
        }
    }

    /// Downloads `[start, end)` without touching disk.
    pub fn download(&self, req: &FetchRequest) -> Result<PriceSeries> {
        req.validate()?;
        let end_ms = day_ms(req.end) - 1;
        let mut cursor = day_ms(req.start);
        let mut bars: BTreeMap<NaiveDate, Bar> = BTreeMap::new();
        while cursor <= end_ms {
            let page = self.get_page(&req.symbol, cursor, end_ms)?;
            if page.is_empty() {
                break;
            }
            let mut last = cursor;
            for row in &page {
                let (t, bar) = parse_kline(row)?;
                last = last.max(t);
                if bar.date >= req.start && bar.date < req.end {
                    bars.insert(bar.date, bar);
                }
            }
            log::debug!("{}: page of {} bars", req.symbol, page.len());
            if page.len() < self.page_limit.min(MAX_PAGE) {
                break;
            }
            cursor = last + 1;
        }
        if bars.is_empty() {
            return Err(Error::EmptyRange(req.symbol.clone()));
        }
        PriceSeries::new(req.symbol.clone(), bars.into_values().collect())
    }

    /// Downloads and writes `<out_dir>/<SYMBOL>.csv`.
    pub fn fetch_klines(&self, req: &FetchRequest) -> Result<PriceSeries> {
        let series = self.download(req)?;
        persist(&series, &req.out_dir)?;
        Ok(series)
    }

    /// Fetches distinct symbols concurrently; results keep request order.
    pub fn fetch_all(&self, reqs: &[FetchRequest]) -> Vec<Result<PriceSeries>> {
        reqs.par_iter().map(|r| self.fetch_klines(r)).collect()
    }
}

fn error_code(body: &str) -> Option<i64> {
    serde_json::from_str::<Value>(body).ok()?.get("code")?.as_i64()
}

fn persist(series: &PriceSeries, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_csv(series, out_dir.join(format!("{}.csv", series.symbol())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{load_series, synth_series, Scenario};

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn req(symbol: &str, start: &str, end: &str, out: &Path) -> FetchRequest {
        FetchRequest {
            symbol: symbol.into(),
            start: date(start),
            end: date(end),
            out_dir: out.to_path_buf(),
        }
    }

    fn fixture_dir(n_days: usize) -> (tempfile::TempDir, PriceSeries) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = synth_series(Scenario::Bull, 1, n_days, 7).unwrap().remove(0);
        s = PriceSeries::new("BTCUSDT", s.bars().to_vec()).unwrap();
        fs::write(dir.path().join("BTCUSDT.json"), encode_klines(&s)).unwrap();
        (dir, s)
    }

    fn fixture_client(dir: &Path) -> KlineClient<FixtureTransport, RecordingSleeper> {
        KlineClient::new(FixtureTransport::new(dir), RecordingSleeper::default())
    }

    #[test]
    fn three_pages_stitch_to_2500_bars() {
        let (fx, src) = fixture_dir(2600);
        let out = tempfile::tempdir().unwrap();
        let start = src.bars()[0].date;
        let end = start + chrono::Duration::days(2500);
        let r = FetchRequest {
            symbol: "BTCUSDT".into(),
            start,
            end,
            out_dir: out.path().into(),
        };
        let s = fixture_client(fx.path()).fetch_klines(&r).unwrap();
        assert_eq!(s.len(), 2500);
        assert_eq!(s.bars(), &src.bars()[..2500]);
        let reloaded = load_series(r.out_path(), "BTCUSDT").unwrap();
        assert_eq!(reloaded.len(), 2500);
        for w in reloaded.dates().windows(2) {
            assert_eq!(w[1] - w[0], chrono::Duration::days(1));
        }
    }

    #[test]
    fn pages_are_requested_in_order() {
        let (fx, src) = fixture_dir(2600);
        let body = fs::read_to_string(fx.path().join("BTCUSDT.json")).unwrap();
        let all: Vec<Value> = serde_json::from_str(&body).unwrap();
        let page = |a: usize, b: usize| HttpResponse::ok(Value::Array(all[a..b].to_vec()).to_string());
        let t = ScriptedTransport::new(vec![page(0, 1000), page(1000, 2000), page(2000, 2500)]);
        let client = KlineClient::new(t, RecordingSleeper::default());
        let start = src.bars()[0].date;
        let r = FetchRequest {
            symbol: "BTCUSDT".into(),
            start,
            end: start + chrono::Duration::days(2500),
            out_dir: PathBuf::new(),
        };
        assert_eq!(client.download(&r).unwrap().len(), 2500);
        let calls = client.transport().calls.lock().unwrap();
        assert_eq!(calls.len(), 3);
        let starts: Vec<i64> = calls.iter().map(|q| query_value(q, "startTime").unwrap().parse().unwrap()).collect();
        assert_eq!(starts[1], day_ms(src.bars()[999].date) + 1);
        assert!(starts.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(query_value(&calls[0], "limit"), Some("1000"));
        assert_eq!(query_value(&calls[0], "interval"), Some("1d"));
    }

    #[test]
    fn overlapping_pages_are_deduplicated() {
        let (fx, src) = fixture_dir(40);
        let body = fs::read_to_string(fx.path().join("BTCUSDT.json")).unwrap();
        let all: Vec<Value> = serde_json::from_str(&body).unwrap();
        let page = |a: usize, b: usize| HttpResponse::ok(Value::Array(all[a..b].to_vec()).to_string());
        let mut client = KlineClient::new(
            ScriptedTransport::new(vec![page(0, 20), page(15, 35), page(30, 40)]),
            RecordingSleeper::default(),
        );
        client.page_limit = 20;
        let start = src.bars()[0].date;
        let r = FetchRequest {
            symbol: "BTCUSDT".into(),
            start,
            end: start + chrono::Duration::days(40),
            out_dir: PathBuf::new(),
        };
        let s = client.download(&r).unwrap();
        assert_eq!(s.bars(), src.bars());
    }

    #[test]
    fn one_day_range_yields_one_bar() {
        let (fx, src) = fixture_dir(30);
        let d = src.bars()[10].date;
        let out = tempfile::tempdir().unwrap();
        let r = FetchRequest {
            symbol: "BTCUSDT".into(),
            start: d,
            end: d + chrono::Duration::days(1),
            out_dir: out.path().into(),
        };
        let s = fixture_client(fx.path()).fetch_klines(&r).unwrap();
        assert_eq!(s.bars(), &src.bars()[10..11]);
    }

    #[test]
    fn rate_limit_twice_then_success() {
        let (fx, src) = fixture_dir(30);
        let body = fs::read_to_string(fx.path().join("BTCUSDT.json")).unwrap();
        let limited = HttpResponse {
            status: 429,
            body: r#"{"code":-1003,"msg":"Too many requests"}"#.into(),
        };
        let t = ScriptedTransport::new(vec![limited.clone(), limited, HttpResponse::ok(body)]);
        let client = KlineClient::new(t, RecordingSleeper::default());
        let start = src.bars()[0].date;
        let r = FetchRequest {
            symbol: "BTCUSDT".into(),
            start,
            end: start + chrono::Duration::days(30),
            out_dir: PathBuf::new(),
        };
        assert_eq!(client.download(&r).unwrap().len(), 30);
        let delays = client.sleeper().delays.lock().unwrap().clone();
        assert_eq!(delays, vec![Duration::from_millis(500), Duration::from_millis(1000)]);
    }

    #[test]
    fn retries_exhaust() {
        let busy = HttpResponse { status: 503, body: String::new() };
        let mut client = KlineClient::new(ScriptedTransport::new(vec![busy; 4]), RecordingSleeper::default());
        client.retry.max_retries = 3;
        let err = client.download(&req("BTCUSDT", "2024-01-01", "2024-01-05", Path::new(""))).unwrap_err();
        assert!(matches!(err, Error::Http(_)));
        assert_eq!(client.sleeper().delays.lock().unwrap().len(), 3);
    }

    #[test]
    fn unknown_symbol_and_bad_status() {
        let bad = HttpResponse {
            status: 400,
            body: r#"{"code":-1121,"msg":"Invalid symbol."}"#.into(),
        };
        let client = KlineClient::new(ScriptedTransport::new(vec![bad]), RecordingSleeper::default());
        let err = client.download(&req("NOPEUSDT", "2024-01-01", "2024-01-05", Path::new(""))).unwrap_err();
        assert!(matches!(err, Error::UnknownSymbol(s) if s == "NOPEUSDT"));

        let forbidden = HttpResponse { status: 403, body: "no".into() };
        let client = KlineClient::new(ScriptedTransport::new(vec![forbidden]), RecordingSleeper::default());
        assert!(client.download(&req("BTCUSDT", "2024-01-01", "2024-01-05", Path::new(""))).is_err());
        assert!(client.sleeper().delays.lock().unwrap().is_empty());
    }

    #[test]
    fn empty_range_and_bad_request() {
        let client = KlineClient::new(ScriptedTransport::new(vec![HttpResponse::ok("[]")]), RecordingSleeper::default());
        let err = client.download(&req("BTCUSDT", "2024-01-01", "2024-01-05", Path::new(""))).unwrap_err();
        assert!(matches!(err, Error::EmptyRange(_)));
        let err = client.download(&req("BTCUSDT", "2024-01-05", "2024-01-05", Path::new(""))).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn missing_fixture_is_offline_error() {
        let fx = tempfile::tempdir().unwrap();
        let err = fixture_client(fx.path())
            .download(&req("ETHUSDT", "2024-01-01", "2024-01-05", Path::new("")))
            .unwrap_err();
        assert!(err.to_string().starts_with("offline mode, no fixture"));
    }

    #[test]
    fn refetch_is_idempotent() {
        let (fx, src) = fixture_dir(200);
        let out = tempfile::tempdir().unwrap();
        let start = src.bars()[0].date;
        let client = fixture_client(fx.path());
        let wide = FetchRequest {
            symbol: "BTCUSDT".into(),
            start,
            end: start + chrono::Duration::days(150),
            out_dir: out.path().into(),
        };
        client.fetch_klines(&wide).unwrap();
        let first = fs::read(wide.out_path()).unwrap();
        client.fetch_klines(&wide).unwrap();
        assert_eq!(fs::read(wide.out_path()).unwrap(), first);
    }

    #[test]
    fn kline_fields_map_to_bar() {
        let row: Value = serde_json::from_str(
            r#"[1704067200000,"42000.1","43000","41000.5","42500","1000",1704153599999,"42500000",5,"0","0","0"]"#,
        )
        .unwrap();
        let (t, bar) = parse_kline(&row).unwrap();
        assert_eq!(t, 1_704_067_200_000);
        assert_eq!(bar.date, date("2024-01-01"));
        assert_eq!((bar.open, bar.close, bar.volume), (42000.1, 42500.0, 42_500_000.0));
    }
}

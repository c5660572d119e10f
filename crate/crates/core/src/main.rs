use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use cryptofolio::exchange_client::{FetchRequest, FixtureTransport, KlineClient, ThreadSleeper, UreqTransport};
use cryptofolio::market_data::{synth_series, write_csv, Scenario};
use cryptofolio::report::{
    self, render_tune_table, render_universe, write_file, RunConfig, REPORT_FILE, TUNE_FILE,
};
use cryptofolio::tuner::{grid_search, random_search, GridSpec, SearchBounds};
use cryptofolio::{Error, Result};

#[derive(Parser)]
#[command(name = "cryptofolio", version, about = "Crypto portfolio backtester")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Forbid network access; fetch must be served from fixtures.
    #[arg(long, global = true)]
    offline: bool,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic OHLCV CSVs.
    Synth {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 3)]
        assets: usize,
        #[arg(long, default_value_t = 365)]
        days: usize,
    },
    /// Download daily klines into CSVs.
    Fetch {
        #[arg(long, value_delimiter = ',', required = true)]
        symbols: Vec<String>,
        /// First day (inclusive), YYYY-MM-DD.
        #[arg(long)]
        start: NaiveDate,
        /// Last day (exclusive), YYYY-MM-DD.
        #[arg(long)]
        end: NaiveDate,
        /// Directory of recorded `<SYMBOL>.json` kline arrays.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Screen the universe and print per-symbol verdicts.
    Universe,
    /// Run the managed strategy and baselines.
    Backtest {
        #[arg(long, value_enum)]
        risk: Option<Toggle>,
    },
    /// Search band schedules.
    Tune {
        /// Grid spec (JSON).
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Random search with this many trials instead of a grid; `--grid` then holds bounds.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Re-render the table of an existing run directory.
    Report { dir: PathBuf },
}

fn need_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--config is required".into()))?;
    RunConfig::load(path)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("run"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Command::Synth { scenario, assets, days } => {
            let scenario: Scenario = scenario.parse()?;
            let out = cli
                .out
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            for s in synth_series(scenario, *assets, *days, cli.seed)? {
                let path = out.join(format!("{}.csv", s.symbol()));
                write_csv(&s, &path)?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Fetch { symbols, start, end, fixtures } => {
            let out = out_dir(cli, None);
            let reqs: Vec<FetchRequest> = symbols
                .iter()
                .map(|s| FetchRequest {
                    symbol: s.clone(),
                    start: *start,
                    end: *end,
                    out_dir: out.clone(),
                })
                .collect();
            let results = match fixtures {
                Some(dir) => KlineClient::new(FixtureTransport::new(dir), ThreadSleeper).fetch_all(&reqs),
                None if cli.offline => return Err(Error::OfflineNoFixture(symbols.join(","))),
                None => KlineClient::new(UreqTransport::default(), ThreadSleeper).fetch_all(&reqs),
            };
            for (r, res) in reqs.iter().zip(results) {
                let s = res?;
                eprintln!("wrote {} ({} bars)", r.out_path().display(), s.len());
            }
        }
        Command::Universe => {
            let cfg = need_config(cli)?;
            let (_, rep) = report::screen(&cfg)?;
            print!("{}", render_universe(&rep));
            if let Some(out) = &cli.out {
                let path = out.join("universe.json");
                write_file(&path, &serde_json::to_string_pretty(&rep).expect("universe report serializes"))?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Backtest { risk } => {
            let mut cfg = need_config(cli)?;
            if let Some(t) = risk {
                cfg.risk.enabled = matches!(t, Toggle::On);
            }
            let dir = out_dir(cli, Some(&cfg));
            cfg.out_dir = Some(dir.clone());
            let out = report::run(&cfg)?;
            report::write_run(&out, &dir)?;
            print!("{}", out.report.table());
            eprintln!("wrote {}", dir.join(REPORT_FILE).display());
        }
        Command::Tune { grid, random, threads, top } => {
            let cfg = need_config(cli)?;
            let resolved = report::resolve_universe(&cfg)?;
            let base = cfg.backtest_config(resolved.panel.symbols().to_vec());
            let result = match random {
                Some(n) => {
                    let bounds: SearchBounds = match grid {
                        Some(p) => read_json(p)?,
                        None => SearchBounds::default(),
                    };
                    random_search(&resolved.panel, &base, &bounds, *n, cli.seed, *threads)?
                }
                None => {
                    let spec = match grid {
                        Some(p) => {
                            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                            GridSpec::from_json(&text)?
                        }
                        None => GridSpec::default(),
                    };
                    grid_search(&resolved.panel, &base, &spec, *threads)?
                }
            };
            let dir = out_dir(cli, Some(&cfg));
            write_file(&dir.join(TUNE_FILE), &result.to_json())?;
            print!("{}", render_tune_table(&result, *top));
            eprintln!("wrote {}", dir.join(TUNE_FILE).display());
        }
        Command::Report { dir } => print!("{}", report::rerender(dir)?),
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or_default();
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            eprintln!("error[{}]: {}", kind.tag(), one_line(&e.to_string()));
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}

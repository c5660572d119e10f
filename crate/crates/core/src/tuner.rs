//! Grid and seeded random search over the drawdown band schedule.
//!
//! Trials run in parallel but results are collected in canonical config
//! order before ranking, so the outcome does not depend on thread count.

use std::cmp::Ordering;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_backtest, BacktestConfig};
use crate::error::{Error, Result};
use crate::market_data::AlignedPanel;
use crate::metrics::MetricsReport;
use crate::risk::{Band, RiskConfig};

const MAX_REJECTIONS_PER_TRIAL: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Sharpe,
    MddMin,
    #[default]
    RetDd,
    Roi,
}

impl Objective {
    pub fn value(self, m: &MetricsReport) -> Option<f64> {
        match self {
            Objective::Sharpe => m.sharpe,
            Objective::MddMin => Some(m.mdd),
            Objective::RetDd => m.ret_dd,
            Objective::Roi => Some(m.roi),
        }
        .filter(|v| v.is_finite())
    }

    pub fn minimize(self) -> bool {
        self == Objective::MddMin
    }

    /// `Less` means `a` ranks ahead of `b`. Undefined values rank last.
    pub fn rank(self, a: Option<f64>, b: Option<f64>) -> Ordering {
        match (a, b) {
            (Some(x), Some(y)) if self.minimize() => x.total_cmp(&y),
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Sharpe => "sharpe",
            Objective::MddMin => "mdd_min",
            Objective::RetDd => "ret_dd",
            Objective::Roi => "roi",
        })
    }
}

/// One point of the search space: three bands, the last one liquidating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneParams {
    pub thresholds: [f64; 3],
    pub multipliers: [f64; 2],
    pub cooldown_days: u32,
}

impl TuneParams {
    pub fn risk_config(&self) -> Result<RiskConfig> {
        let [t1, t2, t3] = self.thresholds;
        let [m1, m2] = self.multipliers;
        RiskConfig::with_bands(
            vec![
                Band { threshold: t1, multiplier: m1 },
                Band { threshold: t2, multiplier: m2 },
                Band { threshold: t3, multiplier: 0.0 },
            ],
            self.cooldown_days,
        )
    }

    pub fn is_admissible(&self) -> bool {
        self.risk_config().is_ok() && self.multipliers[1] > 0.0
    }

    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        let a = self.thresholds.iter().chain(&self.multipliers);
        let b = other.thresholds.iter().chain(&other.multipliers);
        a.zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then(self.cooldown_days.cmp(&other.cooldown_days))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub threshold1: Vec<f64>,
    pub threshold2: Vec<f64>,
    pub threshold3: Vec<f64>,
    #[serde(default = "default_m1")]
    pub multiplier1: Vec<f64>,
    #[serde(default = "default_m2")]
    pub multiplier2: Vec<f64>,
    #[serde(default = "default_cooldown")]
    pub cooldown_days: Vec<u32>,
    #[serde(default)]
    pub objective: Objective,
}

fn default_m1() -> Vec<f64> {
    vec![0.8]
}

fn default_m2() -> Vec<f64> {
    vec![0.6]
}

fn default_cooldown() -> Vec<u32> {
    vec![1]
}

impl Default for GridSpec {
    /// 27 raw points around the stock schedule.
    fn default() -> Self {
        Self {
            threshold1: vec![0.01, 0.02, 0.03],
            threshold2: vec![0.03, 0.04, 0.05],
            threshold3: vec![0.05, 0.06, 0.10],
            multiplier1: default_m1(),
            multiplier2: default_m2(),
            cooldown_days: default_cooldown(),
            objective: Objective::default(),
        }
    }
}

impl GridSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("grid spec", e))
    }

    /// Admissible points, deduplicated, in lexicographic order.
    pub fn points(&self) -> Vec<TuneParams> {
        let mut out = Vec::new();
        for &t1 in &self.threshold1 {
            for &t2 in &self.threshold2 {
                for &t3 in &self.threshold3 {
                    for &m1 in &self.multiplier1 {
                        for &m2 in &self.multiplier2 {
                            for &cooldown_days in &self.cooldown_days {
                                let p = TuneParams {
                                    thresholds: [t1, t2, t3],
                                    multipliers: [m1, m2],
                                    cooldown_days,
                                };
                                if p.is_admissible() {
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
        out.sort_by(TuneParams::lex_cmp);
        out.dedup_by(|a, b| a.lex_cmp(b).is_eq());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneEntry {
    pub config: TuneParams,
    pub objective: Option<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub objective: Objective,
    /// Best first.
    pub entries: Vec<TuneEntry>,
}

impl TuneResult {
    pub fn best(&self) -> &TuneEntry {
        &self.entries[0]
    }

    pub fn find(&self, params: &TuneParams) -> Option<&TuneEntry> {
        self.entries.iter().find(|e| e.config.lex_cmp(params).is_eq())
    }

    /// The ranked array written as `tune.json`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("tune entries serialize")
    }
}

pub fn evaluate(panel: &AlignedPanel, base: &BacktestConfig, params: &TuneParams, objective: Objective) -> Result<TuneEntry> {
    let mut cfg = base.clone();
    cfg.risk = params.risk_config()?;
    let report = run_backtest(panel, &cfg)?;
    Ok(TuneEntry {
        config: *params,
        objective: objective.value(&report.metrics),
        metrics: report.metrics,
    })
}

fn rank(mut entries: Vec<TuneEntry>, objective: Objective) -> TuneResult {
    entries.sort_by(|a, b| {
        objective
            .rank(a.objective, b.objective)
            .then_with(|| a.config.lex_cmp(&b.config))
    });
    TuneResult { objective, entries }
}

fn run_trials(
    panel: &AlignedPanel,
    base: &BacktestConfig,
    points: &[TuneParams],
    objective: Objective,
    threads: Option<usize>,
) -> Result<TuneResult> {
    let work = || -> Result<Vec<TuneEntry>> {
        points.par_iter().map(|p| evaluate(panel, base, p, objective)).collect()
    };
    let entries = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok(rank(entries, objective))
}

/// Backtests every admissible grid point. `threads = None` uses the global pool.
pub fn grid_search(
    panel: &AlignedPanel,
    base: &BacktestConfig,
    grid: &GridSpec,
    threads: Option<usize>,
) -> Result<TuneResult> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }
    log::info!("grid search over {} admissible points", points.len());
    run_trials(panel, base, &points, grid.objective, threads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchBounds {
    pub threshold1: (f64, f64),
    pub threshold2: (f64, f64),
    pub threshold3: (f64, f64),
    pub multiplier1: (f64, f64),
    pub multiplier2: (f64, f64),
    pub cooldown_days: (u32, u32),
    pub objective: Objective,
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            threshold1: (0.01, 0.05),
            threshold2: (0.02, 0.08),
            threshold3: (0.04, 0.15),
            multiplier1: (0.5, 0.95),
            multiplier2: (0.2, 0.8),
            cooldown_days: (1, 1),
            objective: Objective::default(),
        }
    }
}

impl SearchBounds {
    fn check(&self) -> Result<()> {
        let ranges = [self.threshold1, self.threshold2, self.threshold3, self.multiplier1, self.multiplier2];
        if ranges.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
            || self.cooldown_days.0 > self.cooldown_days.1
        {
            return Err(Error::InvalidArgument("each bound must satisfy lo <= hi".into()));
        }
        let t_ok = self.threshold1.1 > 0.0
            && self.threshold1.0 < self.threshold2.1
            && self.threshold1.0.max(self.threshold2.0) < self.threshold3.1;
        let m_ok = self.multiplier1.0 <= 1.0
            && self.multiplier2.1 > 0.0
            && self.multiplier2.0 < self.multiplier1.1
            && self.multiplier2.0 < 1.0;
        if t_ok && m_ok {
            Ok(())
        } else {
            Err(Error::InfeasibleBounds)
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> TuneParams {
        let mut u = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let thresholds = [u(self.threshold1), u(self.threshold2), u(self.threshold3)];
        let multipliers = [u(self.multiplier1), u(self.multiplier2)];
        let (clo, chi) = self.cooldown_days;
        TuneParams {
            thresholds,
            multipliers,
            cooldown_days: rng.gen_range(clo..=chi),
        }
    }
}

/// Draws `n_trials` admissible configs by rejection, deterministically per seed.
pub fn sample_configs(bounds: &SearchBounds, n_trials: usize, seed: u64) -> Result<Vec<TuneParams>> {
    if n_trials < 1 {
        return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
    }
    bounds.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_trials);
    let mut rejected = 0;
    while out.len() < n_trials {
        let p = bounds.sample(&mut rng);
        if p.is_admissible() {
            out.push(p);
        } else {
            rejected += 1;
            if rejected > MAX_REJECTIONS_PER_TRIAL * n_trials {
                return Err(Error::InfeasibleBounds);
            }
        }
    }
    Ok(out)
}

pub fn random_search(
    panel: &AlignedPanel,
    base: &BacktestConfig,
    bounds: &SearchBounds,
    n_trials: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<TuneResult> {
    let mut points = sample_configs(bounds, n_trials, seed)?;
    points.sort_by(TuneParams::lex_cmp);
    run_trials(panel, base, &points, bounds.objective, threads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{synth_generate, Scenario};

    fn panel() -> AlignedPanel {
        synth_generate(Scenario::Crash, 2, 120, 1).unwrap()
    }

    fn base(p: &AlignedPanel) -> BacktestConfig {
        BacktestConfig::new(p.symbols().to_vec())
    }

    fn stock() -> TuneParams {
        TuneParams {
            thresholds: [0.02, 0.04, 0.06],
            multipliers: [0.8, 0.6],
            cooldown_days: 1,
        }
    }

    #[test]
    fn default_grid_filters_ordering() {
        let pts = GridSpec::default().points();
        // (0.03, 0.03, _) violates strict ordering; (0.x, 0.05, 0.05) too.
        assert_eq!(pts.len(), 21);
        assert!(pts.iter().all(|p| p.thresholds[0] < p.thresholds[1] && p.thresholds[1] < p.thresholds[2]));
        assert!(pts.iter().any(|p| p.lex_cmp(&stock()).is_eq()));
    }

    #[test]
    fn one_point_grid() {
        let p = panel();
        let grid = GridSpec {
            threshold1: vec![0.02],
            threshold2: vec![0.04],
            threshold3: vec![0.06],
            ..GridSpec::default()
        };
        let res = grid_search(&p, &base(&p), &grid, Some(1)).unwrap();
        assert_eq!(res.entries.len(), 1);
        assert_eq!(res.best().config, stock());
        let direct = run_backtest(&p, &base(&p)).unwrap();
        assert_eq!(res.best().metrics, direct.metrics);
    }

    #[test]
    fn empty_grid_errors() {
        let p = panel();
        let grid = GridSpec {
            threshold1: vec![0.05],
            threshold2: vec![0.04],
            threshold3: vec![0.06],
            ..GridSpec::default()
        };
        assert!(matches!(grid_search(&p, &base(&p), &grid, None), Err(Error::EmptyGrid)));
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // A panel that never draws down keeps every schedule fully invested.
        let p = synth_generate(Scenario::Bull, 1, 60, 2).unwrap();
        let mut b = base(&p);
        b.start = None;
        let grid = GridSpec {
            threshold1: vec![0.5],
            threshold2: vec![0.7],
            threshold3: vec![0.9],
            cooldown_days: vec![3, 1, 2],
            ..GridSpec::default()
        };
        let res = grid_search(&p, &b, &grid, None).unwrap();
        assert!(res.entries.windows(2).all(|w| w[0].objective == w[1].objective));
        let cds: Vec<u32> = res.entries.iter().map(|e| e.config.cooldown_days).collect();
        assert_eq!(cds, [1, 2, 3]);
    }

    #[test]
    fn ranking_direction_and_none_last() {
        assert_eq!(Objective::Sharpe.rank(Some(2.0), Some(1.0)), Ordering::Less);
        assert_eq!(Objective::MddMin.rank(Some(0.1), Some(0.2)), Ordering::Less);
        assert_eq!(Objective::RetDd.rank(None, Some(-5.0)), Ordering::Greater);
        assert_eq!(Objective::Roi.rank(Some(-5.0), None), Ordering::Less);
    }

    #[test]
    fn parallelism_does_not_change_result() {
        let p = panel();
        let b = base(&p);
        let grid = GridSpec::default();
        let one = grid_search(&p, &b, &grid, Some(1)).unwrap().to_json();
        for t in [2, 4, 8] {
            assert_eq!(grid_search(&p, &b, &grid, Some(t)).unwrap().to_json(), one);
        }
    }

    #[test]
    fn random_search_is_seeded_and_admissible() {
        let p = panel();
        let b = base(&p);
        let bounds = SearchBounds::default();
        let a = random_search(&p, &b, &bounds, 6, 11, None).unwrap();
        let again = random_search(&p, &b, &bounds, 6, 11, Some(3)).unwrap();
        assert_eq!(a, again);
        let other = sample_configs(&bounds, 6, 12).unwrap();
        assert_ne!(sample_configs(&bounds, 6, 11).unwrap(), other);
        for e in &a.entries {
            assert!(e.config.is_admissible());
        }
        assert_eq!(random_search(&p, &b, &bounds, 1, 0, None).unwrap().entries.len(), 1);
    }

    #[test]
    fn infeasible_bounds() {
        let bounds = SearchBounds {
            threshold1: (0.1, 0.2),
            threshold2: (0.01, 0.05),
            ..SearchBounds::default()
        };
        assert!(matches!(sample_configs(&bounds, 3, 0), Err(Error::InfeasibleBounds)));
        assert!(sample_configs(&SearchBounds::default(), 0, 0).is_err());
    }

    #[test]
    fn grid_json() {
        let g = GridSpec::from_json(r#"{"threshold1":[0.02],"threshold2":[0.04],"threshold3":[0.06],"objective":"sharpe"}"#).unwrap();
        assert_eq!(g.objective, Objective::Sharpe);
        assert_eq!(g.multiplier1, vec![0.8]);
        let err = GridSpec::from_json("{\"threshold1\": [0.02],\n \"bogus\": 1}").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }
}

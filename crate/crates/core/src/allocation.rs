//! Rolling per-asset statistics and the hybrid inverse-volatility / Sharpe
//! weight rule.
//!
//! The two halves are normalized independently and blended 50:50:
//!
//! ```text
//! wIV_i = (1/σ_i) / Σ_j (1/σ_j)
//! wS_i  = max(S_i, floor) / Σ_j max(S_j, floor)     (wS = wIV if the sum is 0)
//! w_i   = 0.5 · wIV_i + 0.5 · wS_i
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::AlignedPanel;
use crate::metrics::sample_std;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetStats {
    pub symbol: String,
    /// Per-period return volatility.
    pub sigma: f64,
    /// Per-period Sharpe ratio.
    pub sharpe: f64,
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("empty weight vector".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for WeightVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocConfig {
    pub vol_window: usize,
    pub sharpe_window: usize,
    /// Sharpe values below this are clamped before normalizing.
    pub sharpe_floor: f64,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            vol_window: 30,
            sharpe_window: 30,
            sharpe_floor: 0.0,
        }
    }
}

impl AllocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vol_window < 2 || self.sharpe_window < 2 {
            return Err(Error::InvalidConfig("allocation windows must be >= 2".into()));
        }
        if !(self.sharpe_floor >= 0.0) {
            return Err(Error::InvalidConfig("sharpe_floor must be >= 0".into()));
        }
        Ok(())
    }

    pub fn lookback(&self) -> usize {
        self.vol_window.max(self.sharpe_window)
    }
}

/// Trailing statistics for every panel symbol, for weights applied on date
/// index `as_of`.
///
/// Only returns realized on or before `as_of - 1` are read (the latest one is
/// `closes[as_of-1] / closes[as_of-2] - 1`), so nothing at or after `as_of`
/// can influence the result.
pub fn estimate_stats(panel: &AlignedPanel, as_of: usize, config: &AllocConfig) -> Result<Vec<AssetStats>> {
    config.validate()?;
    let need = config.lookback();
    // Return index t covers closes t -> t+1; the last admissible one is as_of - 2.
    if as_of < need + 1 || as_of > panel.n_dates() {
        return Err(Error::InsufficientHistory(format!(
            "date index {as_of} needs {need} prior returns"
        )));
    }
    let end = as_of - 1;
    panel
        .symbols()
        .iter()
        .zip(panel.returns())
        .map(|(symbol, rets)| {
            let vol_slice = &rets[end - config.vol_window..end];
            let sigma = sample_std(vol_slice);
            if !(sigma > 0.0) {
                return Err(Error::DegenerateVolatility);
            }
            let s_slice = &rets[end - config.sharpe_window..end];
            let sd = sample_std(s_slice);
            if !(sd > 0.0) {
                return Err(Error::DegenerateVolatility);
            }
            let mean = s_slice.iter().sum::<f64>() / s_slice.len() as f64;
            Ok(AssetStats {
                symbol: symbol.clone(),
                sigma,
                sharpe: mean / sd,
            })
        })
        .collect()
}

fn normalize(raw: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    (total > 0.0 && total.is_finite()).then(|| raw.iter().map(|x| x / total).collect())
}

/// Blended weights with the default Sharpe floor of zero.
pub fn hybrid_weights(stats: &[AssetStats]) -> Result<WeightVector> {
    hybrid_weights_with_floor(stats, 0.0)
}

pub fn hybrid_weights_with_floor(stats: &[AssetStats], sharpe_floor: f64) -> Result<WeightVector> {
    if stats.is_empty() {
        return Err(Error::InvalidArgument("hybrid_weights needs at least one asset".into()));
    }
    if stats.iter().any(|s| !(s.sigma > 0.0) || !s.sigma.is_finite()) {
        return Err(Error::DegenerateVolatility);
    }
    let inv_vol: Vec<f64> = stats.iter().map(|s| 1.0 / s.sigma).collect();
    let w_iv = normalize(&inv_vol).ok_or(Error::DegenerateVolatility)?;
    let floored: Vec<f64> = stats.iter().map(|s| s.sharpe.max(sharpe_floor)).collect();
    let w_s = normalize(&floored).unwrap_or_else(|| w_iv.clone());
    let blended: Vec<f64> = w_iv.iter().zip(&w_s).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
    WeightVector::new(blended)
}

pub fn equal_weights(n: usize) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::InvalidArgument("equal_weights needs n >= 1".into()));
    }
    WeightVector::new(vec![1.0 / n as f64; n])
}

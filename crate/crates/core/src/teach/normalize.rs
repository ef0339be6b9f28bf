use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::TokenStats;

/// Where the robust-normalization quantiles are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    /// Quantiles over the valid positions of each rollout batch.
    PerBatch,
    /// Quantiles over every valid position of the dataset.
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub q_low: f64,
    pub q_high: f64,
    pub epsilon: f64,
    pub scope: NormalizationScope,
    /// Use raw `C` (already in [0, 1]) instead of its normalized value.
    pub raw_compat: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            q_low: 0.05,
            q_high: 0.95,
            epsilon: 1e-8,
            scope: NormalizationScope::PerBatch,
            raw_compat: false,
        }
    }
}

/// Linear-interpolation quantile of `values` (need not be sorted).
///
/// Returns NaN for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Quantile clip-and-scale map fitted on a reference batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustScaler {
    pub low: f64,
    pub high: f64,
    pub epsilon: f64,
}

impl RobustScaler {
    pub fn fit(reference: &[f64], cfg: &NormalizationConfig) -> Self {
        let mut sorted = reference.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            low: quantile_sorted(&sorted, cfg.q_low),
            high: quantile_sorted(&sorted, cfg.q_high),
            epsilon: cfg.epsilon,
        }
    }

    pub fn apply(&self, z: f64) -> f64 {
        let v = (z - self.low) / (self.high - self.low + self.epsilon);
        if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, 1.0)
        }
    }
}

/// Robust normalization of a batch against its own quantiles.
pub fn robust_normalize(values: &[f64], cfg: &NormalizationConfig) -> Vec<f64> {
    let scaler = RobustScaler::fit(values, cfg);
    values.iter().map(|&z| scaler.apply(z)).collect()
}

/// Selector scores derived from the normalized statistics. All in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorScores {
    /// `H̃`.
    pub entropy: f64,
    /// `D̃`.
    pub kl: f64,
    /// `C̃`.
    pub compat: f64,
    /// Probabilistic OR of `H̃` and `D̃`.
    pub tip: f64,
    /// `D̃·C̃`.
    pub teach: f64,
    /// Probabilistic OR of `H̃` and the teachability score.
    pub teach_entropy: f64,
    /// `D̃·(1 − C̃)`.
    pub incompat: f64,
}

fn prob_or(a: f64, b: f64) -> f64 {
    a + b - a * b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedStats {
    pub d_tilde: f64,
    pub c_tilde: f64,
    pub h_tilde: f64,
    /// Learnable disagreement `D̃·C̃`.
    pub d_learn: f64,
    /// Incompatible disagreement `D̃·(1 − C̃)`.
    pub d_incomp: f64,
    pub scores: SelectorScores,
}

impl NormalizedStats {
    pub fn from_normalized(d_tilde: f64, c_tilde: f64, h_tilde: f64) -> Self {
        let d_learn = d_tilde * c_tilde;
        let d_incomp = d_tilde * (1.0 - c_tilde);
        Self {
            d_tilde,
            c_tilde,
            h_tilde,
            d_learn,
            d_incomp,
            scores: SelectorScores {
                entropy: h_tilde,
                kl: d_tilde,
                compat: c_tilde,
                tip: prob_or(h_tilde, d_tilde),
                teach: d_learn,
                teach_entropy: prob_or(h_tilde, d_learn),
                incompat: d_incomp,
            },
        }
    }
}

/// Normalizes a batch of statistics. Quantiles come from the valid positions
/// only; every position, valid or not, is mapped through them.
pub fn normalize_batch(stats: &[TokenStats], cfg: &NormalizationConfig) -> Vec<NormalizedStats> {
    let valid: Vec<&TokenStats> = stats.iter().filter(|s| s.valid).collect();
    let fit = |f: fn(&TokenStats) -> f64| {
        let vals: Vec<f64> = valid.iter().map(|s| f(s)).collect();
        RobustScaler::fit(&vals, cfg)
    };
    let d_scale = fit(|s| s.d);
    let c_scale = fit(|s| s.c);
    let h_scale = fit(|s| s.h_student);
    stats
        .iter()
        .map(|s| {
            let c_tilde = if cfg.raw_compat {
                s.c.clamp(0.0, 1.0)
            } else {
                c_scale.apply(s.c)
            };
            NormalizedStats::from_normalized(d_scale.apply(s.d), c_tilde, h_scale.apply(s.h_student))
        })
        .collect()
}

/// Normalizes with quantiles taken per `batch` id or over everything,
/// following `cfg.scope`. `batches[i]` is the batch of `stats[i]`.
pub fn normalize_scoped(
    stats: &[TokenStats],
    batches: &[u64],
    cfg: &NormalizationConfig,
) -> Vec<NormalizedStats> {
    if cfg.scope == NormalizationScope::PerDataset || stats.len() != batches.len() {
        return normalize_batch(stats, cfg);
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &b) in batches.iter().enumerate() {
        groups.entry(b).or_default().push(i);
    }
    let mut out = vec![NormalizedStats::from_normalized(0.0, 0.0, 0.0); stats.len()];
    for idx in groups.values() {
        let part: Vec<TokenStats> = idx.iter().map(|&i| stats[i].clone()).collect();
        for (&i, n) in idx.iter().zip(normalize_batch(&part, cfg)) {
            out[i] = n;
        }
    }
    out
}

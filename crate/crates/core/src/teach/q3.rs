use serde::{Deserialize, Serialize};

use super::normalize::{quantile, NormalizedStats};
use crate::error::{Error, Result};

/// Thresholds of the low-entropy / high-disagreement quadrant, expressed as
/// batch quantiles of `H̃` and `D̃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q3Spec {
    pub entropy_quantile: f64,
    pub kl_quantile: f64,
}

impl Default for Q3Spec {
    fn default() -> Self {
        Self {
            entropy_quantile: 0.5,
            kl_quantile: 0.5,
        }
    }
}

impl Q3Spec {
    pub fn validate(&self) -> Result<()> {
        let ok = |q: f64| q > 0.0 && q < 1.0;
        if ok(self.entropy_quantile) && ok(self.kl_quantile) {
            Ok(())
        } else {
            Err(Error::Domain(format!("Q3 quantiles must lie in (0, 1): {self:?}")))
        }
    }
}

/// Marks tokens whose `H̃` is strictly below and `D̃` strictly above the
/// batch thresholds. An empty batch yields an empty mask.
pub fn q3_membership(norm: &[NormalizedStats], spec: &Q3Spec) -> Vec<bool> {
    if norm.is_empty() {
        return Vec::new();
    }
    let h: Vec<f64> = norm.iter().map(|n| n.h_tilde).collect();
    let d: Vec<f64> = norm.iter().map(|n| n.d_tilde).collect();
    let h_thr = quantile(&h, spec.entropy_quantile);
    let d_thr = quantile(&d, spec.kl_quantile);
    norm.iter()
        .map(|n| n.h_tilde < h_thr && n.d_tilde > d_thr)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(h: f64, d: f64) -> NormalizedStats {
        NormalizedStats::from_normalized(d, 0.5, h)
    }

    #[test]
    fn corners() {
        let batch = vec![ns(0.0, 1.0), ns(1.0, 0.0), ns(0.5, 0.5), ns(0.2, 0.7), ns(0.8, 0.3)];
        let m = q3_membership(&batch, &Q3Spec::default());
        assert!(m[0]);
        assert!(!m[1]);
        assert!(!m[2]);
    }

    #[test]
    fn grid_selects_lower_right_quadrant() {
        let mut batch = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                batch.push(ns((i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0));
            }
        }
        let m = q3_membership(&batch, &Q3Spec::default());
        let mut count = 0;
        for (n, &inside) in batch.iter().zip(&m) {
            assert_eq!(inside, n.h_tilde < 0.5 && n.d_tilde > 0.5);
            count += inside as usize;
        }
        // 10 × 10 cells of the 20 × 20 grid.
        assert_eq!(count, 100);
    }

    #[test]
    fn spec_validation() {
        assert!(Q3Spec::default().validate().is_ok());
        assert!(Q3Spec { entropy_quantile: 0.0, kl_quantile: 0.5 }.validate().is_err());
    }
}

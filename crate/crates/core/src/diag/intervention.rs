use serde::{Deserialize, Serialize};

use super::bank::ContextBank;
use super::gain::bank_gains;
use crate::error::{Error, Result};
use crate::teach::SelectorKind;

/// Budgets closer than this are treated as the same budget.
const BUDGET_TOL: f64 = 1e-9;

/// One selector run scored on the frozen bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub run: String,
    pub selector: SelectorKind,
    pub rho: f64,
    pub seed: u64,
    pub keep_fraction: f64,
    /// Mean same-context gain over the bank.
    pub gain: f64,
    /// `gain / keep_fraction`.
    pub gain_per_keep: f64,
    pub q3_fraction: f64,
}

/// Scores every recorded run whose selector and budget were requested. The
/// full selector matches any budget. Every requested pair must have a run.
pub fn selector_intervention_report(
    bank: &ContextBank,
    selectors: &[SelectorKind],
    budgets: &[f64],
) -> Result<Vec<InterventionRow>> {
    let mut out = Vec::new();
    for &rho in budgets {
        for &selector in selectors {
            let matches: Vec<_> = bank
                .runs()
                .iter()
                .filter(|(_, m)| {
                    m.selector == selector
                        && (selector == SelectorKind::Full || (m.rho - rho).abs() < BUDGET_TOL)
                })
                .collect();
            if matches.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "no checkpoint pair for selector `{selector}` at rho {rho}"
                )));
            }
            for (after, meta) in matches {
                let gains = bank_gains(bank, &meta.before, after)?;
                let gain = gains.iter().map(|g| g.g_fix).sum::<f64>() / gains.len().max(1) as f64;
                out.push(InterventionRow {
                    run: after.clone(),
                    selector,
                    rho: meta.rho,
                    seed: meta.seed,
                    keep_fraction: meta.keep_fraction,
                    gain,
                    gain_per_keep: if meta.keep_fraction > 0.0 {
                        gain / meta.keep_fraction
                    } else {
                        0.0
                    },
                    q3_fraction: meta.q3_fraction,
                });
            }
        }
    }
    Ok(out)
}

/// One-sided sign-test p-value: the probability of at least `wins`
/// successes in `n` fair coin flips.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if wins == 0 {
        return 1.0;
    }
    let mut coef = 1.0f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += coef;
        }
        coef = coef * (n - k) as f64 / (k + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::{BankContext, RunMeta};
    use crate::dist::SparseTokenDist;

    fn bank() -> ContextBank {
        let teacher = SparseTokenDist::from_probs(&[(0, 0.8), (1, 0.2)], Some(0.0), 2).unwrap();
        let ctx = (0..4)
            .map(|i| BankContext {
                prompt_id: format!("p{i}"),
                context_id: format!("c{i}"),
                position: 0,
                state: None,
                teacher: teacher.clone(),
            })
            .collect();
        let mut b = ContextBank::new(ctx);
        let before = SparseTokenDist::from_probs(&[(0, 0.5), (1, 0.5)], Some(0.0), 2).unwrap();
        b.add_checkpoint("init", vec![before; 4]).unwrap();
        b.add_checkpoint("full", vec![teacher; 4]).unwrap();
        b.add_run(
            "full",
            RunMeta {
                selector: SelectorKind::Full,
                rho: 1.0,
                seed: 0,
                before: "init".into(),
                keep_fraction: 1.0,
                q3_fraction: 0.5,
            },
        )
        .unwrap();
        b
    }

    #[test]
    fn full_run_gain_is_mean_token_gain() {
        let b = bank();
        let rows = selector_intervention_report(&b, &[SelectorKind::Full], &[0.03]).unwrap();
        assert_eq!(rows.len(), 1);
        let expected = 0.8 * (0.8f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.5).ln();
        assert!((rows[0].gain - expected).abs() < 1e-12);
        assert_eq!(rows[0].gain_per_keep, rows[0].gain);
    }

    #[test]
    fn missing_run_is_an_error() {
        assert!(selector_intervention_report(&bank(), &[SelectorKind::Teach], &[0.03]).is_err());
    }

    #[test]
    fn sign_test_tails() {
        assert!((sign_test_p(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p(9, 10) - 11.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p(8, 10) - 56.0 / 1024.0).abs() < 1e-15);
        assert_eq!(sign_test_p(0, 10), 1.0);
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bank::ContextBank;
use crate::dist::{self, SparseTokenDist, SupportSet};
use crate::error::Result;

/// Same-context gain of one bank context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub index: usize,
    pub g_fix: f64,
    pub cluster: String,
}

/// `KL(teacher || before) - KL(teacher || after)` on `support`. Positive when
/// the later checkpoint moved toward the teacher.
pub fn token_gain(
    teacher: &SparseTokenDist,
    before: &SparseTokenDist,
    after: &SparseTokenDist,
    support: &SupportSet,
) -> Result<f64> {
    Ok(dist::kl(teacher, before, support)? - dist::kl(teacher, after, support)?)
}

/// Gain of every bank context between two checkpoints, scored on the union of
/// the three listed supports.
pub fn bank_gains(bank: &ContextBank, before: &str, after: &str) -> Result<Vec<GainRecord>> {
    let b = bank.checkpoint(before)?;
    let a = bank.checkpoint(after)?;
    bank.contexts()
        .par_iter()
        .enumerate()
        .map(|(i, ctx)| {
            let support = SupportSet::new(
                [&ctx.teacher, &b[i], &a[i]]
                    .iter()
                    .flat_map(|d| d.entries().iter().map(|e| e.token)),
            );
            Ok(GainRecord {
                index: i,
                g_fix: token_gain(&ctx.teacher, &b[i], &a[i], &support)?,
                cluster: ctx.prompt_id.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(p: &[f64]) -> SparseTokenDist {
        let probs: Vec<(u32, f64)> = p.iter().enumerate().map(|(i, &x)| (i as u32, x)).collect();
        SparseTokenDist::from_probs(&probs, Some(0.0), p.len() as u32).unwrap()
    }

    fn dense_kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .zip(q)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum()
    }

    #[test]
    fn identical_checkpoints_have_zero_gain() {
        let s = SupportSet::new(0..3);
        let t = d(&[0.2, 0.5, 0.3]);
        let p = d(&[0.6, 0.2, 0.2]);
        assert_eq!(token_gain(&t, &p, &p, &s).unwrap(), 0.0);
    }

    #[test]
    fn converged_student_gains_the_initial_gap() {
        let s = SupportSet::new(0..3);
        let t = d(&[0.2, 0.5, 0.3]);
        let p = d(&[0.6, 0.2, 0.2]);
        let g = token_gain(&t, &p, &t, &s).unwrap();
        assert_abs_diff_eq!(g, dense_kl(&[0.2, 0.5, 0.3], &[0.6, 0.2, 0.2]), epsilon = 1e-12);
        assert!(g > 0.0);
    }

    #[test]
    fn vocab8_gain_matches_dense_oracle() {
        let t = [0.30, 0.05, 0.20, 0.10, 0.05, 0.10, 0.15, 0.05];
        let b = [0.10, 0.20, 0.05, 0.25, 0.10, 0.05, 0.05, 0.20];
        let a = [0.20, 0.10, 0.15, 0.15, 0.05, 0.10, 0.10, 0.15];
        let s = SupportSet::new(0..8);
        let g = token_gain(&d(&t), &d(&b), &d(&a), &s).unwrap();
        assert_abs_diff_eq!(g, dense_kl(&t, &b) - dense_kl(&t, &a), epsilon = 1e-10);
        // Swapping checkpoints flips the sign.
        let back = token_gain(&d(&t), &d(&a), &d(&b), &s).unwrap();
        assert_abs_diff_eq!(g, -back, epsilon = 1e-15);
    }
}

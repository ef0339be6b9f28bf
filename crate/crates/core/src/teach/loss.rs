use serde::{Deserialize, Serialize};

use super::record::TokenRecord;
use super::select::SelectionMask;
use crate::dist::{self, SupportSet};
use crate::error::{Error, Result};

/// Per-token OPD loss estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossEstimator {
    /// Reverse KL `KL(p_student || p_teacher)` on the student's listed support.
    FullKl,
    /// `log p_student(y_t) - log p_teacher(y_t)` at the sampled token.
    SampledToken,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSummary {
    /// Mean per-token loss over kept positions.
    pub loss: f64,
    pub n_kept: usize,
    /// Kept positions whose sampled token was missing from a distribution and
    /// fell back to the absent-token floor.
    pub n_floored: usize,
}

/// Per-token loss and whether the absent-token floor was used.
pub fn token_loss(record: &TokenRecord, estimator: LossEstimator) -> Result<(f64, bool)> {
    match estimator {
        LossEstimator::FullKl => {
            let support = SupportSet::listed(&record.student);
            Ok((dist::kl(&record.student, &record.teacher, &support)?, false))
        }
        LossEstimator::SampledToken => {
            let y = record.sampled_token;
            let (s, t) = (record.student.logprob(y), record.teacher.logprob(y));
            let floored = s.is_none() || t.is_none();
            let s = s.unwrap_or(dist::ABSENT_LOGPROB);
            let t = t.unwrap_or(dist::ABSENT_LOGPROB);
            Ok((s - t, floored))
        }
    }
}

/// Masked OPD objective: the mean token loss over kept positions.
pub fn masked_opd_loss(
    records: &[TokenRecord],
    mask: &SelectionMask,
    estimator: LossEstimator,
) -> Result<LossSummary> {
    if mask.keep.len() != records.len() {
        return Err(Error::Misaligned {
            what: "mask",
            expected: records.len(),
            found: mask.keep.len(),
        });
    }
    let mut total = 0.0;
    let mut n = 0;
    let mut n_floored = 0;
    for i in mask.kept_indices() {
        let (l, floored) = token_loss(&records[i], estimator)?;
        total += l;
        n += 1;
        n_floored += floored as usize;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(LossSummary {
        loss: total / n as f64,
        n_kept: n,
        n_floored,
    })
}

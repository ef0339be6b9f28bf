use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::TokenRecord;
use crate::dist::{self, SupportSet};
use crate::error::{Error, Result};

/// Default support size for the top-K sets.
pub const DEFAULT_K: usize = 16;

/// Raw per-token measurements at one response position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    /// Forward KL from teacher to student on the union of top-K supports.
    pub d: f64,
    /// Teacher mass on the student top-K. Equals `c_hat` when `c_exact` is false.
    pub c: f64,
    /// Teacher mass on the intersection of both top-K sets.
    pub c_hat: f64,
    /// False when teacher scores on the student support were missing and `c`
    /// fell back to `c_hat`.
    pub c_exact: bool,
    pub h_student: f64,
    pub h_teacher: f64,
    /// `log p_student(y_t) - log p_teacher(y_t)`, floored where absent.
    pub raw_kl_sampled: f64,
    /// Position divided by the last position of the same context.
    pub pos_norm: f64,
    /// Support size actually used after clamping to listed entries.
    pub k: usize,
    pub k_clamped: bool,
    /// `|S_student ∩ S_teacher|`.
    pub overlap: usize,
    /// `|S_student ∪ S_teacher|`.
    pub union_len: usize,
    pub valid: bool,
}

impl TokenStats {
    /// Fraction of the student top-K also in the teacher top-K.
    pub fn topk_overlap(&self) -> f64 {
        self.overlap as f64 / self.k.max(1) as f64
    }

    pub fn jaccard(&self) -> f64 {
        if self.union_len == 0 {
            0.0
        } else {
            self.overlap as f64 / self.union_len as f64
        }
    }
}

/// Teacher mass on `support`, or `None` when a support token is unlisted and
/// the teacher's tail is not known to be empty.
fn teacher_mass_on(teacher: &dist::SparseTokenDist, support: &SupportSet) -> Option<f64> {
    let complete = matches!(teacher.tail_mass(), Some(t) if t <= dist::MASS_FLOOR);
    let mut mass = 0.0;
    for &v in support.ids() {
        match teacher.prob(v) {
            Some(p) => mass += p,
            None if complete => {}
            None => return None,
        }
    }
    Some(mass)
}

/// Computes the raw statistics of one record. `pos_norm` is left at 0; use
/// [`compute_stats_batch`] to fill it.
pub fn compute_stats(record: &TokenRecord, k: usize) -> Result<TokenStats> {
    if k == 0 {
        return Err(Error::Domain("K must be at least 1".into()));
    }
    if record.student.vocab_size() != record.teacher.vocab_size() {
        return Err(Error::InvalidDistribution(format!(
            "student vocab {} differs from teacher vocab {}",
            record.student.vocab_size(),
            record.teacher.vocab_size()
        )));
    }
    let s_top = dist::top_k(&record.student, k)?;
    let t_top = dist::top_k(&record.teacher, k)?;
    let union = dist::union_support(&s_top, &t_top);
    let d = dist::kl(&record.teacher, &record.student, &union)?;

    let inter = s_top.intersection(&t_top);
    let c_hat: f64 = inter
        .ids()
        .iter()
        .filter_map(|&v| record.teacher.prob(v))
        .sum();
    let (c, c_exact) = match teacher_mass_on(&record.teacher, &s_top) {
        Some(c) => (c.max(c_hat), true),
        None => (c_hat, false),
    };

    let y = record.sampled_token;
    let raw_kl_sampled = record.student.logprob_or_floor(y) - record.teacher.logprob_or_floor(y);

    Ok(TokenStats {
        d,
        c: c.clamp(0.0, 1.0),
        c_hat: c_hat.clamp(0.0, 1.0),
        c_exact,
        h_student: dist::entropy(&record.student)?,
        h_teacher: dist::entropy(&record.teacher)?,
        raw_kl_sampled,
        pos_norm: 0.0,
        k: s_top.len(),
        k_clamped: s_top.clamped_from().is_some() || t_top.clamped_from().is_some(),
        overlap: inter.len(),
        union_len: union.len(),
        valid: record.valid,
    })
}

/// Computes statistics for every record in parallel and fills `pos_norm`
/// relative to the last position seen for each `(prompt_id, context_id)`.
pub fn compute_stats_batch(records: &[TokenRecord], k: usize) -> Result<Vec<TokenStats>> {
    let mut stats = records
        .par_iter()
        .map(|r| compute_stats(r, k))
        .collect::<Result<Vec<_>>>()?;
    let mut last: HashMap<(&str, &str), u32> = HashMap::new();
    for r in records {
        let e = last
            .entry((r.prompt_id.as_str(), r.context_id.as_str()))
            .or_insert(0);
        *e = (*e).max(r.position);
    }
    for (s, r) in stats.iter_mut().zip(records) {
        let max = last[&(r.prompt_id.as_str(), r.context_id.as_str())];
        s.pos_norm = if max == 0 {
            0.0
        } else {
            r.position as f64 / max as f64
        };
    }
    Ok(stats)
}

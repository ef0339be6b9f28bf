use serde::{Deserialize, Serialize};

use super::bank::ContextBank;
use super::gain::bank_gains;
use crate::error::Result;
use crate::teach::{
    compute_stats_batch, normalize_batch, q3_membership, NormalizationConfig, NormalizedStats,
    Q3Spec, TokenRecord, TokenStats,
};

/// One bank context with its gain and the statistics of the `before` student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub prompt_id: String,
    pub context_id: String,
    pub position: u32,
    pub gain: f64,
    pub stats: TokenStats,
    pub norm: NormalizedStats,
    pub in_q3: bool,
}

/// Scores every bank context against checkpoint `before` and attaches the
/// gain from `before` to `after`. Normalization spans the whole bank.
pub fn diagnostic_rows(
    bank: &ContextBank,
    before: &str,
    after: &str,
    k: usize,
    cfg: &NormalizationConfig,
    q3: &Q3Spec,
) -> Result<Vec<DiagnosticRow>> {
    q3.validate()?;
    let students = bank.checkpoint(before)?;
    let gains = bank_gains(bank, before, after)?;
    let records: Vec<TokenRecord> = bank
        .contexts()
        .iter()
        .zip(students)
        .map(|(ctx, s)| TokenRecord {
            prompt_id: ctx.prompt_id.clone(),
            context_id: ctx.context_id.clone(),
            position: ctx.position,
            batch: 0,
            sampled_token: s.entries().first().map_or(0, |e| e.token),
            student: s.clone(),
            teacher: ctx.teacher.clone(),
            valid: true,
        })
        .collect();
    let stats = compute_stats_batch(&records, k)?;
    let norm = normalize_batch(&stats, cfg);
    let in_q3 = q3_membership(&norm, q3);
    Ok(records
        .into_iter()
        .zip(stats)
        .zip(norm)
        .zip(gains)
        .zip(in_q3)
        .map(|((((r, stats), norm), g), in_q3)| DiagnosticRow {
            prompt_id: r.prompt_id,
            context_id: r.context_id,
            position: r.position,
            gain: g.g_fix,
            stats,
            norm,
            in_q3,
        })
        .collect())
}

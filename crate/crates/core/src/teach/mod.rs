//! Token-level teachability scoring and budgeted selection.
//!
//! The pipeline runs record → [`TokenStats`] → [`NormalizedStats`] →
//! [`SelectionMask`]. Raw statistics are per-token and independent; the
//! normalization and selection steps first reduce over the whole batch
//! (quantiles, top-n threshold) and then apply per token.

mod loss;
mod normalize;
mod q3;
mod record;
mod select;
mod stats;

pub use loss::{masked_opd_loss, token_loss, LossEstimator, LossSummary};
pub use normalize::{
    normalize_batch, normalize_scoped, quantile, robust_normalize, NormalizationConfig, NormalizationScope,
    NormalizedStats, RobustScaler, SelectorScores,
};
pub use q3::{q3_membership, Q3Spec};
pub use record::TokenRecord;
pub use select::{budget_size, select, select_with_tie_order, selector_scores, SelectionMask, SelectorKind};
pub use stats::{compute_stats, compute_stats_batch, TokenStats, DEFAULT_K};

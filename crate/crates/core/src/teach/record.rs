use crate::dist::SparseTokenDist;

/// One response position of a rollout, with both models' next-token
/// distributions at its context.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub prompt_id: String,
    pub context_id: String,
    /// Token index `t` within the response.
    pub position: u32,
    /// Rollout batch the record belongs to; used by per-batch normalization.
    pub batch: u64,
    pub sampled_token: u32,
    pub student: SparseTokenDist,
    pub teacher: SparseTokenDist,
    /// Whether the position survives padding and trainer masks.
    pub valid: bool,
}

//! Teachability-aware token selection for on-policy distillation.
//!
//! - [`dist`]: entropy, KL, top-K and restricted renormalization over sparse
//!   log-probability distributions.
//! - [`teach`]: per-token disagreement/compatibility statistics, robust
//!   normalization, selector scores and budgeted masks.
//! - [`diag`]: fixed-context diagnostics on a frozen context bank
//!   (token gain, prompt-cluster bootstrap, standardized regressions, bucket
//!   trends, support-proxy audits, selector intervention tables).
//! - [`toy`]: a tabular-softmax distillation simulator.
//! - [`io`]: the JSONL record dump, score CSVs and bank snapshots.
//! - [`commands`]: the operations behind the `teachable` binary.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod commands;
pub mod diag;
pub mod dist;
mod error;
pub mod io;
pub mod teach;
pub mod toy;

pub use error::{Error, Result};

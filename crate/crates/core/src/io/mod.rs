//! On-disk formats.
//!
//! A logprob dump is JSON Lines. The first line is a [`DumpHeader`]; every
//! following line is one token record:
//!
//! | field | type | notes |
//! |---|---|---|
//! | `prompt_id` | string | cluster key for the bootstrap |
//! | `context_id` | string | one rollout |
//! | `position` | integer | response position, unique within a context |
//! | `batch` | integer | optional, default 0; rollout batch for per-batch normalization |
//! | `sampled_token` | integer | token the student emitted |
//! | `valid` | bool | optional, default true; false for padding |
//! | `student`, `teacher` | object | `ids`, `logprobs` (parallel arrays), optional `tail_mass` |
//!
//! Score tables and reports are CSV with a fixed column order, and context
//! banks are single JSON documents.

mod bank_file;
mod dump;
mod scores;

pub use bank_file::{load_bank, snapshot_bank};
pub use dump::{
    read_dump, read_dump_all, write_dump, write_dump_file, DumpHeader, DumpReader, FORMAT_VERSION,
};
pub use scores::{
    format_real, read_scores, read_scores_file, score_header, write_scores, write_scores_file,
    ScoreRow, ScoreTable, BASE_COLUMNS,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::SparseTokenDist;
use crate::error::{Error, Result};
use crate::teach::SelectorKind;

/// Checkpoint id conventionally used for the student before training.
pub const INITIAL_CHECKPOINT: &str = "init";

/// One frozen prefix and the teacher's next-token distribution at it.
#[derive(Debug, Clone, PartialEq)]
pub struct BankContext {
    pub prompt_id: String,
    pub context_id: String,
    pub position: u32,
    /// Simulator state index; absent for banks built from real dumps.
    pub state: Option<u64>,
    pub teacher: SparseTokenDist,
}

/// Ground-truth regime planted by a designed teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLabel {
    /// Teacher matches the student up to small noise.
    Agree,
    /// Teacher re-weights the student's own top-K.
    Aligned,
    /// Teacher moves mass off the student's top-K.
    OffSupport,
}

/// How the `after` checkpoint of a selector run was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub selector: SelectorKind,
    pub rho: f64,
    pub seed: u64,
    pub before: String,
    /// Mean kept fraction of valid positions over training steps.
    pub keep_fraction: f64,
    /// Mean fraction of kept positions lying in Q3.
    pub q3_fraction: f64,
}

/// A frozen set of contexts plus student snapshots scored on them.
///
/// Contexts and teacher distributions are fixed at construction; later
/// snapshots may only add checkpoints aligned 1:1 with the contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBank {
    contexts: Vec<BankContext>,
    checkpoints: BTreeMap<String, Vec<SparseTokenDist>>,
    labels: Option<Vec<ContextLabel>>,
    runs: BTreeMap<String, RunMeta>,
}

impl ContextBank {
    pub fn new(contexts: Vec<BankContext>) -> Self {
        Self {
            contexts,
            checkpoints: BTreeMap::new(),
            labels: None,
            runs: BTreeMap::new(),
        }
    }

    pub fn contexts(&self) -> &[BankContext] {
        &self.contexts
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn checkpoints(&self) -> &BTreeMap<String, Vec<SparseTokenDist>> {
        &self.checkpoints
    }

    pub fn checkpoint(&self, id: &str) -> Result<&[SparseTokenDist]> {
        self.checkpoints
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InsufficientData(format!("bank has no checkpoint `{id}`")))
    }

    /// Adds a student snapshot. Re-adding an identical snapshot is a no-op;
    /// replacing an existing one is refused.
    pub fn add_checkpoint(&mut self, id: &str, dists: Vec<SparseTokenDist>) -> Result<()> {
        if dists.len() != self.contexts.len() {
            return Err(Error::Misaligned {
                what: "checkpoint snapshot",
                expected: self.contexts.len(),
                found: dists.len(),
            });
        }
        if let Some(existing) = self.checkpoints.get(id) {
            if *existing == dists {
                return Ok(());
            }
            return Err(Error::FrozenBank(format!("checkpoint `{id}` already exists")));
        }
        self.checkpoints.insert(id.to_string(), dists);
        Ok(())
    }

    pub fn labels(&self) -> Option<&[ContextLabel]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<ContextLabel>) -> Result<()> {
        if labels.len() != self.contexts.len() {
            return Err(Error::Misaligned {
                what: "labels",
                expected: self.contexts.len(),
                found: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn runs(&self) -> &BTreeMap<String, RunMeta> {
        &self.runs
    }

    /// Records how checkpoint `after` was trained; both checkpoints must exist.
    pub fn add_run(&mut self, after: &str, meta: RunMeta) -> Result<()> {
        self.checkpoint(&meta.before)?;
        self.checkpoint(after)?;
        self.runs.insert(after.to_string(), meta);
        Ok(())
    }

    /// Checks every snapshot and label vector against the context count.
    pub fn validate(&self) -> Result<()> {
        for (id, snap) in &self.checkpoints {
            if snap.len() != self.contexts.len() {
                return Err(Error::Format(format!(
                    "checkpoint `{id}` has {} entries for {} contexts",
                    snap.len(),
                    self.contexts.len()
                )));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.contexts.len() {
                return Err(Error::Format("label count does not match contexts".into()));
            }
        }
        for (after, meta) in &self.runs {
            self.checkpoint(after)?;
            self.checkpoint(&meta.before)?;
        }
        Ok(())
    }

    /// Prompt id of every context, for cluster bootstraps.
    pub fn clusters(&self) -> Vec<String> {
        self.contexts.iter().map(|c| c.prompt_id.clone()).collect()
    }
}

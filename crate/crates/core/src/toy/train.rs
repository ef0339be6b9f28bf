use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::{kl_logprobs, opd_grad};
use super::policy::TabularPolicy;
use super::rollout::rollout_batch;
use crate::diag::derive_seed;
use crate::error::{Error, Result};
use crate::teach::{
    compute_stats, normalize_batch, q3_membership, select_with_tie_order, selector_scores,
    LossEstimator, NormalizationConfig, Q3Spec, SelectorKind, TokenRecord, TokenStats,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub eta: f64,
    pub steps: usize,
    pub rho: f64,
    pub selector: SelectorKind,
    pub rollout_len: usize,
    pub rollouts_per_step: usize,
    pub seed: u64,
    /// Support size for the per-token statistics.
    pub k: usize,
    pub estimator: LossEstimator,
    pub normalization: NormalizationConfig,
    pub q3: Q3Spec,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            steps: 100,
            rho: 1.0,
            selector: SelectorKind::Full,
            rollout_len: 64,
            rollouts_per_step: 32,
            seed: 0,
            k: 4,
            estimator: LossEstimator::FullKl,
            normalization: NormalizationConfig::default(),
            q3: Q3Spec::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain(format!("learning rate {} must be positive", self.eta)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Domain(format!("retention ratio {} outside (0, 1]", self.rho)));
        }
        if self.rollout_len == 0 || self.rollouts_per_step == 0 || self.k == 0 {
            return Err(Error::Domain("rollout sizes and K must be positive".into()));
        }
        self.q3.validate()
    }
}

/// What one training step saw and kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub n_valid: usize,
    pub n_kept: usize,
    pub keep_fraction: f64,
    /// Mean loss over kept positions before the update.
    pub loss: f64,
    pub mean_d_learn: f64,
    pub mean_d_incomp: f64,
    /// Fraction of kept positions inside Q3.
    pub q3_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TabularPolicy,
    pub logs: Vec<StepLog>,
}

impl TrainOutcome {
    pub fn mean_keep_fraction(&self) -> f64 {
        mean(self.logs.iter().map(|l| l.keep_fraction))
    }

    pub fn mean_q3_fraction(&self) -> f64 {
        mean(self.logs.iter().map(|l| l.q3_fraction))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Budgeted on-policy distillation of `student` toward `teacher`.
pub fn train_masked(student: &TabularPolicy, teacher: &TabularPolicy, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    train_masked_with(student, teacher, cfg, |_, _| {})
}

/// As [`train_masked`], calling `on_step` after every update.
pub fn train_masked_with<F>(
    student: &TabularPolicy,
    teacher: &TabularPolicy,
    cfg: &TrainerConfig,
    mut on_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&StepLog, &TabularPolicy),
{
    cfg.validate()?;
    if student.vocab_size() != teacher.vocab_size() || student.n_states() != teacher.n_states() {
        return Err(Error::Domain("student and teacher tables differ in shape".into()));
    }
    let mut policy = student.clone();
    let mut logs = Vec::with_capacity(cfg.steps);
    let (n_roll, len) = (cfg.rollouts_per_step, cfg.rollout_len);
    for step in 0..cfg.steps {
        let step_seed = derive_seed(cfg.seed, step as u64);
        let rollouts = rollout_batch(&policy, n_roll, len, step_seed)?;
        // Position i = r * len + t.
        let steps: Vec<_> = rollouts.iter().flatten().copied().collect();

        let mut unique: Vec<usize> = steps.iter().map(|s| s.state).collect();
        unique.sort_unstable();
        unique.dedup();
        let per_state: HashMap<usize, TokenStats> = unique
            .par_iter()
            .map(|&s| {
                let record = TokenRecord {
                    prompt_id: String::new(),
                    context_id: String::new(),
                    position: 0,
                    batch: step as u64,
                    sampled_token: 0,
                    student: policy.dist(s)?,
                    teacher: teacher.dist(s)?,
                    valid: true,
                };
                Ok((s, compute_stats(&record, cfg.k)?))
            })
            .collect::<Result<_>>()?;
        let stats: Vec<TokenStats> = steps.iter().map(|s| per_state[&s.state].clone()).collect();
        let norm = normalize_batch(&stats, &cfg.normalization);
        let in_q3 = q3_membership(&norm, &cfg.q3);
        let scores = selector_scores(&norm, cfg.selector, &in_q3).unwrap_or_default();
        let tie_rank: Vec<usize> = (0..steps.len())
            .map(|i| (i % len) * n_roll + i / len)
            .collect();
        let valid = vec![true; steps.len()];
        let mask = select_with_tie_order(
            &scores,
            &valid,
            cfg.rho,
            cfg.selector,
            derive_seed(step_seed, 0x5e1),
            Some(&tie_rank),
        )?;

        let v = policy.vocab_size();
        let mut grad: HashMap<usize, Vec<f64>> = HashMap::new();
        let (mut loss, mut dl, mut di, mut q3n) = (0.0, 0.0, 0.0, 0usize);
        let inv = 1.0 / mask.n_kept as f64;
        for i in mask.kept_indices() {
            let st = steps[i];
            let g = opd_grad(&policy, teacher, st.state, cfg.estimator, st.token);
            let acc = grad.entry(st.state).or_insert_with(|| vec![0.0; v]);
            for (a, x) in acc.iter_mut().zip(g) {
                *a += inv * x;
            }
            loss += match cfg.estimator {
                LossEstimator::FullKl => {
                    kl_logprobs(&policy.log_probs(st.state), &teacher.log_probs(st.state))
                }
                LossEstimator::SampledToken => {
                    let y = st.token as usize;
                    policy.log_probs(st.state)[y] - teacher.log_probs(st.state)[y]
                }
            };
            dl += norm[i].d_learn;
            di += norm[i].d_incomp;
            q3n += usize::from(in_q3[i]);
        }
        for (s, g) in grad {
            for (z, x) in policy.row_mut(s).iter_mut().zip(g) {
                *z -= cfg.eta * x;
            }
        }
        let log = StepLog {
            step,
            n_valid: steps.len(),
            n_kept: mask.n_kept,
            keep_fraction: mask.keep_fraction(),
            loss: loss * inv,
            mean_d_learn: dl * inv,
            mean_d_incomp: di * inv,
            q3_fraction: q3n as f64 * inv,
        };
        on_step(&log, &policy);
        logs.push(log);
    }
    Ok(TrainOutcome { policy, logs })
}

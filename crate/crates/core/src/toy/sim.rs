use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{build_design_bank, DesignBank, TeacherDesign};
use super::policy::TabularPolicy;
use super::rollout::rollout_batch;
use super::train::{train_masked, TrainerConfig};
use crate::diag::{derive_seed, RunMeta, INITIAL_CHECKPOINT};
use crate::dist::SparseTokenDist;
use crate::error::Result;
use crate::teach::{SelectorKind, TokenRecord};

/// One simulated experiment: a designed teacher, a frozen bank, and one
/// training run per (selector, budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub vocab: usize,
    pub order: usize,
    /// Standard deviation of the initial student logits.
    pub student_scale: f64,
    pub aligned_fraction: f64,
    pub corrected_fraction: f64,
    pub off_support_mass: f64,
    pub aligned_share: f64,
    pub bank_contexts: usize,
    pub selectors: Vec<SelectorKind>,
    pub budgets: Vec<f64>,
    /// Template for every run; `selector`, `rho` and `seed` are overridden.
    pub trainer: TrainerConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            vocab: 24,
            order: 2,
            student_scale: 2.5,
            aligned_fraction: 0.8,
            corrected_fraction: 0.3,
            off_support_mass: 0.6,
            aligned_share: 0.9,
            bank_contexts: 2048,
            selectors: vec![
                SelectorKind::Teach,
                SelectorKind::Kl,
                SelectorKind::Tip,
                SelectorKind::Entropy,
                SelectorKind::Random,
            ],
            budgets: vec![0.03],
            trainer: TrainerConfig {
                steps: 60,
                ..TrainerConfig::default()
            },
        }
    }
}

/// Checkpoint id of a selector run.
pub fn run_id(selector: SelectorKind, rho: f64) -> String {
    if selector == SelectorKind::Full {
        "full".to_string()
    } else {
        format!("{selector}@{rho}")
    }
}

impl SimulationConfig {
    /// The designed teacher for `seed`, over a freshly drawn student.
    pub fn design(&self, seed: u64) -> Result<TeacherDesign> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x57d));
        let base = TabularPolicy::random(self.vocab, self.order, self.student_scale, &mut rng)?;
        let mut d = TeacherDesign::new(base, self.aligned_fraction, seed);
        d.corrected_fraction = self.corrected_fraction;
        d.off_support_mass = self.off_support_mass;
        d.aligned_share = self.aligned_share;
        d.k = self.trainer.k;
        Ok(d)
    }
}

/// Runs every (selector, budget) pair of `cfg` for one seed and records each
/// trained student as a bank checkpoint.
pub fn simulate_seed(cfg: &SimulationConfig, seed: u64) -> Result<DesignBank> {
    let design = cfg.design(seed)?;
    let mut out = build_design_bank(&design, cfg.bank_contexts)?;
    let mut jobs: Vec<(SelectorKind, f64)> = Vec::new();
    for &rho in &cfg.budgets {
        for &sel in &cfg.selectors {
            let rho = if sel == SelectorKind::Full { 1.0 } else { rho };
            if !jobs.contains(&(sel, rho)) {
                jobs.push((sel, rho));
            }
        }
    }
    let trained = jobs
        .par_iter()
        .map(|&(selector, rho)| {
            let tc = TrainerConfig {
                selector,
                rho,
                seed: derive_seed(seed, 0x7a1),
                ..cfg.trainer.clone()
            };
            let outcome = train_masked(&design.base, &out.teacher, &tc)?;
            let snapshot = out
                .bank
                .contexts()
                .iter()
                .map(|c| outcome.policy.dist(c.state.unwrap_or(0) as usize))
                .collect::<Result<Vec<_>>>()?;
            Ok((selector, rho, outcome, snapshot))
        })
        .collect::<Result<Vec<_>>>()?;
    for (selector, rho, outcome, snapshot) in trained {
        let id = run_id(selector, rho);
        out.bank.add_checkpoint(&id, snapshot)?;
        out.bank.add_run(
            &id,
            RunMeta {
                selector,
                rho,
                seed,
                before: INITIAL_CHECKPOINT.to_string(),
                keep_fraction: outcome.mean_keep_fraction(),
                q3_fraction: outcome.mean_q3_fraction(),
            },
        )?;
    }
    Ok(out)
}

/// Keeps the `top` most probable entries of a full distribution and moves the
/// rest into the tail.
fn truncate(dist: SparseTokenDist, top: Option<usize>) -> Result<SparseTokenDist> {
    match top {
        Some(k) if k < dist.len() => {
            let kept: Vec<(u32, f64)> = dist.entries()[..k]
                .iter()
                .map(|e| (e.token, e.logprob.exp()))
                .collect();
            let mass: f64 = kept.iter().map(|x| x.1).sum();
            SparseTokenDist::from_probs(&kept, Some((1.0 - mass).max(0.0)), dist.vocab_size())
        }
        _ => Ok(dist),
    }
}

/// Token records of `n_rollouts` student rollouts scored by `teacher`, as a
/// real logprob dump would contain them. `top` truncates both distributions
/// to their most probable entries.
pub fn simulate_records(
    student: &TabularPolicy,
    teacher: &TabularPolicy,
    n_rollouts: usize,
    length: usize,
    seed: u64,
    top: Option<usize>,
) -> Result<Vec<TokenRecord>> {
    let rollouts = rollout_batch(student, n_rollouts, length, seed)?;
    let mut out = Vec::with_capacity(n_rollouts * length);
    for (r, steps) in rollouts.iter().enumerate() {
        for (t, st) in steps.iter().enumerate() {
            out.push(TokenRecord {
                prompt_id: format!("p{r}"),
                context_id: format!("r{r}"),
                position: t as u32,
                batch: (r / 32) as u64,
                sampled_token: st.token,
                student: truncate(student.dist(st.state)?, top)?,
                teacher: truncate(teacher.dist(st.state)?, top)?,
                valid: true,
            });
        }
    }
    Ok(out)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};

use super::policy::TabularPolicy;
use super::rollout::rollout_batch;
use crate::diag::{derive_seed, BankContext, ContextBank, ContextLabel, INITIAL_CHECKPOINT};
use crate::error::{Error, Result};

/// Floor mixed into off-support teacher rows so every token stays reachable.
const TEACHER_FLOOR: f64 = 1e-4;

/// Recipe for a teacher with planted agree / aligned / off-support states.
///
/// A fraction `corrected_fraction` of states disagree with `base`; of those,
/// `aligned_fraction` re-weight the base policy's own top-K (learnable) and
/// the rest move `off_support_mass` onto tokens outside it (incompatible).
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherDesign {
    pub base: TabularPolicy,
    pub aligned_fraction: f64,
    pub corrected_fraction: f64,
    /// Teacher mass placed outside the student top-K at off-support states.
    pub off_support_mass: f64,
    /// Number of outside tokens receiving that mass.
    pub off_support_targets: usize,
    /// Share of the top-K mass an aligned teacher moves onto the student's
    /// K-th ranked candidate.
    pub aligned_share: f64,
    /// Logit noise at agree states.
    pub agree_noise: f64,
    pub k: usize,
    pub seed: u64,
}

impl TeacherDesign {
    pub fn new(base: TabularPolicy, aligned_fraction: f64, seed: u64) -> Self {
        Self {
            base,
            aligned_fraction,
            corrected_fraction: 0.3,
            off_support_mass: 0.6,
            off_support_targets: 3,
            aligned_share: 0.9,
            agree_noise: 0.1,
            k: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.aligned_fraction) || !unit(self.corrected_fraction) {
            return Err(Error::Domain("design fractions must lie in [0, 1]".into()));
        }
        if !(self.off_support_mass > 0.0 && self.off_support_mass < 1.0)
            || !(self.aligned_share > 0.0 && self.aligned_share < 1.0)
        {
            return Err(Error::Domain("design masses must lie in (0, 1)".into()));
        }
        let v = self.base.vocab_size();
        if self.k < 2 || self.k + self.off_support_targets > v || self.off_support_targets == 0 {
            return Err(Error::Domain(format!(
                "K = {} with {} off-support targets does not fit vocab {v}",
                self.k, self.off_support_targets
            )));
        }
        if !(self.agree_noise >= 0.0) {
            return Err(Error::Domain("agree noise must be nonnegative".into()));
        }
        Ok(())
    }

    /// Builds the teacher policy and the planted label of every state.
    pub fn build(&self) -> Result<(TabularPolicy, Vec<ContextLabel>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0x7e4c));
        let noise = Normal::new(0.0, self.agree_noise.max(1e-300))
            .map_err(|e| Error::Domain(e.to_string()))?;
        let v = self.base.vocab_size();
        let mut teacher = self.base.clone();
        let mut labels = Vec::with_capacity(self.base.n_states());
        for s in 0..self.base.n_states() {
            let p = self.base.probs(s);
            let mut order: Vec<usize> = (0..v).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            let (top, rest) = order.split_at(self.k);

            let label = if rng.random::<f64>() >= self.corrected_fraction {
                ContextLabel::Agree
            } else if rng.random::<f64>() < self.aligned_fraction {
                ContextLabel::Aligned
            } else {
                ContextLabel::OffSupport
            };
            let q = match label {
                ContextLabel::Agree => {
                    let row = teacher.row_mut(s);
                    for z in row.iter_mut() {
                        *z += noise.sample(&mut rng);
                    }
                    labels.push(label);
                    continue;
                }
                ContextLabel::Aligned => {
                    // Keep the top-K mass, but hand most of it to the weakest
                    // top-K candidate; ranks 1..K-1 share the rest by rank.
                    let mut q = p.clone();
                    let w: f64 = top.iter().map(|&t| p[t]).sum();
                    let k = self.k;
                    let ranks = (k * (k - 1) / 2) as f64;
                    for (r, &t) in top.iter().enumerate() {
                        q[t] = if r + 1 == k {
                            w * self.aligned_share
                        } else {
                            w * (1.0 - self.aligned_share) * (r + 1) as f64 / ranks
                        };
                    }
                    q
                }
                ContextLabel::OffSupport => {
                    // Sharpen within the student top-K, move the rest outside.
                    let mut q = vec![0.0; v];
                    let cubes: f64 = top.iter().map(|&t| p[t].powi(3)).sum();
                    for &t in top {
                        q[t] = (1.0 - self.off_support_mass) * p[t].powi(3) / cubes;
                    }
                    let mut pool = rest.to_vec();
                    let mut weights = Vec::with_capacity(self.off_support_targets);
                    let mut targets = Vec::with_capacity(self.off_support_targets);
                    for _ in 0..self.off_support_targets {
                        targets.push(pool.swap_remove(rng.random_range(0..pool.len())));
                        weights.push(Exp1.sample(&mut rng));
                    }
                    let total: f64 = weights.iter().sum();
                    for (&t, w) in targets.iter().zip(weights) {
                        q[t] += self.off_support_mass * w / total;
                    }
                    let z = 1.0 + TEACHER_FLOOR * v as f64;
                    q.iter().map(|x| (x + TEACHER_FLOOR) / z).collect()
                }
            };
            for (z, qv) in teacher.row_mut(s).iter_mut().zip(q) {
                *z = qv.ln();
            }
            labels.push(label);
        }
        Ok((teacher, labels))
    }
}

/// A designed teacher with its frozen context bank.
#[derive(Debug, Clone)]
pub struct DesignBank {
    pub bank: ContextBank,
    pub teacher: TabularPolicy,
    /// Planted label of every policy state.
    pub state_labels: Vec<ContextLabel>,
}

/// Bank rollout length; each rollout is one prompt cluster.
pub const BANK_ROLLOUT_LEN: usize = 16;

/// Freezes `n_contexts` contexts generated by the base policy, with the
/// designed teacher at each and the base policy stored as checkpoint `init`.
pub fn build_design_bank(design: &TeacherDesign, n_contexts: usize) -> Result<DesignBank> {
    if n_contexts < 100 {
        return Err(Error::Domain("a design bank needs at least 100 contexts".into()));
    }
    let (teacher, state_labels) = design.build()?;
    let n_rollouts = n_contexts.div_ceil(BANK_ROLLOUT_LEN);
    let rollouts = rollout_batch(
        &design.base,
        n_rollouts,
        BANK_ROLLOUT_LEN,
        derive_seed(design.seed, 0xba4c),
    )?;
    let mut contexts = Vec::with_capacity(n_contexts);
    let mut init = Vec::with_capacity(n_contexts);
    let mut labels = Vec::with_capacity(n_contexts);
    'outer: for (r, steps) in rollouts.iter().enumerate() {
        for (t, step) in steps.iter().enumerate() {
            if contexts.len() == n_contexts {
                break 'outer;
            }
            contexts.push(BankContext {
                prompt_id: format!("p{r}"),
                context_id: format!("r{r}"),
                position: t as u32,
                state: Some(step.state as u64),
                teacher: teacher.dist(step.state)?,
            });
            init.push(design.base.dist(step.state)?);
            labels.push(state_labels[step.state]);
        }
    }
    let mut bank = ContextBank::new(contexts);
    bank.add_checkpoint(INITIAL_CHECKPOINT, init)?;
    bank.set_labels(labels)?;
    Ok(DesignBank {
        bank,
        teacher,
        state_labels,
    })
}

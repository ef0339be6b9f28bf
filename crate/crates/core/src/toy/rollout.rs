use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::TabularPolicy;
use crate::diag::derive_seed;
use crate::error::{Error, Result};

/// One generated token and the state it was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub token: u32,
}

/// Draws a token from the softmax row of `state` by inverse CDF.
pub fn sample_token<R: Rng + ?Sized>(policy: &TabularPolicy, state: usize, rng: &mut R) -> u32 {
    let probs = policy.probs(state);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return v as u32;
        }
    }
    // Rounding left u above the last partial sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
}

pub fn rollout<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    start_state: usize,
    length: usize,
    rng: &mut R,
) -> Result<Vec<Step>> {
    if length == 0 {
        return Err(Error::Domain("rollout length must be at least 1".into()));
    }
    if start_state >= policy.n_states() {
        return Err(Error::Domain(format!("state {start_state} out of range")));
    }
    let mut state = start_state;
    let mut steps = Vec::with_capacity(length);
    for _ in 0..length {
        let token = sample_token(policy, state, rng);
        steps.push(Step { state, token });
        state = policy.next_state(state, token);
    }
    Ok(steps)
}

/// Uniformly chosen full-history state, standing in for a prompt.
pub fn random_prompt_state<R: Rng + ?Sized>(policy: &TabularPolicy, rng: &mut R) -> usize {
    rng.random_range(1..policy.n_states())
}

/// `n` rollouts from random prompt states. Trajectory `r` uses its own RNG
/// seeded from `(seed, r)`, so the batch is independent of worker count.
pub fn rollout_batch(policy: &TabularPolicy, n: usize, length: usize, seed: u64) -> Result<Vec<Vec<Step>>> {
    (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            let start = random_prompt_state(policy, &mut rng);
            rollout(policy, start, length, &mut rng)
        })
        .collect()
}

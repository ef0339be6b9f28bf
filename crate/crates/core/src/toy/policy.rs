use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dist::{log_sum_exp, SparseTokenDist};
use crate::error::{Error, Result};

/// Softmax policy over a small vocabulary, conditioned on the last `order`
/// tokens.
///
/// Row 0 is the start state (empty history). A full history
/// `(h_1, .., h_m)` lives in row `1 + Σ h_i V^(m-i)`; shorter histories are
/// left-padded with token 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    vocab: usize,
    order: usize,
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(vocab: usize, order: usize, logits: Vec<f64>) -> Result<Self> {
        if vocab < 2 || order == 0 {
            return Err(Error::Domain("need vocab >= 2 and order >= 1".into()));
        }
        let n_states = vocab
            .checked_pow(order as u32)
            .and_then(|s| s.checked_add(1))
            .ok_or_else(|| Error::Domain("state table too large".into()))?;
        if logits.len() != n_states * vocab {
            return Err(Error::Misaligned {
                what: "logit table",
                expected: n_states * vocab,
                found: logits.len(),
            });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite logit".into()));
        }
        Ok(Self {
            vocab,
            order,
            logits,
        })
    }

    /// Uniform policy.
    pub fn zeros(vocab: usize, order: usize) -> Result<Self> {
        let n = vocab.pow(order as u32) + 1;
        Self::new(vocab, order, vec![0.0; n * vocab])
    }

    /// Logits drawn i.i.d. from `N(0, scale²)`.
    pub fn random<R: Rng + ?Sized>(vocab: usize, order: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::Domain(e.to_string()))?;
        let n = vocab.pow(order as u32) + 1;
        Self::new(vocab, order, (0..n * vocab).map(|_| normal.sample(rng)).collect())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_states(&self) -> usize {
        self.logits.len() / self.vocab
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.logits[state * self.vocab..(state + 1) * self.vocab]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        &mut self.logits[state * self.vocab..(state + 1) * self.vocab]
    }

    /// State reached from `history` (only the last `order` tokens matter).
    pub fn state_of(&self, history: &[u32]) -> usize {
        if history.is_empty() {
            return 0;
        }
        let tail = &history[history.len().saturating_sub(self.order)..];
        let pad = self.order - tail.len();
        let idx = std::iter::repeat_n(0, pad)
            .chain(tail.iter().map(|&t| t as usize))
            .fold(0usize, |acc, t| acc * self.vocab + t);
        1 + idx
    }

    pub fn next_state(&self, state: usize, token: u32) -> usize {
        let width = self.vocab.pow(self.order as u32 - 1);
        let shifted = if state == 0 { 0 } else { (state - 1) % width };
        1 + shifted * self.vocab + token as usize
    }

    pub fn log_probs(&self, state: usize) -> Vec<f64> {
        log_softmax(self.row(state))
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        self.log_probs(state).into_iter().map(f64::exp).collect()
    }

    /// Full-vocabulary distribution at `state`.
    pub fn dist(&self, state: usize) -> Result<SparseTokenDist> {
        SparseTokenDist::from_logits(self.row(state))
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row.iter().copied());
    row.iter().map(|z| z - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_indexing() {
        let p = TabularPolicy::zeros(4, 2).unwrap();
        assert_eq!(p.n_states(), 17);
        assert_eq!(p.state_of(&[]), 0);
        assert_eq!(p.state_of(&[3]), 1 + 3);
        assert_eq!(p.state_of(&[2, 3]), 1 + 2 * 4 + 3);
        assert_eq!(p.state_of(&[0, 1, 2, 3]), 1 + 2 * 4 + 3);
        let mut s = 0;
        let mut hist = Vec::new();
        for t in [1u32, 3, 0, 2] {
            s = p.next_state(s, t);
            hist.push(t);
            assert_eq!(s, p.state_of(&hist));
        }
    }

    #[test]
    fn rows_are_distributions() {
        let mut rng = rand::rng();
        let p = TabularPolicy::random(16, 2, 3.0, &mut rng).unwrap();
        for s in [0, 5, 256] {
            let sum: f64 = p.probs(s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}

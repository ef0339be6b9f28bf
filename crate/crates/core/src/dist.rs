//! Probability primitives over small or top-K truncated vocabularies.
//!
//! All arithmetic stays in log space; probabilities are only materialized at
//! the API boundary. Ties are always broken by ascending token id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-probability assigned to a support token that a distribution does not list.
pub const ABSENT_LOGPROB: f64 = -30.0;

/// Minimum listed mass a renormalization may retain.
pub const MASS_FLOOR: f64 = 1e-12;

/// Tolerance on the total-mass invariant.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// One listed token with its natural-log probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    pub token: u32,
    pub logprob: f64,
}

/// A next-token distribution truncated to its listed entries.
///
/// Entries are kept sorted by descending logprob, ties by ascending token id.
/// `tail_mass`, when known, is the probability outside the listed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTokenDist {
    entries: Vec<TokenLogProb>,
    tail_mass: Option<f64>,
    vocab_size: u32,
}

fn entry_order(a: &TokenLogProb, b: &TokenLogProb) -> Ordering {
    b.logprob
        .partial_cmp(&a.logprob)
        .unwrap_or(Ordering::Equal)
        .then(a.token.cmp(&b.token))
}

impl SparseTokenDist {
    /// Validates and canonicalizes a distribution.
    pub fn new(
        mut entries: Vec<TokenLogProb>,
        tail_mass: Option<f64>,
        vocab_size: u32,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidDistribution("vocab_size must be positive".into()));
        }
        for e in &entries {
            if e.token >= vocab_size {
                return Err(Error::InvalidDistribution(format!(
                    "token {} outside vocabulary of size {vocab_size}",
                    e.token
                )));
            }
            if !e.logprob.is_finite() || e.logprob > MASS_TOLERANCE {
                return Err(Error::InvalidDistribution(format!(
                    "token {} has invalid logprob {}",
                    e.token, e.logprob
                )));
            }
        }
        entries.sort_by(entry_order);
        let mut ids: Vec<u32> = entries.iter().map(|e| e.token).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDistribution("duplicate token ids".into()));
        }
        let listed: f64 = entries.iter().map(|e| e.logprob.exp()).sum();
        match tail_mass {
            Some(t) => {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::InvalidDistribution(format!(
                        "tail mass {t} outside [0, 1]"
                    )));
                }
                let total = listed + t;
                if (total - 1.0).abs() > MASS_TOLERANCE {
                    return Err(Error::InvalidDistribution(format!(
                        "listed mass plus tail is {total}, expected 1"
                    )));
                }
            }
            None => {
                if listed > 1.0 + MASS_TOLERANCE {
                    return Err(Error::InvalidDistribution(format!(
                        "listed mass {listed} exceeds 1"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            tail_mass,
            vocab_size,
        })
    }

    /// Builds a distribution from `(token, probability)` pairs. Zero
    /// probabilities are dropped.
    pub fn from_probs(probs: &[(u32, f64)], tail_mass: Option<f64>, vocab_size: u32) -> Result<Self> {
        let entries = probs
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|&(token, p)| TokenLogProb {
                token,
                logprob: p.ln(),
            })
            .collect();
        Self::new(entries, tail_mass, vocab_size)
    }

    /// Full-vocabulary distribution from a dense row of logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        let lse = log_sum_exp(logits.iter().copied());
        let entries = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| TokenLogProb {
                token: i as u32,
                logprob: l - lse,
            })
            .collect();
        Self::new(entries, Some(0.0), logits.len() as u32)
    }

    pub fn entries(&self) -> &[TokenLogProb] {
        &self.entries
    }

    pub fn tail_mass(&self) -> Option<f64> {
        self.tail_mass
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Listed logprob of `token`, if present.
    pub fn logprob(&self, token: u32) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.token == token)
            .map(|e| e.logprob)
    }

    /// Listed logprob of `token`, or the absent-token floor.
    pub fn logprob_or_floor(&self, token: u32) -> f64 {
        self.logprob(token).unwrap_or(ABSENT_LOGPROB)
    }

    pub fn prob(&self, token: u32) -> Option<f64> {
        self.logprob(token).map(f64::exp)
    }

    /// Total probability of the listed entries.
    pub fn listed_mass(&self) -> f64 {
        log_sum_exp(self.entries.iter().map(|e| e.logprob)).exp()
    }

    /// Dense probability vector over the whole vocabulary; unlisted tokens get 0.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size as usize];
        for e in &self.entries {
            out[e.token as usize] = e.logprob.exp();
        }
        out
    }
}

/// Which construction produced a [`SupportSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    TopK,
    Union,
    Explicit,
}

/// An ordered (ascending id) set of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportSet {
    ids: Vec<u32>,
    kind: SupportKind,
    /// Requested K when `top_k` had to clamp to the number of listed entries.
    clamped_from: Option<usize>,
}

impl SupportSet {
    pub fn new(ids: impl IntoIterator<Item = u32>) -> Self {
        let mut ids: Vec<u32> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        Self {
            ids,
            kind: SupportKind::Explicit,
            clamped_from: None,
        }
    }

    /// Every token listed by `dist`.
    pub fn listed(dist: &SparseTokenDist) -> Self {
        Self::new(dist.entries().iter().map(|e| e.token))
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn kind(&self) -> SupportKind {
        self.kind
    }

    pub fn clamped_from(&self) -> Option<usize> {
        self.clamped_from
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, token: u32) -> bool {
        self.ids.binary_search(&token).is_ok()
    }

    pub fn intersection_len(&self, other: &SupportSet) -> usize {
        self.ids.iter().filter(|t| other.contains(**t)).count()
    }

    pub fn intersection(&self, other: &SupportSet) -> SupportSet {
        SupportSet::new(self.ids.iter().copied().filter(|t| other.contains(*t)))
    }
}

/// Numerically stable `ln Σ exp(x)`; `-inf` for an empty input.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Entropy in nats of the listed entries after renormalizing them to sum to one.
///
/// This is a truncated entropy: any tail mass is ignored.
pub fn entropy(dist: &SparseTokenDist) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::Domain("entropy of an empty distribution".into()));
    }
    let logz = log_sum_exp(dist.entries.iter().map(|e| e.logprob));
    let h: f64 = dist
        .entries
        .iter()
        .map(|e| {
            let l = e.logprob - logz;
            -l.exp() * l
        })
        .sum();
    Ok(h.max(0.0))
}

/// The `k` most probable listed tokens. `k` larger than the entry count is
/// clamped, and the clamp is recorded on the returned set.
pub fn top_k(dist: &SparseTokenDist, k: usize) -> Result<SupportSet> {
    if k == 0 {
        return Err(Error::Domain("top-K requires K >= 1".into()));
    }
    let take = k.min(dist.len());
    let mut set = SupportSet::new(dist.entries[..take].iter().map(|e| e.token));
    set.kind = SupportKind::TopK;
    set.clamped_from = (take < k).then_some(k);
    Ok(set)
}

pub fn union_support(s: &SupportSet, t: &SupportSet) -> SupportSet {
    let mut u = SupportSet::new(s.ids.iter().chain(t.ids.iter()).copied());
    u.kind = SupportKind::Union;
    u
}

/// Restricts `dist` to `support` and renormalizes. Support tokens missing from
/// the listed entries receive [`ABSENT_LOGPROB`] before renormalization.
pub fn renormalize_on(dist: &SparseTokenDist, support: &SupportSet) -> Result<SparseTokenDist> {
    let restricted = restricted_logprobs(dist, support)?;
    let entries = support
        .ids
        .iter()
        .zip(restricted)
        .map(|(&token, logprob)| TokenLogProb { token, logprob })
        .collect();
    SparseTokenDist::new(entries, Some(0.0), dist.vocab_size)
}

/// Renormalized logprobs aligned with `support.ids()`.
fn restricted_logprobs(dist: &SparseTokenDist, support: &SupportSet) -> Result<Vec<f64>> {
    let raw: Vec<(f64, bool)> = support
        .ids
        .iter()
        .map(|&t| match dist.logprob(t) {
            Some(l) => (l, true),
            None => (ABSENT_LOGPROB, false),
        })
        .collect();
    let retained = log_sum_exp(raw.iter().filter(|(_, listed)| *listed).map(|(l, _)| *l)).exp();
    if !(retained > MASS_FLOOR) {
        return Err(Error::DegenerateSupport {
            retained_mass: retained,
        });
    }
    let logz = log_sum_exp(raw.iter().map(|(l, _)| *l));
    Ok(raw.into_iter().map(|(l, _)| l - logz).collect())
}

/// `KL(p || q)` in nats after renormalizing both on `support`.
pub fn kl(p: &SparseTokenDist, q: &SparseTokenDist, support: &SupportSet) -> Result<f64> {
    let lp = restricted_logprobs(p, support)?;
    let lq = restricted_logprobs(q, support)?;
    let d: f64 = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum();
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(probs: &[(u32, f64)], vocab: u32) -> SparseTokenDist {
        SparseTokenDist::from_probs(probs, None, vocab).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let uniform = dist(&[(0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)], 4);
        assert_abs_diff_eq!(entropy(&uniform).unwrap(), 4f64.ln(), epsilon = 1e-12);

        let point = dist(&[(3, 1.0)], 8);
        assert_eq!(entropy(&point).unwrap(), 0.0);

        // -(0.5 ln 0.5 + 2 * 0.25 ln 0.25) = 1.0397207708
        let skew = dist(&[(0, 0.5), (1, 0.25), (2, 0.25)], 3);
        assert_abs_diff_eq!(entropy(&skew).unwrap(), 1.039_720_770_8, epsilon = 1e-9);
    }

    #[test]
    fn entropy_of_empty_is_error() {
        let empty = SparseTokenDist::new(vec![], None, 4).unwrap();
        assert!(matches!(entropy(&empty), Err(Error::Domain(_))));
    }

    #[test]
    fn truncated_entropy_ignores_tail() {
        let d = SparseTokenDist::from_probs(&[(0, 0.3), (1, 0.3)], Some(0.4), 10).unwrap();
        assert_abs_diff_eq!(entropy(&d).unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn top_k_ordering_and_ties() {
        let d = dist(&[(0, 0.5), (1, 0.3), (2, 0.2)], 3);
        assert_eq!(top_k(&d, 2).unwrap().ids(), &[0, 1]);

        let tie = dist(&[(5, 0.4), (2, 0.4), (7, 0.2)], 8);
        assert_eq!(top_k(&tie, 1).unwrap().ids(), &[2]);

        let all = top_k(&d, 3).unwrap();
        assert_eq!(all.ids(), &[0, 1, 2]);
        assert_eq!(all.clamped_from(), None);

        let clamped = top_k(&d, 10).unwrap();
        assert_eq!(clamped.len(), 3);
        assert_eq!(clamped.clamped_from(), Some(10));

        assert!(matches!(top_k(&d, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn union_examples() {
        let a = SupportSet::new([0, 1]);
        let b = SupportSet::new([2, 3]);
        assert_eq!(union_support(&a, &b).len(), 4);
        assert_eq!(union_support(&a, &a).ids(), a.ids());
        let c = SupportSet::new([1, 2]);
        assert_eq!(union_support(&a, &c).ids(), &[0, 1, 2]);
        assert_eq!(union_support(&a, &c).kind(), SupportKind::Union);
    }

    #[test]
    fn renormalize_examples() {
        let d = dist(&[(0, 0.2), (1, 0.3), (2, 0.5)], 3);
        let r = renormalize_on(&d, &SupportSet::new([0, 1])).unwrap();
        assert_abs_diff_eq!(r.prob(0).unwrap(), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(r.prob(1).unwrap(), 0.6, epsilon = 1e-12);

        let same = renormalize_on(&d, &SupportSet::new([0, 1, 2])).unwrap();
        for t in 0..3 {
            assert_abs_diff_eq!(same.prob(t).unwrap(), d.prob(t).unwrap(), epsilon = 1e-12);
        }

        let err = renormalize_on(&d, &SupportSet::new([5])).unwrap_err();
        assert!(matches!(err, Error::DegenerateSupport { .. }));
    }

    #[test]
    fn renormalize_assigns_floor_to_absent_tokens() {
        let d = dist(&[(0, 0.5), (1, 0.5)], 4);
        let r = renormalize_on(&d, &SupportSet::new([0, 1, 3])).unwrap();
        let z = 1.0 + ABSENT_LOGPROB.exp();
        assert_abs_diff_eq!(r.prob(3).unwrap(), ABSENT_LOGPROB.exp() / z, epsilon = 1e-20);
        assert_abs_diff_eq!(r.listed_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[(0, 0.7), (1, 0.3)], 2);
        let full = SupportSet::new([0, 1]);
        assert_eq!(kl(&p, &p, &full).unwrap(), 0.0);

        // p = {a: 1}: the single listed term gives ln(1 / 0.5).
        let point = dist(&[(0, 1.0)], 2);
        let half = dist(&[(0, 0.5), (1, 0.5)], 2);
        assert_abs_diff_eq!(kl(&point, &half, &full).unwrap(), 2f64.ln(), epsilon = 1e-10);

        // Brute-force values of both directions for {0.9, 0.1} vs {0.5, 0.5}.
        let skew = dist(&[(0, 0.9), (1, 0.1)], 2);
        assert_abs_diff_eq!(kl(&skew, &half, &full).unwrap(), 0.368_064_0, epsilon = 1e-6);
        assert_abs_diff_eq!(kl(&half, &skew, &full).unwrap(), 0.510_825_6, epsilon = 1e-6);
    }

    #[test]
    fn validation_rejects_bad_input() {
        assert!(SparseTokenDist::from_probs(&[(0, 0.6), (0, 0.4)], None, 2).is_err());
        assert!(SparseTokenDist::from_probs(&[(4, 0.6)], None, 2).is_err());
        assert!(SparseTokenDist::from_probs(&[(0, 0.8), (1, 0.4)], None, 2).is_err());
        assert!(SparseTokenDist::from_probs(&[(0, 0.5)], Some(0.1), 2).is_err());
        assert!(SparseTokenDist::from_probs(&[(0, 0.5)], Some(0.5), 2).is_ok());
    }
}

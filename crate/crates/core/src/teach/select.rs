use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::normalize::NormalizedStats;
use crate::error::{Error, Result};

/// Budgeted position selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    /// Every valid position.
    Full,
    /// `n` valid positions drawn uniformly.
    Random,
    Entropy,
    Kl,
    Compat,
    Tip,
    /// Teachability `D̃·C̃` (TA-OPD).
    Teach,
    TeachEntropy,
    Incompat,
    /// Q3 positions ranked by `D̃`.
    Q3Only,
    Q3HighLearn,
    Q3LowLearn,
    Q3HighIncomp,
    Q3HighCompat,
    Q3LowCompat,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 15] = [
        SelectorKind::Full,
        SelectorKind::Random,
        SelectorKind::Entropy,
        SelectorKind::Kl,
        SelectorKind::Compat,
        SelectorKind::Tip,
        SelectorKind::Teach,
        SelectorKind::TeachEntropy,
        SelectorKind::Incompat,
        SelectorKind::Q3Only,
        SelectorKind::Q3HighLearn,
        SelectorKind::Q3LowLearn,
        SelectorKind::Q3HighIncomp,
        SelectorKind::Q3HighCompat,
        SelectorKind::Q3LowCompat,
    ];

    /// Selectors whose score is a column of the score table.
    pub const SCORED: [SelectorKind; 7] = [
        SelectorKind::Entropy,
        SelectorKind::Kl,
        SelectorKind::Compat,
        SelectorKind::Tip,
        SelectorKind::Teach,
        SelectorKind::TeachEntropy,
        SelectorKind::Incompat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::Full => "full",
            SelectorKind::Random => "random",
            SelectorKind::Entropy => "entropy",
            SelectorKind::Kl => "kl",
            SelectorKind::Compat => "compat",
            SelectorKind::Tip => "tip",
            SelectorKind::Teach => "teach",
            SelectorKind::TeachEntropy => "teach_entropy",
            SelectorKind::Incompat => "incompat",
            SelectorKind::Q3Only => "q3",
            SelectorKind::Q3HighLearn => "q3_high_dl",
            SelectorKind::Q3LowLearn => "q3_low_dl",
            SelectorKind::Q3HighIncomp => "q3_high_di",
            SelectorKind::Q3HighCompat => "q3_high_c",
            SelectorKind::Q3LowCompat => "q3_low_c",
        }
    }

    pub fn is_q3(self) -> bool {
        matches!(
            self,
            SelectorKind::Q3Only
                | SelectorKind::Q3HighLearn
                | SelectorKind::Q3LowLearn
                | SelectorKind::Q3HighIncomp
                | SelectorKind::Q3HighCompat
                | SelectorKind::Q3LowCompat
        )
    }

    /// Per-token score of a plain (non-Q3) scored selector.
    pub fn plain_score(self, n: &NormalizedStats) -> Option<f64> {
        let s = &n.scores;
        Some(match self {
            SelectorKind::Entropy => s.entropy,
            SelectorKind::Kl => s.kl,
            SelectorKind::Compat => s.compat,
            SelectorKind::Tip => s.tip,
            SelectorKind::Teach => s.teach,
            SelectorKind::TeachEntropy => s.teach_entropy,
            SelectorKind::Incompat => s.incompat,
            _ => return None,
        })
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        if let Some(k) = SelectorKind::ALL.iter().find(|k| k.name() == key) {
            return Ok(*k);
        }
        match key.as_str() {
            "ta_opd" | "teachability" => Ok(SelectorKind::Teach),
            "raw_kl" | "d" => Ok(SelectorKind::Kl),
            "h" => Ok(SelectorKind::Entropy),
            "c" => Ok(SelectorKind::Compat),
            "ta_opd_ent" | "h_teach" => Ok(SelectorKind::TeachEntropy),
            _ => Err(Error::Domain(format!("unknown selector `{s}`"))),
        }
    }
}

/// Ranking scores for `kind`, or `None` for selectors that do not rank
/// (full, random).
///
/// Q3 selectors rank every Q3 token above every other token, so the exact
/// budget is still met when Q3 is smaller than `n`.
pub fn selector_scores(
    norm: &[NormalizedStats],
    kind: SelectorKind,
    q3: &[bool],
) -> Option<Vec<f64>> {
    if let Some(first) = norm.first() {
        if kind.plain_score(first).is_some() {
            return Some(norm.iter().map(|n| kind.plain_score(n).unwrap_or(0.0)).collect());
        }
    }
    let base: fn(&NormalizedStats) -> f64 = match kind {
        SelectorKind::Q3Only => |n| n.d_tilde,
        SelectorKind::Q3HighLearn => |n| n.d_learn,
        SelectorKind::Q3LowLearn => |n| 1.0 - n.d_learn,
        SelectorKind::Q3HighIncomp => |n| n.d_incomp,
        SelectorKind::Q3HighCompat => |n| n.c_tilde,
        SelectorKind::Q3LowCompat => |n| 1.0 - n.c_tilde,
        SelectorKind::Full | SelectorKind::Random => return None,
        _ => return Some(Vec::new()),
    };
    Some(
        norm.iter()
            .zip(q3)
            .map(|(n, &inside)| if inside { 1.0 + base(n) } else { base(n) - 1.0 })
            .collect(),
    )
}

/// A binary keep-mask over positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub selector: SelectorKind,
    pub rho: f64,
    pub n_kept: usize,
    pub keep: Vec<bool>,
    /// Seed used by the random selector.
    pub seed: Option<u64>,
}

impl SelectionMask {
    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i)
    }

    /// Kept fraction of all positions (valid or not).
    pub fn keep_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            0.0
        } else {
            self.n_kept as f64 / self.keep.len() as f64
        }
    }
}

/// `⌈rho · n_valid⌉`, treating products within 1e-9 of an integer as exact.
pub fn budget_size(rho: f64, n_valid: usize) -> usize {
    let x = rho * n_valid as f64;
    let r = x.round();
    let n = if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (n as usize).clamp(1, n_valid)
}

/// Keeps the top `⌈rho·|valid|⌉` valid positions by score; ties go to the
/// lower index.
pub fn select(
    scores: &[f64],
    valid: &[bool],
    rho: f64,
    selector: SelectorKind,
    seed: u64,
) -> Result<SelectionMask> {
    select_with_tie_order(scores, valid, rho, selector, seed, None)
}

/// Like [`select`], with score ties broken by ascending `tie_rank[i]` instead
/// of the index.
pub fn select_with_tie_order(
    scores: &[f64],
    valid: &[bool],
    rho: f64,
    selector: SelectorKind,
    seed: u64,
    tie_rank: Option<&[usize]>,
) -> Result<SelectionMask> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("retention ratio {rho} outside (0, 1]")));
    }
    let candidates: Vec<usize> = valid
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut keep = vec![false; valid.len()];
    let (rho, n, seed) = match selector {
        SelectorKind::Full => {
            for &i in &candidates {
                keep[i] = true;
            }
            (1.0, candidates.len(), None)
        }
        SelectorKind::Random => {
            let n = budget_size(rho, candidates.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for j in index::sample(&mut rng, candidates.len(), n) {
                keep[candidates[j]] = true;
            }
            (rho, n, Some(seed))
        }
        _ => {
            if scores.len() != valid.len() {
                return Err(Error::Misaligned {
                    what: "scores",
                    expected: valid.len(),
                    found: scores.len(),
                });
            }
            let n = budget_size(rho, candidates.len());
            let mut order = candidates;
            let rank = |i: usize| tie_rank.map_or(i, |r| r[i]);
            let key = |i: usize| if scores[i].is_nan() { f64::NEG_INFINITY } else { scores[i] };
            order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(rank(a).cmp(&rank(b))));
            for &i in &order[..n] {
                keep[i] = true;
            }
            (rho, n, None)
        }
    };
    Ok(SelectionMask {
        selector,
        rho,
        n_kept: n,
        keep,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_keeps_all_valid() {
        let valid = vec![true, false, true, true];
        let m = select(&[0.0; 4], &valid, 1.0, SelectorKind::Full, 0).unwrap();
        assert_eq!(m.keep, valid);
        assert_eq!(m.n_kept, 3);
        let m = select(&[0.0; 4], &valid, 1.0, SelectorKind::Teach, 0).unwrap();
        assert_eq!(m.keep, valid);
    }

    #[test]
    fn ceiling_budget() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let m = select(&scores, &[true; 100], 0.05, SelectorKind::Kl, 0).unwrap();
        assert_eq!(m.n_kept, 5);
        assert_eq!(m.kept_indices().collect::<Vec<_>>(), vec![95, 96, 97, 98, 99]);
        assert_eq!(budget_size(0.03, 100), 3);
        assert_eq!(budget_size(0.07, 100), 7);
        assert_eq!(budget_size(0.01, 150), 2);
        assert_eq!(budget_size(0.001, 10), 1);
    }

    #[test]
    fn ties_go_to_lower_position() {
        let mut scores = vec![0.0; 10];
        scores[7] = 1.0;
        scores[3] = 1.0;
        let m = select(&scores, &[true; 10], 0.1, SelectorKind::Teach, 0).unwrap();
        assert_eq!(m.kept_indices().collect::<Vec<_>>(), vec![3]);

        let mut rank: Vec<usize> = (0..10).collect();
        rank.swap(3, 7);
        let m = select_with_tie_order(&scores, &[true; 10], 0.1, SelectorKind::Teach, 0, Some(&rank))
            .unwrap();
        assert_eq!(m.kept_indices().collect::<Vec<_>>(), vec![7]);
    }

    #[test]
    fn random_is_reproducible_and_respects_validity() {
        let valid: Vec<bool> = (0..200).map(|i| i % 3 != 0).collect();
        let a = select(&[], &valid, 0.1, SelectorKind::Random, 42).unwrap();
        let b = select(&[], &valid, 0.1, SelectorKind::Random, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_kept, budget_size(0.1, 133));
        assert!(a.kept_indices().all(|i| valid[i]));
        let c = select(&[], &valid, 0.1, SelectorKind::Random, 43).unwrap();
        assert_ne!(a.keep, c.keep);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            select(&[1.0], &[false], 0.5, SelectorKind::Kl, 0),
            Err(Error::EmptySelection)
        ));
        assert!(select(&[1.0], &[true], 0.0, SelectorKind::Kl, 0).is_err());
        assert!(select(&[1.0], &[true], 1.5, SelectorKind::Kl, 0).is_err());
    }

    #[test]
    fn selector_names_round_trip() {
        for k in SelectorKind::ALL {
            assert_eq!(k.name().parse::<SelectorKind>().unwrap(), k);
        }
        assert_eq!("TA-OPD".parse::<SelectorKind>().unwrap(), SelectorKind::Teach);
        assert!("bogus".parse::<SelectorKind>().is_err());
    }

    #[test]
    fn q3_selectors_prioritize_q3() {
        let norm: Vec<_> = [(0.9, 0.1), (0.2, 0.9), (0.8, 0.8)]
            .iter()
            .map(|&(d, c)| NormalizedStats::from_normalized(d, c, 0.0))
            .collect();
        let q3 = [false, true, true];
        let s = selector_scores(&norm, SelectorKind::Q3HighLearn, &q3).unwrap();
        let m = select(&s, &[true; 3], 0.3, SelectorKind::Q3HighLearn, 0).unwrap();
        assert_eq!(m.kept_indices().collect::<Vec<_>>(), vec![2]);
        let s = selector_scores(&norm, SelectorKind::Q3LowLearn, &q3).unwrap();
        let m = select(&s, &[true; 3], 0.3, SelectorKind::Q3LowLearn, 0).unwrap();
        assert_eq!(m.kept_indices().collect::<Vec<_>>(), vec![1]);
        assert!(selector_scores(&norm, SelectorKind::Random, &q3).is_none());
    }
}

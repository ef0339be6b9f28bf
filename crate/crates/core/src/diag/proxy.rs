use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bootstrap::{cluster_replicates, percentile_ci, BootstrapCi, ClusterIndex};
use super::rows::DiagnosticRow;
use crate::error::{Error, Result};

/// Observable stand-ins for how much of the teacher's correction lies on the
/// student's local support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportProxy {
    /// Teacher mass on the student top-K.
    CMass,
    /// `|S_student ∩ S_teacher| / K`.
    TopkOverlap,
    /// `|S_student ∩ S_teacher| / |S_student ∪ S_teacher|`.
    Jaccard,
    /// Teacher mass on the intersection of both top-K sets.
    SharedTeacherMass,
}

impl SupportProxy {
    pub const ALL: [SupportProxy; 4] = [
        SupportProxy::CMass,
        SupportProxy::TopkOverlap,
        SupportProxy::Jaccard,
        SupportProxy::SharedTeacherMass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SupportProxy::CMass => "c_mass",
            SupportProxy::TopkOverlap => "topk_overlap",
            SupportProxy::Jaccard => "jaccard",
            SupportProxy::SharedTeacherMass => "shared_teacher_mass",
        }
    }

    pub fn value(self, row: &DiagnosticRow) -> f64 {
        match self {
            SupportProxy::CMass => row.stats.c,
            SupportProxy::TopkOverlap => row.stats.topk_overlap(),
            SupportProxy::Jaccard => row.stats.jaccard(),
            SupportProxy::SharedTeacherMass => row.stats.c_hat,
        }
    }
}

impl fmt::Display for SupportProxy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SupportProxy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SupportProxy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown support proxy `{s}`")))
    }
}

/// High-versus-low comparison of gains inside Q3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyAudit {
    pub key: String,
    pub n_q3: usize,
    pub n_high: usize,
    pub n_low: usize,
    pub mean_high: f64,
    pub mean_low: f64,
    /// `mean_high - mean_low` with a prompt-cluster interval.
    pub gap: BootstrapCi,
}

/// Ranks the Q3 rows by `key` (ties by row order) and compares the mean gain
/// of the upper half with the lower half. With an odd count the middle row is
/// left out.
pub fn q3_split<F>(
    rows: &[DiagnosticRow],
    key_name: &str,
    key: F,
    resamples: usize,
    seed: u64,
) -> Result<ProxyAudit>
where
    F: Fn(&DiagnosticRow) -> f64,
{
    let mut q3: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.in_q3)
        .map(|(i, r)| (i, key(r)))
        .collect();
    if q3.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Q3 subset has {} rows; need at least 2",
            q3.len()
        )));
    }
    q3.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let half = q3.len() / 2;
    let low: Vec<usize> = q3[..half].iter().map(|x| x.0).collect();
    let high: Vec<usize> = q3[q3.len() - half..].iter().map(|x| x.0).collect();

    let clusters: Vec<&str> = rows.iter().map(|r| r.prompt_id.as_str()).collect();
    let index = ClusterIndex::new(&clusters);
    if index.len() < 2 {
        return Err(Error::InsufficientData("proxy audit needs at least two clusters".into()));
    }
    // Per cluster: (sum high, n high, sum low, n low).
    let mut acc = vec![[0.0f64; 4]; index.len()];
    for &i in &high {
        let a = &mut acc[index.row_cluster[i]];
        a[0] += rows[i].gain;
        a[1] += 1.0;
    }
    for &i in &low {
        let a = &mut acc[index.row_cluster[i]];
        a[2] += rows[i].gain;
        a[3] += 1.0;
    }
    let gap_of = |w: &dyn Fn(usize) -> f64| {
        let mut t = [0.0; 4];
        for (g, a) in acc.iter().enumerate() {
            let c = w(g);
            for k in 0..4 {
                t[k] += c * a[k];
            }
        }
        (t[0] / t[1], t[2] / t[3])
    };
    let (mean_high, mean_low) = gap_of(&|_| 1.0);
    let reps = cluster_replicates(index.len(), resamples, seed, |counts| {
        let (h, l) = gap_of(&|g| counts[g] as f64);
        h - l
    });
    let gap = percentile_ci(mean_high - mean_low, &reps);
    Ok(ProxyAudit {
        key: key_name.to_string(),
        n_q3: q3.len(),
        n_high: high.len(),
        n_low: low.len(),
        mean_high,
        mean_low,
        gap,
    })
}

/// Q3 high-versus-low gain gap split on a support proxy.
pub fn support_proxy_audit(
    rows: &[DiagnosticRow],
    proxy: SupportProxy,
    resamples: usize,
    seed: u64,
) -> Result<ProxyAudit> {
    q3_split(rows, proxy.name(), |r| proxy.value(r), resamples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teach::{NormalizedStats, TokenStats};

    fn row(i: usize, c: f64, gain: f64, in_q3: bool) -> DiagnosticRow {
        DiagnosticRow {
            prompt_id: format!("p{}", i % 6),
            context_id: format!("c{i}"),
            position: 0,
            gain,
            stats: TokenStats {
                d: 1.0,
                c,
                c_hat: c,
                c_exact: true,
                h_student: 0.1,
                h_teacher: 0.1,
                raw_kl_sampled: 0.0,
                pos_norm: 0.0,
                k: 4,
                k_clamped: false,
                overlap: 4,
                union_len: 4,
                valid: true,
            },
            norm: NormalizedStats::from_normalized(1.0, c, 0.0),
            in_q3,
        }
    }

    #[test]
    fn planted_gap_is_detected() {
        let rows: Vec<_> = (0..60)
            .map(|i| {
                let c = (i % 10) as f64 / 10.0;
                row(i, c, if c >= 0.5 { 1.0 } else { -1.0 }, true)
            })
            .collect();
        let a = support_proxy_audit(&rows, SupportProxy::CMass, 200, 0).unwrap();
        assert_eq!(a.n_high, 30);
        assert_eq!(a.gap.estimate, 2.0);
        assert!(a.gap.ci_low > 1.9);
    }

    #[test]
    fn independent_gains_cover_zero() {
        let rows: Vec<_> = (0..120)
            .map(|i| row(i, ((i * 7) % 11) as f64 / 11.0, ((i * 13) % 5) as f64, true))
            .collect();
        let a = support_proxy_audit(&rows, SupportProxy::Jaccard, 500, 1).unwrap();
        assert!(a.gap.covers(0.0), "{a:?}");
    }

    #[test]
    fn empty_q3_is_an_error() {
        let rows: Vec<_> = (0..10).map(|i| row(i, 0.5, 0.0, false)).collect();
        assert!(support_proxy_audit(&rows, SupportProxy::CMass, 10, 0).is_err());
    }

    #[test]
    fn overlap_and_jaccard_definitions() {
        let mut r = row(0, 1.0, 0.0, true);
        assert_eq!(SupportProxy::TopkOverlap.value(&r), 1.0);
        assert_eq!(SupportProxy::Jaccard.value(&r), 1.0);
        r.stats.overlap = 0;
        r.stats.union_len = 8;
        assert_eq!(SupportProxy::TopkOverlap.value(&r), 0.0);
        assert_eq!(SupportProxy::Jaccard.value(&r), 0.0);
    }
}

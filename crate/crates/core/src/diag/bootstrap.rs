use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::teach::quantile;

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Point estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
}

impl BootstrapCi {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// SplitMix64 finalizer applied to `seed` and `stream`; gives every resample
/// its own independent RNG regardless of worker count.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Groups row indices by cluster key, in first-seen order.
#[derive(Debug, Clone)]
pub struct ClusterIndex {
    pub keys: Vec<String>,
    /// Cluster number of each row.
    pub row_cluster: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl ClusterIndex {
    pub fn new<S: AsRef<str>>(clusters: &[S]) -> Self {
        let mut lookup: BTreeMap<&str, usize> = BTreeMap::new();
        let mut keys = Vec::new();
        let mut sizes = Vec::new();
        let row_cluster = clusters
            .iter()
            .map(|c| {
                let c = c.as_ref();
                let id = *lookup.entry(c).or_insert_with(|| {
                    keys.push(c.to_string());
                    sizes.push(0);
                    keys.len() - 1
                });
                sizes[id] += 1;
                id
            })
            .collect();
        Self {
            keys,
            row_cluster,
            sizes,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Evaluates `stat` on `resamples` cluster resamples. Each resample draws
/// `n_clusters` clusters with replacement and passes the draw count of every
/// cluster to `stat`. Output order follows the resample index.
pub fn cluster_replicates<T, F>(n_clusters: usize, resamples: usize, seed: u64, stat: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[u32]) -> T + Sync,
{
    (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            let mut counts = vec![0u32; n_clusters];
            for _ in 0..n_clusters {
                counts[rng.random_range(0..n_clusters)] += 1;
            }
            stat(&counts)
        })
        .collect()
}

/// 2.5 / 97.5 percentile interval around `estimate`. Non-finite replicates
/// are dropped.
pub fn percentile_ci(estimate: f64, replicates: &[f64]) -> BootstrapCi {
    let finite: Vec<f64> = replicates.iter().copied().filter(|x| x.is_finite()).collect();
    BootstrapCi {
        estimate,
        ci_low: quantile(&finite, 0.025),
        ci_high: quantile(&finite, 0.975),
        resamples: finite.len(),
    }
}

/// Prompt-cluster bootstrap of the token-level mean.
pub fn cluster_bootstrap<S: AsRef<str>>(
    values: &[(S, f64)],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCi> {
    let keys: Vec<&str> = values.iter().map(|(c, _)| c.as_ref()).collect();
    let index = ClusterIndex::new(&keys);
    if index.len() < 2 {
        return Err(Error::InsufficientData(
            "cluster bootstrap needs at least two clusters".into(),
        ));
    }
    if resamples == 0 {
        return Err(Error::Domain("bootstrap needs at least one resample".into()));
    }
    let mut sums = vec![0.0; index.len()];
    for ((_, v), &c) in values.iter().zip(&index.row_cluster) {
        sums[c] += v;
    }
    let total: f64 = sums.iter().sum();
    let estimate = total / values.len() as f64;
    let reps = cluster_replicates(index.len(), resamples, seed, |counts| {
        let (mut s, mut n) = (0.0, 0.0);
        for (k, &c) in counts.iter().enumerate() {
            s += c as f64 * sums[k];
            n += c as f64 * index.sizes[k] as f64;
        }
        s / n
    });
    Ok(percentile_ci(estimate, &reps))
}

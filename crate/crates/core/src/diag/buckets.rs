use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub index: usize,
    pub mean_score: f64,
    pub mean_gain: f64,
    pub count: usize,
}

/// Splits rows into `n_buckets` equal-count bins by ascending score (ties by
/// row index) and averages score and gain within each bin.
pub fn bucket_trend(scores: &[f64], gains: &[f64], n_buckets: usize) -> Result<Vec<Bucket>> {
    if scores.len() != gains.len() {
        return Err(Error::Misaligned {
            what: "gains",
            expected: scores.len(),
            found: gains.len(),
        });
    }
    if n_buckets < 2 {
        return Err(Error::Domain("bucket trend needs at least two buckets".into()));
    }
    if scores.len() < n_buckets {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot fill {n_buckets} buckets",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let base = scores.len() / n_buckets;
    let extra = scores.len() % n_buckets;
    let mut out = Vec::with_capacity(n_buckets);
    let mut start = 0;
    for index in 0..n_buckets {
        let count = base + usize::from(index < extra);
        let rows = &order[start..start + count];
        start += count;
        let mean = |v: &[f64]| rows.iter().map(|&i| v[i]).sum::<f64>() / count as f64;
        out.push(Bucket {
            index,
            mean_score: mean(scores),
            mean_gain: mean(gains),
            count,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_gains_increase_across_buckets() {
        let s: Vec<f64> = (0..103).map(|i| ((i * 37) % 103) as f64).collect();
        let b = bucket_trend(&s, &s, 10).unwrap();
        assert_eq!(b.len(), 10);
        assert!(b.windows(2).all(|w| w[1].mean_gain > w[0].mean_gain));
        let counts: Vec<usize> = b.iter().map(|x| x.count).collect();
        assert_eq!(counts.iter().sum::<usize>(), 103);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn constant_gains_are_flat() {
        let s: Vec<f64> = (0..50).map(f64::from).collect();
        let b = bucket_trend(&s, &[2.0; 50], 5).unwrap();
        assert!(b.iter().all(|x| x.mean_gain == 2.0));
    }

    #[test]
    fn too_few_rows() {
        assert!(bucket_trend(&[1.0, 2.0], &[0.0, 0.0], 3).is_err());
        assert!(bucket_trend(&[1.0, 2.0], &[0.0, 0.0], 1).is_err());
    }
}

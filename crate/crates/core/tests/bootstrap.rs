use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use teachable::diag::{cluster_bootstrap, cluster_replicates};

/// Two clusters resampled with replacement give four equally likely draws:
/// AA, AB, BA, BB. The replicate mean can only be mean(A), mean(B), or the
/// pooled mean, with probabilities 1/4, 1/4, 1/2.
#[test]
fn two_cluster_enumeration() {
    let rows = vec![("a", 1.0), ("a", 3.0), ("b", 10.0), ("b", 11.0), ("b", 12.0)];
    let (mean_a, mean_b, pooled) = (2.0, 11.0, 37.0 / 5.0);
    let sums = [4.0, 33.0];
    let sizes = [2.0, 3.0];
    let reps = cluster_replicates(2, 8000, 5, |counts| {
        let s: f64 = counts.iter().zip(sums).map(|(&c, s)| c as f64 * s).sum();
        let n: f64 = counts.iter().zip(sizes).map(|(&c, n)| c as f64 * n).sum();
        s / n
    });
    let mut freq = [0usize; 3];
    for r in &reps {
        let hit = [mean_a, mean_b, pooled].iter().position(|m| (r - m).abs() < 1e-12);
        freq[hit.expect("replicate outside the enumerated support")] += 1;
    }
    let share = freq.map(|f| f as f64 / reps.len() as f64);
    assert!((share[0] - 0.25).abs() < 0.03, "{share:?}");
    assert!((share[1] - 0.25).abs() < 0.03, "{share:?}");
    assert!((share[2] - 0.5).abs() < 0.03, "{share:?}");

    // 2.5% and 97.5% fall inside the single-cluster atoms.
    let ci = cluster_bootstrap(&rows, 8000, 5).unwrap();
    assert_eq!(ci.estimate, pooled);
    assert!((ci.ci_low - mean_a).abs() < 1e-12);
    assert!((ci.ci_high - mean_b).abs() < 1e-12);
}

#[test]
fn replicates_do_not_depend_on_thread_count() {
    let stat = |c: &[u32]| c.iter().enumerate().map(|(i, &k)| (i as u32 + 1) * k).sum::<u32>();
    let a = cluster_replicates(20, 500, 11, stat);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| cluster_replicates(20, 500, 11, stat));
    assert_eq!(a, b);
}

#[test]
fn clustered_mean_interval_has_nominal_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let reps = 300;
    let mut covered = 0;
    for r in 0..reps {
        let mut rows = Vec::new();
        for c in 0..40 {
            let shock = normal();
            for _ in 0..25 {
                rows.push((format!("p{c}"), shock + normal()));
            }
        }
        covered += usize::from(cluster_bootstrap(&rows, 500, r).unwrap().covers(0.0));
    }
    let rate = covered as f64 / reps as f64;
    // 40 clusters; percentile intervals run slightly narrow.
    assert!(rate >= 0.88, "coverage {rate}");
}

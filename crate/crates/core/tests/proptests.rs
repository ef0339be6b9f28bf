use proptest::collection::vec;
use proptest::prelude::*;

use teachable::diag::{cluster_bootstrap, derive_seed};
use teachable::dist::{entropy, kl, top_k, union_support, SparseTokenDist};
use teachable::io::{write_dump, DumpHeader, DumpReader};
use teachable::teach::{
    budget_size, compute_stats, normalize_batch, q3_membership, quantile, robust_normalize, select,
    NormalizationConfig, Q3Spec, SelectorKind, TokenRecord,
};

/// Listed probabilities over distinct tokens of a `vocab`-sized vocabulary,
/// with the leftover mass as tail.
fn sparse(vocab: u32) -> impl Strategy<Value = SparseTokenDist> {
    (1..=vocab as usize)
        .prop_flat_map(move |listed| {
            (
                Just(listed),
                Just(vocab),
                proptest::sample::subsequence((0..vocab).collect::<Vec<_>>(), listed),
                vec(0.001f64..1.0, listed),
                0.0f64..0.5,
            )
        })
        .prop_map(|(_, vocab, ids, weights, tail)| {
            let z: f64 = weights.iter().sum();
            let probs: Vec<(u32, f64)> = ids
                .iter()
                .zip(&weights)
                .map(|(&t, &w)| (t, (1.0 - tail) * w / z))
                .collect();
            SparseTokenDist::from_probs(&probs, Some(tail), vocab).unwrap()
        })
}

fn pair() -> impl Strategy<Value = (SparseTokenDist, SparseTokenDist)> {
    (2u32..=40).prop_flat_map(|v| (sparse(v), sparse(v)))
}

fn record((student, teacher): (SparseTokenDist, SparseTokenDist), i: usize) -> TokenRecord {
    TokenRecord {
        prompt_id: format!("p{}", i % 3),
        context_id: format!("c{i}"),
        position: i as u32,
        batch: 0,
        sampled_token: student.entries()[0].token,
        student,
        teacher,
        valid: true,
    }
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_on_self((s, t) in pair(), k in 1usize..12) {
        let u = union_support(&top_k(&s, k).unwrap(), &top_k(&t, k).unwrap());
        prop_assert!(kl(&t, &s, &u).unwrap() >= 0.0);
        prop_assert!(kl(&s, &s, &u).unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_is_bounded_by_log_listed(d in (2u32..=40).prop_flat_map(sparse)) {
        let h = entropy(&d).unwrap();
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (d.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn compatibility_ordering(p in pair(), k in 1usize..12) {
        let st = compute_stats(&record(p, 0), k).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&st.c));
        prop_assert!(st.c_hat >= 0.0);
        prop_assert!(st.c_hat <= st.c + 1e-12);
        prop_assert!(st.d >= 0.0);
    }

    #[test]
    fn normalized_scores_stay_in_unit_range(pairs in vec(pair(), 1..40), k in 1usize..8) {
        let recs: Vec<TokenRecord> = pairs.into_iter().enumerate().map(|(i, p)| record(p, i)).collect();
        let stats: Vec<_> = recs.iter().map(|r| compute_stats(r, k).unwrap()).collect();
        for z in normalize_batch(&stats, &NormalizationConfig::default()) {
            for x in [z.d_tilde, z.c_tilde, z.h_tilde, z.d_learn, z.d_incomp, z.scores.tip] {
                prop_assert!((0.0..=1.0).contains(&x), "{x} out of range");
            }
            prop_assert!((z.d_learn + z.d_incomp - z.d_tilde).abs() <= 1e-12);
        }
    }

    #[test]
    fn robust_normalize_is_monotone(values in vec(-1e3f64..1e3, 1..200)) {
        let out = robust_normalize(&values, &NormalizationConfig::default());
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] < values[j] {
                    prop_assert!(out[i] <= out[j]);
                }
            }
        }
    }

    #[test]
    fn quantile_lies_between_extremes(values in vec(-1e6f64..1e6, 1..100), q in 0.0f64..=1.0) {
        let x = quantile(&values, q);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= x && x <= hi);
    }

    #[test]
    fn budget_is_a_clamped_ceiling(rho in 0.0001f64..=1.0, n in 1usize..100_000) {
        let b = budget_size(rho, n);
        prop_assert!((1..=n).contains(&b));
        prop_assert!(b as f64 >= (rho * n as f64) * (1.0 - 1e-9));
        prop_assert!(b == 1 || (b - 1) as f64 <= rho * n as f64 + 1e-9);
    }

    #[test]
    fn mask_has_budgeted_size_on_valid_rows(
        scores in vec(0.0f64..1.0, 1..500),
        flags in vec(any::<bool>(), 500),
        rho in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let valid: Vec<bool> = flags[..scores.len()].to_vec();
        let n_valid = valid.iter().filter(|&&v| v).count();
        prop_assume!(n_valid > 0);
        for sel in [SelectorKind::Teach, SelectorKind::Random, SelectorKind::Full] {
            let m = select(&scores, &valid, rho, sel, seed).unwrap();
            let expect = if sel == SelectorKind::Full { n_valid } else { budget_size(rho, n_valid) };
            prop_assert_eq!(m.n_kept, expect);
            prop_assert!(m.kept_indices().all(|i| valid[i]));
        }
    }

    #[test]
    fn kept_scores_dominate_dropped(scores in vec(0.0f64..1.0, 2..300), rho in 0.01f64..0.99) {
        let valid = vec![true; scores.len()];
        let m = select(&scores, &valid, rho, SelectorKind::Teach, 0).unwrap();
        let kept_min = m.kept_indices().map(|i| scores[i]).fold(f64::INFINITY, f64::min);
        let dropped_max = (0..scores.len()).filter(|&i| !m.keep[i]).map(|i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(kept_min >= dropped_max);
    }

    #[test]
    fn q3_members_are_low_entropy_high_kl(pairs in vec(pair(), 4..40)) {
        let recs: Vec<TokenRecord> = pairs.into_iter().enumerate().map(|(i, p)| record(p, i)).collect();
        let stats: Vec<_> = recs.iter().map(|r| compute_stats(r, 4).unwrap()).collect();
        let norm = normalize_batch(&stats, &NormalizationConfig::default());
        let spec = Q3Spec::default();
        let h: Vec<f64> = norm.iter().map(|z| z.h_tilde).collect();
        let d: Vec<f64> = norm.iter().map(|z| z.d_tilde).collect();
        let (qh, qd) = (quantile(&h, spec.entropy_quantile), quantile(&d, spec.kl_quantile));
        for (i, inside) in q3_membership(&norm, &spec).into_iter().enumerate() {
            prop_assert_eq!(inside, h[i] < qh && d[i] > qd);
        }
    }

    #[test]
    fn bootstrap_interval_brackets_replicate_range(
        values in vec((0usize..6, -10.0f64..10.0), 4..60),
        seed in any::<u64>(),
    ) {
        let rows: Vec<(String, f64)> = values.iter().map(|&(c, v)| (format!("c{c}"), v)).collect();
        prop_assume!(rows.iter().any(|r| r.0 != rows[0].0));
        let ci = cluster_bootstrap(&rows, 200, seed).unwrap();
        let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-9 <= ci.ci_low && ci.ci_low <= ci.ci_high && ci.ci_high <= hi + 1e-9);
        prop_assert_eq!(ci, cluster_bootstrap(&rows, 200, seed).unwrap());
    }

    #[test]
    fn derived_seeds_differ_across_streams(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(seed, a), derive_seed(seed, b));
    }

    #[test]
    fn dump_round_trip_is_stable(pairs in vec(pair(), 1..20)) {
        let recs: Vec<TokenRecord> = pairs.into_iter().enumerate().map(|(i, p)| record(p, i)).collect();
        // Mixed vocabularies are not allowed in one dump.
        let vocab = recs[0].student.vocab_size();
        let recs: Vec<TokenRecord> = recs.into_iter().filter(|r| r.student.vocab_size() == vocab).collect();
        let header = DumpHeader::new(vocab, 4, "proptest");
        let mut a = Vec::new();
        write_dump(&mut a, &header, &recs).unwrap();
        let back: Vec<TokenRecord> = DumpReader::new(&a[..]).unwrap().map(Result::unwrap).collect();
        let mut b = Vec::new();
        write_dump(&mut b, &header, &back).unwrap();
        prop_assert_eq!(a, b);
        for (x, y) in recs.iter().zip(&back) {
            for (ex, ey) in x.teacher.entries().iter().zip(y.teacher.entries()) {
                prop_assert_eq!(ex.token, ey.token);
                prop_assert!((ex.logprob - ey.logprob).abs() <= 1e-9);
            }
        }
    }
}

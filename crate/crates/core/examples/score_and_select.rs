//! Scores simulated rollouts and compares which positions each selector keeps
//! at a 5% budget.
//!
//! ```text
//! cargo run --release --example score_and_select
//! ```

use teachable::teach::{
    compute_stats_batch, normalize_batch, q3_membership, select, selector_scores, NormalizationConfig,
    Q3Spec, SelectorKind,
};
use teachable::toy::{simulate_records, SimulationConfig};

fn main() -> teachable::Result<()> {
    let cfg = SimulationConfig::default();
    let design = cfg.design(7)?;
    let (teacher, _) = design.build()?;
    // 64 rollouts of 32 tokens, truncated to top-8 lists like a real dump.
    let records = simulate_records(&design.base, &teacher, 64, 32, 7, Some(8))?;

    let stats = compute_stats_batch(&records, 4)?;
    let norm = normalize_batch(&stats, &NormalizationConfig::default());
    let q3 = q3_membership(&norm, &Q3Spec::default());
    let valid: Vec<bool> = records.iter().map(|r| r.valid).collect();
    println!(
        "{} positions, {} in the low-entropy / high-disagreement quadrant",
        records.len(),
        q3.iter().filter(|&&x| x).count()
    );

    println!("{:<10} {:>5} {:>8} {:>8} {:>8}", "selector", "kept", "mean D", "mean C", "in Q3");
    for kind in [
        SelectorKind::Random,
        SelectorKind::Entropy,
        SelectorKind::Kl,
        SelectorKind::Tip,
        SelectorKind::Teach,
        SelectorKind::Q3HighLearn,
    ] {
        let scores = selector_scores(&norm, kind, &q3).unwrap_or_else(|| vec![0.0; norm.len()]);
        let mask = select(&scores, &valid, 0.05, kind, 1)?;
        let kept: Vec<usize> = mask.kept_indices().collect();
        let n = kept.len() as f64;
        let mean = |f: &dyn Fn(usize) -> f64| kept.iter().map(|&i| f(i)).sum::<f64>() / n;
        println!(
            "{:<10} {:>5} {:>8.4} {:>8.4} {:>8.2}",
            kind.name(),
            kept.len(),
            mean(&|i| stats[i].d),
            mean(&|i| stats[i].c),
            mean(&|i| f64::from(u8::from(q3[i]))),
        );
    }
    Ok(())
}

//! Splits fixed-context gain into learnable and incompatible disagreement
//! with a standardized regression, then looks at bucket trends and support
//! proxies on the same rows.
//!
//! ```text
//! cargo run --release --example regression_diagnostic
//! ```

use teachable::diag::{
    bucket_trend, diagnostic_rows, standardized_regression, support_proxy_audit, Predictor,
    RegressionSpec, SupportProxy, INITIAL_CHECKPOINT,
};
use teachable::teach::{NormalizationConfig, NormalizationScope, Q3Spec, SelectorKind};
use teachable::toy::{run_id, simulate_seed, SimulationConfig};

fn main() -> teachable::Result<()> {
    let cfg = SimulationConfig {
        selectors: vec![SelectorKind::Random],
        ..SimulationConfig::default()
    };
    let sim = simulate_seed(&cfg, 11)?;
    let after = run_id(SelectorKind::Random, 0.03);
    let norm = NormalizationConfig {
        scope: NormalizationScope::PerDataset,
        ..NormalizationConfig::default()
    };
    let rows = diagnostic_rows(&sim.bank, INITIAL_CHECKPOINT, &after, 4, &norm, &Q3Spec::default())?;

    let spec = RegressionSpec {
        bootstrap_resamples: 500,
        seed: 1,
        ..RegressionSpec::default()
    };
    let rep = standardized_regression(&rows, &spec)?;
    println!("{} rows in {} prompt clusters", rep.fit.n_rows, rep.fit.n_clusters);
    for c in &rep.fit.coefficients {
        println!("  {:<10} {:+.5}  [{:+.5}, {:+.5}]", c.name, c.beta, c.ci_low, c.ci_high);
    }
    if let Some(g) = &rep.fit.gap {
        println!("  learn - incomp {:+.5}  [{:+.5}, {:+.5}]", g.estimate, g.ci_low, g.ci_high);
    }
    if let (Some(b), Some(d)) = (rep.baseline_r2, rep.delta_r2) {
        println!("  R2 {:.3} vs baseline {:.3} (delta {:+.3})", rep.fit.r2, b, d);
    }

    let scores: Vec<f64> = rows.iter().map(|r| Predictor::DLearn.value(r)).collect();
    let gains: Vec<f64> = rows.iter().map(|r| r.gain).collect();
    println!("gain by D_learn decile:");
    for b in bucket_trend(&scores, &gains, 10)? {
        println!("  {:>2}: score {:.3}  gain {:+.6}  (n={})", b.index, b.mean_score, b.mean_gain, b.count);
    }

    println!("Q3 high-vs-low split by support proxy:");
    for p in SupportProxy::ALL {
        let a = support_proxy_audit(&rows, p, 500, 2)?;
        println!(
            "  {:<20} gap {:+.6}  [{:+.6}, {:+.6}]",
            a.key, a.gap.estimate, a.gap.ci_low, a.gap.ci_high
        );
    }
    Ok(())
}

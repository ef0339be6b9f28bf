//! Matched-budget selector comparison on the designed-teacher simulator.
//!
//! ```text
//! cargo run --release --example toy_distillation [n_seeds]
//! ```

use teachable::diag::{selector_intervention_report, sign_test_p};
use teachable::teach::SelectorKind;
use teachable::toy::{simulate_seed, SimulationConfig};

fn main() -> teachable::Result<()> {
    let n_seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = SimulationConfig::default();
    let order = [SelectorKind::Teach, SelectorKind::Kl, SelectorKind::Random];

    let mut per_seed = Vec::new();
    for seed in 0..n_seeds {
        let sim = simulate_seed(&cfg, seed)?;
        let rows = selector_intervention_report(&sim.bank, &cfg.selectors, &cfg.budgets)?;
        println!("seed {seed}");
        for r in &rows {
            println!(
                "  {:<8} keep {:.3}  gain {:+.5}  gain/keep {:+.4}  Q3 share {:.2}",
                r.selector.name(),
                r.keep_fraction,
                r.gain,
                r.gain_per_keep,
                r.q3_fraction
            );
        }
        let gpk = |s: SelectorKind| rows.iter().find(|r| r.selector == s).map_or(f64::NAN, |r| r.gain_per_keep);
        per_seed.push(order.map(gpk));
    }

    for (i, pair) in order.windows(2).enumerate() {
        let wins = per_seed.iter().filter(|g| g[i] > g[i + 1]).count();
        println!(
            "{} beats {} in {wins}/{n_seeds} seeds, one-sided sign test p = {:.4}",
            pair[0],
            pair[1],
            sign_test_p(wins, n_seeds as usize)
        );
    }
    Ok(())
}

//! Freezes a context bank, trains a toy student for a few steps, and reports
//! the same-context gain with a prompt-cluster bootstrap interval.
//!
//! ```text
//! cargo run --release --example fixed_context_gain
//! ```

use std::collections::BTreeMap;

use teachable::diag::{bank_gains, cluster_bootstrap, ContextLabel, INITIAL_CHECKPOINT};
use teachable::toy::{build_design_bank, train_masked, SimulationConfig, TrainerConfig};

fn main() -> teachable::Result<()> {
    let cfg = SimulationConfig::default();
    let design = cfg.design(3)?;
    let mut db = build_design_bank(&design, 2048)?;

    let trainer = TrainerConfig {
        steps: 10,
        seed: 3,
        ..TrainerConfig::default()
    };
    let outcome = train_masked(&design.base, &db.teacher, &trainer)?;
    let after = db
        .bank
        .contexts()
        .iter()
        .map(|c| outcome.policy.dist(c.state.unwrap_or(0) as usize))
        .collect::<teachable::Result<Vec<_>>>()?;
    db.bank.add_checkpoint("step10", after)?;

    let gains = bank_gains(&db.bank, INITIAL_CHECKPOINT, "step10")?;
    let pairs: Vec<(&str, f64)> = gains.iter().map(|g| (g.cluster.as_str(), g.g_fix)).collect();
    let ci = cluster_bootstrap(&pairs, 1000, 0)?;
    println!(
        "mean gain {:.5}  95% CI [{:.5}, {:.5}]  over {} contexts",
        ci.estimate,
        ci.ci_low,
        ci.ci_high,
        gains.len()
    );

    let labels = db.bank.labels().unwrap_or_default();
    let mut by_label: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (g, l) in gains.iter().zip(labels) {
        let key = match l {
            ContextLabel::Agree => "agree",
            ContextLabel::Aligned => "aligned",
            ContextLabel::OffSupport => "off-support",
        };
        let e = by_label.entry(key.to_string()).or_default();
        e.0 += g.g_fix;
        e.1 += 1;
    }
    for (label, (sum, n)) in by_label {
        println!("  {label:<12} n={n:<5} mean gain {:.5}", sum / n as f64);
    }
    for log in outcome.logs.iter().step_by(3) {
        println!("  step {:>2}: loss {:.4}", log.step, log.loss);
    }
    Ok(())
}

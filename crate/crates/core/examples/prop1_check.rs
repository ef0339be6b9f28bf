//! Single-token updates: the fixed-context gain matches its first-order term
//! up to a residual that shrinks with the square of the step size.
//!
//! ```text
//! cargo run --release --example prop1_check
//! ```

use teachable::toy::{bank_states, build_design_bank, residual_slope, verify_prop1, SimulationConfig};

fn main() -> teachable::Result<()> {
    let cfg = SimulationConfig::default();
    let design = cfg.design(0)?;
    let db = build_design_bank(&design, cfg.bank_contexts)?;
    let etas = [1e-2, 1e-3, 1e-4];

    println!("{:>5} {:>8} {:>12} {:>12} {:>12} {:>6}", "state", "eta", "gain", "residual", "bound", "ok");
    for &state in bank_states(&db.bank).iter().take(6) {
        let rows = verify_prop1(&design.base, &db.teacher, &db.bank, state, &etas)?;
        for r in &rows {
            println!(
                "{:>5} {:>8.0e} {:>12.4e} {:>12.4e} {:>12.4e} {:>6}",
                r.state, r.eta, r.gain, r.residual, r.bound, r.bound_ok
            );
        }
        if let Some(s) = residual_slope(&rows) {
            println!("      log-log slope of |residual| vs eta: {s:.3}");
        }
    }
    Ok(())
}

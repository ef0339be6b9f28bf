use teachable::diag::{bank_gains, ContextLabel, INITIAL_CHECKPOINT};
use teachable::teach::SelectorKind;
use teachable::toy::{
    bank_states, build_design_bank, train_masked, verify_prop1, DesignBank, SimulationConfig,
    TabularPolicy, TrainerConfig,
};

/// Trains on every valid token and returns the mean bank gain per label.
fn label_gains(cfg: &SimulationConfig, seed: u64, steps: usize) -> Vec<(ContextLabel, f64, usize)> {
    let design = cfg.design(seed).unwrap();
    let mut db = build_design_bank(&design, cfg.bank_contexts).unwrap();
    let tc = TrainerConfig {
        steps,
        seed,
        selector: SelectorKind::Full,
        ..TrainerConfig::default()
    };
    let out = train_masked(&design.base, &db.teacher, &tc).unwrap();
    checkpoint(&mut db, &out.policy, "after");
    let gains = bank_gains(&db.bank, INITIAL_CHECKPOINT, "after").unwrap();
    [ContextLabel::Agree, ContextLabel::Aligned, ContextLabel::OffSupport]
        .into_iter()
        .map(|label| {
            let picked: Vec<f64> = gains
                .iter()
                .filter(|g| db.state_labels[db.bank.contexts()[g.index].state.unwrap() as usize] == label)
                .map(|g| g.g_fix)
                .collect();
            let n = picked.len();
            (label, picked.iter().sum::<f64>() / n.max(1) as f64, n)
        })
        .collect()
}

fn checkpoint(db: &mut DesignBank, policy: &TabularPolicy, name: &str) {
    let snap = db
        .bank
        .contexts()
        .iter()
        .map(|c| policy.dist(c.state.unwrap() as usize).unwrap())
        .collect();
    db.bank.add_checkpoint(name, snap).unwrap();
}

fn mean_for(rows: &[(ContextLabel, f64, usize)], label: ContextLabel) -> (f64, usize) {
    let r = rows.iter().find(|r| r.0 == label).unwrap();
    (r.1, r.2)
}

#[test]
fn fully_off_support_design_loses_bank_kl() {
    let cfg = SimulationConfig {
        aligned_fraction: 0.0,
        off_support_mass: 0.8,
        ..SimulationConfig::default()
    };
    let rows = label_gains(&cfg, 3, 30);
    let (aligned, n_aligned) = mean_for(&rows, ContextLabel::Aligned);
    let (off, n_off) = mean_for(&rows, ContextLabel::OffSupport);
    assert_eq!(n_aligned, 0, "no aligned states expected, mean {aligned}");
    assert!(n_off > 0);
    assert!(off < 0.0, "off-support gain {off}");
}

#[test]
fn mixed_design_splits_gain_by_label() {
    let cfg = SimulationConfig {
        aligned_fraction: 0.5,
        ..SimulationConfig::default()
    };
    let rows = label_gains(&cfg, 4, 30);
    let (aligned, n_aligned) = mean_for(&rows, ContextLabel::Aligned);
    let (off, n_off) = mean_for(&rows, ContextLabel::OffSupport);
    assert!(n_aligned > 0 && n_off > 0);
    assert!(aligned > 0.0 && off < 0.0, "aligned {aligned}, off-support {off}");
}

#[test]
fn zero_steps_leave_the_student_unchanged() {
    let cfg = SimulationConfig::default();
    let design = cfg.design(1).unwrap();
    let (teacher, _) = design.build().unwrap();
    let tc = TrainerConfig {
        steps: 0,
        ..TrainerConfig::default()
    };
    let out = train_masked(&design.base, &teacher, &tc).unwrap();
    assert_eq!(out.policy, design.base);
    assert!(out.logs.is_empty());
}

#[test]
fn training_is_deterministic() {
    let cfg = SimulationConfig::default();
    let design = cfg.design(2).unwrap();
    let (teacher, _) = design.build().unwrap();
    let tc = TrainerConfig {
        steps: 5,
        seed: 17,
        ..TrainerConfig::default()
    };
    let a = train_masked(&design.base, &teacher, &tc).unwrap();
    let b = train_masked(&design.base, &teacher, &tc).unwrap();
    assert_eq!(a.policy, b.policy);
}

#[test]
fn self_teacher_has_no_gain_or_residual() {
    let cfg = SimulationConfig::default();
    let design = cfg.design(5).unwrap();
    let db = build_design_bank(&design, cfg.bank_contexts).unwrap();
    let state = bank_states(&db.bank)[0];
    let rows = verify_prop1(&design.base, &design.base, &db.bank, state, &[1e-2, 1e-3]).unwrap();
    for r in rows {
        assert_eq!(r.grad_norm_sq, 0.0);
        assert_eq!(r.gain, 0.0);
        assert_eq!(r.residual, 0.0);
        assert!(r.bound_ok);
    }
}

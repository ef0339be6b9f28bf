//! Operations behind the `teachable` binary.
//!
//! Each command takes its arguments as a plain struct, writes its CSV
//! outputs, and returns a small summary. Warnings go to the supplied
//! `diag` stream. Outputs depend only on the inputs and the seed flags.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use csv::Writer;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diag::{
    bank_gains, bucket_trend, derive_seed, diagnostic_rows, selector_intervention_report,
    sign_test_p, standardized_regression, support_proxy_audit, BootstrapCi, InterventionRow,
    Predictor, RegressionSpec, SupportProxy, INITIAL_CHECKPOINT,
};
use crate::error::{Error, Result};
use crate::io::{format_real, load_bank, read_dump_all, read_scores_file, snapshot_bank, write_scores_file};
use crate::teach::{
    compute_stats_batch, normalize_scoped, q3_membership, select, selector_scores,
    NormalizationConfig, NormalizationScope, Q3Spec, SelectionMask, SelectorKind, DEFAULT_K,
};
use crate::toy::{bank_states, build_design_bank, residual_slope, simulate_seed, verify_prop1, SimulationConfig};

/// Process exit code for an error: 1 usage, 2 data validation, 3 numerical.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Domain(_) => 1,
        Error::Numerical(_) | Error::RankDeficient { .. } | Error::DegenerateSupport { .. } => 3,
        _ => 2,
    }
}

fn csv_writer(path: &PathBuf) -> Result<Writer<File>> {
    Ok(Writer::from_writer(File::create(path)?))
}

fn opt(x: Option<f64>) -> String {
    x.map(format_real).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct ScoreArgs {
    pub dump: PathBuf,
    pub k: usize,
    pub scope: NormalizationScope,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub rows: usize,
    /// Positions where K exceeded a listed support and was clamped.
    pub clamped: usize,
}

/// Scores every record of a dump and writes the full score table.
pub fn cmd_score(args: &ScoreArgs, diag: &mut dyn Write) -> Result<ScoreSummary> {
    if args.k == 0 {
        return Err(Error::Domain("--k must be at least 1".into()));
    }
    let (_, records) = read_dump_all(&args.dump)?;
    let stats = compute_stats_batch(&records, args.k)?;
    let cfg = NormalizationConfig {
        scope: args.scope,
        ..NormalizationConfig::default()
    };
    let batches: Vec<u64> = records.iter().map(|r| r.batch).collect();
    let norm = normalize_scoped(&stats, &batches, &cfg);
    let clamped = stats.iter().filter(|s| s.k_clamped).count();
    if clamped > 0 {
        writeln!(
            diag,
            "warning: K={} exceeds the listed entries at {clamped} of {} positions; clamped to the listed support",
            args.k,
            records.len()
        )?;
    }
    write_scores_file(&args.out, &records, &stats, &norm, &[])?;
    Ok(ScoreSummary {
        rows: records.len(),
        clamped,
    })
}

#[derive(Debug, Clone)]
pub struct SelectArgs {
    pub scores: PathBuf,
    pub selector: SelectorKind,
    pub rho: f64,
    pub seed: u64,
    pub q3: Q3Spec,
    pub out: PathBuf,
}

/// Adds a `keep_<selector>` column to a score table.
pub fn cmd_select(args: &SelectArgs) -> Result<SelectionMask> {
    let table = read_scores_file(&args.scores)?;
    let norm = table.normalized();
    let valid = table.valid();
    let q3 = q3_membership(&norm, &args.q3);
    let scores = selector_scores(&norm, args.selector, &q3).unwrap_or_else(|| vec![0.0; norm.len()]);
    let mask = select(&scores, &valid, args.rho, args.selector, args.seed)?;
    table.write_with_mask(File::create(&args.out)?, args.selector.name(), &mask.keep)?;
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnoseMode {
    Gain,
    Regress,
    Buckets,
    Proxies,
    Intervention,
}

impl fmt::Display for DiagnoseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnoseMode::Gain => "gain",
            DiagnoseMode::Regress => "regress",
            DiagnoseMode::Buckets => "buckets",
            DiagnoseMode::Proxies => "proxies",
            DiagnoseMode::Intervention => "intervention",
        })
    }
}

impl FromStr for DiagnoseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gain" => DiagnoseMode::Gain,
            "regress" => DiagnoseMode::Regress,
            "buckets" => DiagnoseMode::Buckets,
            "proxies" => DiagnoseMode::Proxies,
            "intervention" => DiagnoseMode::Intervention,
            _ => return Err(Error::Domain(format!("unknown diagnose mode `{s}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiagnoseArgs {
    pub bank: PathBuf,
    pub mode: DiagnoseMode,
    pub resamples: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub before: String,
    /// Defaults to the only checkpoint other than `before`.
    pub after: Option<String>,
    pub k: usize,
    pub buckets: usize,
    /// Bucketing score.
    pub score: Predictor,
    pub q3: Q3Spec,
}

impl DiagnoseArgs {
    pub fn new(bank: PathBuf, mode: DiagnoseMode, out: PathBuf) -> Self {
        Self {
            bank,
            mode,
            resamples: crate::diag::DEFAULT_RESAMPLES,
            seed: 0,
            out,
            before: INITIAL_CHECKPOINT.to_string(),
            after: None,
            k: DEFAULT_K,
            buckets: 10,
            score: Predictor::DLearn,
            q3: Q3Spec::default(),
        }
    }
}

fn pick_after(bank: &crate::diag::ContextBank, before: &str, after: &Option<String>) -> Result<String> {
    if let Some(a) = after {
        return Ok(a.clone());
    }
    let others: Vec<&String> = bank.checkpoints().keys().filter(|k| *k != before).collect();
    match others.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(Error::InsufficientData("bank has no checkpoint to compare against".into())),
        many => Err(Error::Domain(format!(
            "bank has several checkpoints ({}); pass --after",
            many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn ci_fields(ci: &BootstrapCi) -> [String; 3] {
    [format_real(ci.estimate), format_real(ci.ci_low), format_real(ci.ci_high)]
}

/// Runs one fixed-context diagnostic on a saved bank and writes its report.
/// Returns the number of report rows.
pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<usize> {
    let bank = load_bank(&args.bank)?;
    let mut w = csv_writer(&args.out)?;
    let rows = if args.mode == DiagnoseMode::Intervention {
        let runs = bank.runs();
        let selectors: Vec<SelectorKind> =
            runs.values().map(|m| m.selector).collect::<BTreeSet<_>>().into_iter().collect();
        let mut budgets: Vec<f64> = Vec::new();
        for m in runs.values().filter(|m| m.selector != SelectorKind::Full) {
            if !budgets.iter().any(|b| (b - m.rho).abs() < 1e-9) {
                budgets.push(m.rho);
            }
        }
        budgets.sort_by(f64::total_cmp);
        if budgets.is_empty() {
            budgets.push(1.0);
        }
        let report = selector_intervention_report(&bank, &selectors, &budgets)?;
        write_intervention(&mut w, None, &report)?;
        report.len()
    } else {
        let after = pick_after(&bank, &args.before, &args.after)?;
        match args.mode {
            DiagnoseMode::Gain => {
                let gains = bank_gains(&bank, &args.before, &after)?;
                w.write_record(["prompt_id", "context_id", "position", "gain"])?;
                for (g, c) in gains.iter().zip(bank.contexts()) {
                    w.write_record([
                        c.prompt_id.clone(),
                        c.context_id.clone(),
                        c.position.to_string(),
                        format_real(g.g_fix),
                    ])?;
                }
                gains.len()
            }
            mode => {
                let cfg = NormalizationConfig {
                    scope: NormalizationScope::PerDataset,
                    ..NormalizationConfig::default()
                };
                let rows = diagnostic_rows(&bank, &args.before, &after, args.k, &cfg, &args.q3)?;
                match mode {
                    DiagnoseMode::Regress => {
                        let spec = RegressionSpec {
                            bootstrap_resamples: args.resamples,
                            seed: args.seed,
                            ..RegressionSpec::default()
                        };
                        let rep = standardized_regression(&rows, &spec)?;
                        w.write_record(["term", "estimate", "ci_low", "ci_high"])?;
                        w.write_record([
                            "intercept".to_string(),
                            format_real(rep.fit.intercept),
                            String::new(),
                            String::new(),
                        ])?;
                        for c in &rep.fit.coefficients {
                            w.write_record([
                                c.name.clone(),
                                format_real(c.beta),
                                format_real(c.ci_low),
                                format_real(c.ci_high),
                            ])?;
                        }
                        if let Some(g) = &rep.fit.gap {
                            let [e, lo, hi] = ci_fields(g);
                            w.write_record(["learn_minus_incomp".to_string(), e, lo, hi])?;
                        }
                        for (name, v) in [
                            ("r2", Some(rep.fit.r2)),
                            ("baseline_r2", rep.baseline_r2),
                            ("delta_r2", rep.delta_r2),
                            ("delta_r2_x1e3", rep.delta_r2.map(|d| d * 1e3)),
                        ] {
                            w.write_record([name.to_string(), opt(v), String::new(), String::new()])?;
                        }
                        rep.fit.coefficients.len() + 6
                    }
                    DiagnoseMode::Buckets => {
                        let scores: Vec<f64> = rows.iter().map(|r| args.score.value(r)).collect();
                        let gains: Vec<f64> = rows.iter().map(|r| r.gain).collect();
                        let buckets = bucket_trend(&scores, &gains, args.buckets)?;
                        w.write_record(["bucket", "mean_score", "mean_gain", "count"])?;
                        for b in &buckets {
                            w.write_record([
                                b.index.to_string(),
                                format_real(b.mean_score),
                                format_real(b.mean_gain),
                                b.count.to_string(),
                            ])?;
                        }
                        buckets.len()
                    }
                    _ => {
                        w.write_record([
                            "proxy", "n_q3", "n_high", "n_low", "mean_high", "mean_low", "gap",
                            "ci_low", "ci_high",
                        ])?;
                        for p in SupportProxy::ALL {
                            let a = support_proxy_audit(&rows, p, args.resamples, args.seed)?;
                            let [e, lo, hi] = ci_fields(&a.gap);
                            w.write_record([
                                a.key,
                                a.n_q3.to_string(),
                                a.n_high.to_string(),
                                a.n_low.to_string(),
                                format_real(a.mean_high),
                                format_real(a.mean_low),
                                e,
                                lo,
                                hi,
                            ])?;
                        }
                        SupportProxy::ALL.len()
                    }
                }
            }
        }
    };
    w.flush()?;
    Ok(rows)
}

fn write_intervention<W: Write>(
    w: &mut Writer<W>,
    seed: Option<u64>,
    rows: &[InterventionRow],
) -> Result<()> {
    w.write_record([
        "seed",
        "run",
        "selector",
        "rho",
        "keep_fraction",
        "gain",
        "gain_per_keep",
        "q3_fraction",
    ])?;
    for r in rows {
        w.write_record([
            seed.unwrap_or(r.seed).to_string(),
            r.run.clone(),
            r.selector.to_string(),
            format_real(r.rho),
            format_real(r.keep_fraction),
            format_real(r.gain),
            format_real(r.gain_per_keep),
            format_real(r.q3_fraction),
        ])?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub aligned_fraction: f64,
    pub selectors: Vec<SelectorKind>,
    pub rhos: Vec<f64>,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

/// Sign test that `better` beats `worse` in gain per kept token across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingTest {
    pub rho: f64,
    pub better: SelectorKind,
    pub worse: SelectorKind,
    pub wins: usize,
    pub n: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub rows: Vec<InterventionRow>,
    pub ordering: Vec<OrderingTest>,
}

/// Trains one student per (seed, selector, budget) on the designed teacher,
/// saves each seed's bank, and writes one intervention report per budget plus
/// sign tests for each adjacent pair of the selector list.
///
/// Files: `bank_seed<seed>.json`, `intervention_rho<rho>.csv`, `ordering.csv`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateSummary> {
    if args.seeds.is_empty() || args.selectors.is_empty() || args.rhos.is_empty() {
        return Err(Error::Domain("need at least one seed, selector and budget".into()));
    }
    let mut cfg = SimulationConfig {
        aligned_fraction: args.aligned_fraction,
        selectors: args.selectors.clone(),
        budgets: args.rhos.clone(),
        ..SimulationConfig::default()
    };
    cfg.trainer.steps = args.steps;
    fs::create_dir_all(&args.out)?;
    let mut all = Vec::new();
    for &seed in &args.seeds {
        let out = simulate_seed(&cfg, seed)?;
        snapshot_bank(&out.bank, args.out.join(format!("bank_seed{seed}.json")))?;
        all.extend(selector_intervention_report(&out.bank, &args.selectors, &args.rhos)?);
    }
    let mut ordering = Vec::new();
    for &rho in &args.rhos {
        let at: Vec<InterventionRow> = all
            .iter()
            .filter(|r| r.selector == SelectorKind::Full || (r.rho - rho).abs() < 1e-9)
            .cloned()
            .collect();
        let mut w = csv_writer(&args.out.join(format!("intervention_rho{rho}.csv")))?;
        write_intervention(&mut w, None, &at)?;
        w.flush()?;
        for pair in args.selectors.windows(2) {
            let per_seed = |s: SelectorKind, seed: u64| {
                at.iter()
                    .find(|r| r.selector == s && r.seed == seed)
                    .map(|r| r.gain_per_keep)
            };
            let mut wins = 0;
            for &seed in &args.seeds {
                if let (Some(a), Some(b)) = (per_seed(pair[0], seed), per_seed(pair[1], seed)) {
                    wins += usize::from(a > b);
                }
            }
            ordering.push(OrderingTest {
                rho,
                better: pair[0],
                worse: pair[1],
                wins,
                n: args.seeds.len(),
                p_value: sign_test_p(wins, args.seeds.len()),
            });
        }
    }
    let mut w = csv_writer(&args.out.join("ordering.csv"))?;
    w.write_record(["rho", "better", "worse", "wins", "n", "p_value"])?;
    for o in &ordering {
        w.write_record([
            format_real(o.rho),
            o.better.to_string(),
            o.worse.to_string(),
            o.wins.to_string(),
            o.n.to_string(),
            format_real(o.p_value),
        ])?;
    }
    w.flush()?;
    Ok(SimulateSummary { rows: all, ordering })
}

#[derive(Debug, Clone)]
pub struct Prop1Args {
    pub seeds: Vec<u64>,
    pub etas: Vec<f64>,
    /// States probed per seed, drawn from the bank without replacement.
    pub states: usize,
    /// Use the student as its own teacher.
    pub identical: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Summary {
    pub rows: usize,
    pub bound_violations: usize,
    /// Smallest per-state log-log slope of |residual| against η.
    pub min_slope: Option<f64>,
}

/// Probes single-token updates on designed-teacher banks and writes one row
/// per (seed, state, η).
pub fn cmd_prop1(args: &Prop1Args) -> Result<Prop1Summary> {
    if args.etas.is_empty() || args.seeds.is_empty() {
        return Err(Error::Domain("need at least one seed and one eta".into()));
    }
    if args.etas.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Domain("etas must be positive".into()));
    }
    let cfg = SimulationConfig::default();
    let mut w = csv_writer(&args.out)?;
    w.write_record([
        "seed", "state", "eta", "gain", "inner", "residual", "bound", "beta_hat", "grad_norm_sq",
        "bound_ok", "slope",
    ])?;
    let mut summary = Prop1Summary {
        rows: 0,
        bound_violations: 0,
        min_slope: None,
    };
    for &seed in &args.seeds {
        let design = cfg.design(seed)?;
        let db = build_design_bank(&design, cfg.bank_contexts)?;
        let teacher = if args.identical { &design.base } else { &db.teacher };
        let states = bank_states(&db.bank);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x9a0b));
        let n = args.states.min(states.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, states.len(), n)
            .into_iter()
            .map(|i| states[i])
            .collect();
        picked.sort_unstable();
        for state in picked {
            let rows = verify_prop1(&design.base, teacher, &db.bank, state, &args.etas)?;
            let slope = residual_slope(&rows);
            if let Some(s) = slope {
                summary.min_slope = Some(summary.min_slope.map_or(s, |m: f64| m.min(s)));
            }
            for r in &rows {
                summary.rows += 1;
                summary.bound_violations += usize::from(!r.bound_ok);
                w.write_record([
                    seed.to_string(),
                    r.state.to_string(),
                    format_real(r.eta),
                    format_real(r.gain),
                    format_real(r.inner),
                    format_real(r.residual),
                    format_real(r.bound),
                    format_real(r.beta_hat),
                    format_real(r.grad_norm_sq),
                    u8::from(r.bound_ok).to_string(),
                    opt(slope),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(summary)
}

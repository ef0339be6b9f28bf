use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use teachable::commands::{
    cmd_diagnose, cmd_prop1, cmd_score, cmd_select, cmd_simulate, exit_code, DiagnoseArgs,
    DiagnoseMode, Prop1Args, ScoreArgs, SelectArgs, SimulateArgs,
};
use teachable::diag::{Predictor, DEFAULT_RESAMPLES, INITIAL_CHECKPOINT};
use teachable::teach::{NormalizationScope, Q3Spec, SelectorKind, DEFAULT_K};
use teachable::Error;

/// Token selection and fixed-context diagnostics for on-policy distillation.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Batch,
    Dataset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gain,
    Regress,
    Buckets,
    Proxies,
    Intervention,
}

#[derive(Subcommand)]
enum Command {
    /// Score every position of a logprob dump.
    Score {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, value_enum, default_value = "batch")]
        scope: Scope,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add a budgeted keep-mask column to a score table.
    Select {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        selector: SelectorKind,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a diagnostic on a saved context bank.
    Diagnose {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = INITIAL_CHECKPOINT)]
        before: String,
        /// Later checkpoint; defaults to the only one besides --before.
        #[arg(long)]
        after: Option<String>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        buckets: usize,
        /// Score used by --mode buckets.
        #[arg(long, default_value = "D_learn")]
        score: Predictor,
    },
    /// Train toy students against a designed teacher and report selector gains.
    Simulate {
        /// Fraction of corrected states whose correction stays on the student's top-K.
        #[arg(long)]
        design: f64,
        #[arg(long, value_delimiter = ',', default_value = "teach,kl,tip,entropy,random")]
        selector: Vec<SelectorKind>,
        #[arg(long, value_delimiter = ',', default_value = "0.03")]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the second-order expansion of the fixed-context gain.
    Prop1 {
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.001,0.0001")]
        etas: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        states: usize,
        /// Use the student as the teacher.
        #[arg(long)]
        identical: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, Error> {
    let mut stderr = std::io::stderr();
    Ok(match cli.command {
        Command::Score { dump, k, scope, out } => {
            let scope = match scope {
                Scope::Batch => NormalizationScope::PerBatch,
                Scope::Dataset => NormalizationScope::PerDataset,
            };
            let s = cmd_score(&ScoreArgs { dump, k, scope, out }, &mut stderr)?;
            format!("scored {} positions", s.rows)
        }
        Command::Select { scores, selector, rho, seed, out } => {
            let m = cmd_select(&SelectArgs {
                scores,
                selector,
                rho,
                seed,
                q3: Q3Spec::default(),
                out,
            })?;
            format!("kept {} of {} positions", m.n_kept, m.keep.len())
        }
        Command::Diagnose {
            bank,
            mode,
            resamples,
            seed,
            out,
            before,
            after,
            k,
            buckets,
            score,
        } => {
            let mode = match mode {
                Mode::Gain => DiagnoseMode::Gain,
                Mode::Regress => DiagnoseMode::Regress,
                Mode::Buckets => DiagnoseMode::Buckets,
                Mode::Proxies => DiagnoseMode::Proxies,
                Mode::Intervention => DiagnoseMode::Intervention,
            };
            let mut args = DiagnoseArgs::new(bank, mode, out);
            args.resamples = resamples;
            args.seed = seed;
            args.before = before;
            args.after = after;
            args.k = k;
            args.buckets = buckets;
            args.score = score;
            let n = cmd_diagnose(&args)?;
            format!("{mode}: {n} rows")
        }
        Command::Simulate { design, selector, rho, steps, seeds, out } => {
            let s = cmd_simulate(&SimulateArgs {
                aligned_fraction: design,
                selectors: selector,
                rhos: rho,
                steps,
                seeds,
                out,
            })?;
            s.ordering
                .iter()
                .map(|o| {
                    format!(
                        "rho {}: {} > {} in {}/{} seeds (p = {:.4})",
                        o.rho, o.better, o.worse, o.wins, o.n, o.p_value
                    )
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        Command::Prop1 { seeds, etas, states, identical, out } => {
            let s = cmd_prop1(&Prop1Args {
                seeds,
                etas,
                states,
                identical,
                out,
            })?;
            let slope = s.min_slope.map_or("n/a".to_string(), |x| format!("{x:.3}"));
            format!(
                "{} rows, {} bound violations, min slope {slope}",
                s.rows, s.bound_violations
            )
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(msg) => {
            eprintln!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

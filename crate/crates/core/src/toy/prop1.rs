use serde::{Deserialize, Serialize};

use super::grad::{forward_kl_grad, opd_grad};
use super::policy::{log_softmax, TabularPolicy};
use crate::diag::ContextBank;
use crate::error::{Error, Result};
use crate::teach::LossEstimator;

/// Safety factor applied to the probed curvature.
pub const BETA_SAFETY: f64 = 1.5;

/// Points along the update segment where curvature is probed.
const PROBES: usize = 9;

/// Step of the curvature finite difference.
const PROBE_STEP: f64 = 1e-4;

/// One single-token update measured on the fixed-context loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Row {
    pub state: usize,
    pub eta: f64,
    /// Fixed-context loss reduction `L_fix(θ) − L_fix(θ − η g)`.
    pub gain: f64,
    /// `η ⟨∇L_fix, g⟩`.
    pub inner: f64,
    /// `gain − inner`.
    pub residual: f64,
    /// `β̂ η² ‖g‖² / 2`.
    pub bound: f64,
    pub beta_hat: f64,
    pub grad_norm_sq: f64,
    pub bound_ok: bool,
}

/// Fraction of bank contexts sitting at `state`, the weight of that state's
/// forward KL in the bank-mean loss.
fn state_weight(bank: &ContextBank, state: usize) -> Result<f64> {
    let mut hits = 0usize;
    for c in bank.contexts() {
        match c.state {
            Some(s) if s as usize == state => hits += 1,
            Some(_) => {}
            None => return Err(Error::Domain("bank contexts carry no simulator state".into())),
        }
    }
    if hits == 0 {
        return Err(Error::Domain(format!("state {state} does not appear in the bank")));
    }
    Ok(hits as f64 / bank.len() as f64)
}

/// `KL(q || softmax(z)) − KL(q || softmax(z + Δ))`, accurate for tiny `Δ`.
fn kl_reduction(row: &[f64], delta: &[f64], log_q: &[f64]) -> f64 {
    let lp = log_softmax(row);
    let linear: f64 = log_q.iter().zip(delta).map(|(lq, d)| lq.exp() * d).sum();
    // log Σ p e^Δ = log1p(Σ p (e^Δ − 1)).
    let shift: f64 = lp
        .iter()
        .zip(delta)
        .map(|(l, d)| l.exp() * d.exp_m1())
        .sum::<f64>()
        .ln_1p();
    linear - shift
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks the first-order gain expansion for a single-token update at
/// `state`.
///
/// The fixed-context loss is the bank-mean forward KL from teacher to
/// student; the token loss is the reverse KL at `state`. Because the policy
/// is tabular, only contexts at `state` change, so the gain is computed in
/// closed form on that row.
pub fn verify_prop1(
    student: &TabularPolicy,
    teacher: &TabularPolicy,
    bank: &ContextBank,
    state: usize,
    etas: &[f64],
) -> Result<Vec<Prop1Row>> {
    if state >= student.n_states() {
        return Err(Error::Domain(format!("state {state} out of range")));
    }
    let w = state_weight(bank, state)?;
    let row = student.row(state).to_vec();
    let log_q = teacher.log_probs(state);
    let g = opd_grad(student, teacher, state, LossEstimator::FullKl, 0);
    let g2 = dot(&g, &g);
    let grad_fix: Vec<f64> = forward_kl_grad(&row, &log_q).iter().map(|x| w * x).collect();
    let ip = dot(&grad_fix, &g);

    let mut out = Vec::with_capacity(etas.len());
    for &eta in etas {
        if !(eta > 0.0) {
            return Err(Error::Domain(format!("step size {eta} must be positive")));
        }
        let delta: Vec<f64> = g.iter().map(|x| -eta * x).collect();
        let gain = w * kl_reduction(&row, &delta, &log_q);
        let inner = eta * ip;
        let beta_hat = if g2 > 0.0 {
            BETA_SAFETY * w * max_curvature(&row, &delta, &g, &log_q)
        } else {
            0.0
        };
        let bound = 0.5 * beta_hat * eta * eta * g2;
        let residual = gain - inner;
        out.push(Prop1Row {
            state,
            eta,
            gain,
            inner,
            residual,
            bound,
            beta_hat,
            grad_norm_sq: g2,
            bound_ok: residual.abs() <= bound,
        });
    }
    Ok(out)
}

/// Largest curvature of the unweighted forward KL along direction `g`, probed
/// at evenly spaced points of the segment `row → row + delta` by central
/// differences of the analytic gradient.
fn max_curvature(row: &[f64], delta: &[f64], g: &[f64], log_q: &[f64]) -> f64 {
    let norm = dot(g, g).sqrt();
    let u: Vec<f64> = g.iter().map(|x| x / norm).collect();
    (0..PROBES)
        .map(|i| {
            let t = i as f64 / (PROBES - 1) as f64;
            let at = |h: f64| -> Vec<f64> {
                row.iter()
                    .zip(delta)
                    .zip(&u)
                    .map(|((z, d), ui)| z + t * d + h * ui)
                    .collect()
            };
            let plus = forward_kl_grad(&at(PROBE_STEP), log_q);
            let minus = forward_kl_grad(&at(-PROBE_STEP), log_q);
            let diff: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| a - b).collect();
            dot(&diff, &u) / (2.0 * PROBE_STEP)
        })
        .fold(0.0, f64::max)
}

/// Least-squares slope of `log |residual|` against `log η`, or `None` when
/// fewer than two rows have a nonzero residual.
pub fn residual_slope(rows: &[Prop1Row]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.residual != 0.0)
        .map(|r| (r.eta.ln(), r.residual.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Distinct simulator states in bank order.
pub fn bank_states(bank: &ContextBank) -> Vec<usize> {
    let mut seen = std::collections::BTreeSet::new();
    bank.contexts()
        .iter()
        .filter_map(|c| c.state)
        .filter(|s| seen.insert(*s))
        .map(|s| s as usize)
        .collect()
}

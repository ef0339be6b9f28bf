use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::bootstrap::{cluster_replicates, percentile_ci, BootstrapCi, ClusterIndex, DEFAULT_RESAMPLES};
use super::rows::DiagnosticRow;
use crate::error::{Error, Result};

/// Diagonal jitter added to the normal equations, relative to the row count.
pub const RIDGE_JITTER: f64 = 1e-10;

/// Smallest admissible eigenvalue of the predictor correlation matrix.
const COLLINEARITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Predictor {
    HTilde,
    DTilde,
    CTilde,
    DLearn,
    DIncomp,
    /// `H̃·D̃` interaction.
    HxD,
    PosNorm,
    HTeacher,
    /// Raw compatibility mass.
    C,
}

impl Predictor {
    pub const ALL: [Predictor; 9] = [
        Predictor::HTilde,
        Predictor::DTilde,
        Predictor::CTilde,
        Predictor::DLearn,
        Predictor::DIncomp,
        Predictor::HxD,
        Predictor::PosNorm,
        Predictor::HTeacher,
        Predictor::C,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::HTilde => "H_tilde",
            Predictor::DTilde => "D_tilde",
            Predictor::CTilde => "C_tilde",
            Predictor::DLearn => "D_learn",
            Predictor::DIncomp => "D_incomp",
            Predictor::HxD => "H_tilde_x_D_tilde",
            Predictor::PosNorm => "pos_norm",
            Predictor::HTeacher => "H_teacher",
            Predictor::C => "C",
        }
    }

    pub fn value(self, row: &DiagnosticRow) -> f64 {
        match self {
            Predictor::HTilde => row.norm.h_tilde,
            Predictor::DTilde => row.norm.d_tilde,
            Predictor::CTilde => row.norm.c_tilde,
            Predictor::DLearn => row.norm.d_learn,
            Predictor::DIncomp => row.norm.d_incomp,
            Predictor::HxD => row.norm.h_tilde * row.norm.d_tilde,
            Predictor::PosNorm => row.stats.pos_norm,
            Predictor::HTeacher => row.stats.h_teacher,
            Predictor::C => row.stats.c,
        }
    }

    /// Decomposed model: `H̃, D^L, D^I` plus position and teacher-entropy controls.
    pub fn decomposed() -> Vec<Predictor> {
        vec![
            Predictor::HTilde,
            Predictor::DLearn,
            Predictor::DIncomp,
            Predictor::PosNorm,
            Predictor::HTeacher,
        ]
    }

    /// Baseline model: `H̃, D̃, H̃·D̃` plus the same controls.
    pub fn baseline() -> Vec<Predictor> {
        vec![
            Predictor::HTilde,
            Predictor::DTilde,
            Predictor::HxD,
            Predictor::PosNorm,
            Predictor::HTeacher,
        ]
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Predictor::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown predictor `{s}`")))
    }
}

/// Which diagnostic rows enter a regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFilter {
    #[default]
    All,
    Q3Only,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub predictors: Vec<Predictor>,
    /// Model whose R² the main model is compared against.
    pub baseline: Option<Vec<Predictor>>,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub filter: RowFilter,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            predictors: Predictor::decomposed(),
            baseline: Some(Predictor::baseline()),
            bootstrap_resamples: DEFAULT_RESAMPLES,
            seed: 0,
            filter: RowFilter::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    /// Change in the target per standard deviation of the predictor.
    pub beta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// A fitted standardized OLS model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: f64,
    pub coefficients: Vec<Coefficient>,
    /// Difference of two coefficients, when requested.
    pub gap: Option<BootstrapCi>,
    pub r2: f64,
    pub n_rows: usize,
    pub n_clusters: usize,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub fit: RegressionFit,
    pub baseline_r2: Option<f64>,
    /// `r2 - baseline_r2`, in absolute units.
    pub delta_r2: Option<f64>,
}

/// Named predictor columns, a target, and the cluster of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub clusters: Vec<String>,
}

impl Design {
    pub fn new(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        y: Vec<f64>,
        clusters: Vec<String>,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Misaligned {
                what: "predictor names",
                expected: columns.len(),
                found: names.len(),
            });
        }
        for col in columns.iter().map(Vec::len).chain([clusters.len()]) {
            if col != y.len() {
                return Err(Error::Misaligned {
                    what: "design rows",
                    expected: y.len(),
                    found: col,
                });
            }
        }
        if columns.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("design contains non-finite values".into()));
        }
        Ok(Self {
            names,
            columns,
            y,
            clusters,
        })
    }

    pub fn from_rows(rows: &[DiagnosticRow], predictors: &[Predictor], filter: RowFilter) -> Result<Self> {
        let kept: Vec<&DiagnosticRow> = rows
            .iter()
            .filter(|r| filter == RowFilter::All || r.in_q3)
            .collect();
        Design::new(
            predictors.iter().map(|p| p.name().to_string()).collect(),
            predictors
                .iter()
                .map(|p| kept.iter().map(|r| p.value(r)).collect())
                .collect(),
            kept.iter().map(|r| r.gain).collect(),
            kept.iter().map(|r| r.prompt_id.clone()).collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Standardizes every column to zero mean and unit sample variance, refusing
/// constant or collinear designs.
fn standardize(design: &Design) -> Result<Vec<Vec<f64>>> {
    let n = design.n_rows() as f64;
    let mut z = Vec::with_capacity(design.columns.len());
    let mut constant = Vec::new();
    for (name, col) in design.names.iter().zip(&design.columns) {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            constant.push(name.clone());
            continue;
        }
        z.push(col.iter().map(|x| (x - mean) / sd).collect::<Vec<f64>>());
    }
    if !constant.is_empty() {
        return Err(Error::RankDeficient { columns: constant });
    }
    let p = z.len();
    if p > 1 {
        let corr = DMatrix::from_fn(p, p, |i, j| {
            z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>() / (n - 1.0)
        });
        let eig = SymmetricEigen::new(corr);
        let (k, &min) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("p > 1");
        if min < COLLINEARITY_TOL {
            let v = eig.eigenvectors.column(k);
            let top = v.amax();
            let columns = (0..p)
                .filter(|&j| v[j].abs() > 1e-4 * top)
                .map(|j| design.names[j].clone())
                .collect();
            return Err(Error::RankDeficient { columns });
        }
    }
    Ok(z)
}

/// Per-cluster sufficient statistics of the augmented design `[1, Z]`.
struct ClusterMoments {
    xtx: Vec<DMatrix<f64>>,
    xty: Vec<DVector<f64>>,
}

fn solve(xtx: &DMatrix<f64>, xty: &DVector<f64>, n: f64) -> Option<DVector<f64>> {
    let mut a = xtx.clone();
    for j in 1..a.nrows() {
        a[(j, j)] += RIDGE_JITTER * n;
    }
    a.cholesky().map(|c| c.solve(xty))
}

/// Fits `y ~ 1 + standardized columns` by OLS and bootstraps every
/// coefficient over clusters. Each resample re-standardizes the predictors on
/// its own rows. `gap` names two columns whose coefficient difference is
/// reported with its own interval.
pub fn fit_design(
    design: &Design,
    resamples: usize,
    seed: u64,
    gap: Option<(&str, &str)>,
) -> Result<RegressionFit> {
    let p = design.columns.len();
    let n = design.n_rows();
    if n < p + 2 {
        return Err(Error::InsufficientData(format!(
            "{n} rows are too few for {p} predictors"
        )));
    }
    let gap_idx = match gap {
        Some((a, b)) => {
            let find = |name: &str| {
                design
                    .column_index(name)
                    .ok_or_else(|| Error::Domain(format!("gap column `{name}` is not a predictor")))
            };
            Some((find(a)?, find(b)?))
        }
        None => None,
    };
    let z = standardize(design)?;
    let index = ClusterIndex::new(&design.clusters);
    if index.len() < 2 {
        return Err(Error::InsufficientData("regression needs at least two clusters".into()));
    }

    let dim = p + 1;
    let mut moments = ClusterMoments {
        xtx: vec![DMatrix::zeros(dim, dim); index.len()],
        xty: vec![DVector::zeros(dim); index.len()],
    };
    let mut row = vec![0.0; dim];
    for (i, &g) in index.row_cluster.iter().enumerate() {
        row[0] = 1.0;
        for j in 0..p {
            row[j + 1] = z[j][i];
        }
        let (m, v) = (&mut moments.xtx[g], &mut moments.xty[g]);
        for a in 0..dim {
            v[a] += row[a] * design.y[i];
            for b in a..dim {
                m[(a, b)] += row[a] * row[b];
            }
        }
    }
    for m in &mut moments.xtx {
        m.fill_lower_triangle_with_upper_triangle();
    }

    let xtx: DMatrix<f64> = moments.xtx.iter().fold(DMatrix::zeros(dim, dim), |acc, m| acc + m);
    let xty: DVector<f64> = moments.xty.iter().fold(DVector::zeros(dim), |acc, v| acc + v);
    let beta = solve(&xtx, &xty, n as f64)
        .ok_or_else(|| Error::Numerical("normal equations are not positive definite".into()))?;

    let y_mean = design.y.iter().sum::<f64>() / n as f64;
    let (mut sse, mut sst) = (0.0, 0.0);
    for i in 0..n {
        let fitted = beta[0] + (0..p).map(|j| beta[j + 1] * z[j][i]).sum::<f64>();
        sse += (design.y[i] - fitted).powi(2);
        sst += (design.y[i] - y_mean).powi(2);
    }
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };

    // Each replicate: p standardized slopes, then the optional gap.
    let replicates: Vec<Option<Vec<f64>>> = cluster_replicates(index.len(), resamples, seed, |counts| {
        let mut xtx_b = DMatrix::zeros(dim, dim);
        let mut xty_b = DVector::zeros(dim);
        for (g, &c) in counts.iter().enumerate() {
            if c > 0 {
                xtx_b += &moments.xtx[g] * c as f64;
                xty_b += &moments.xty[g] * c as f64;
            }
        }
        let nb = xtx_b[(0, 0)];
        let b = solve(&xtx_b, &xty_b, nb)?;
        // Rescale slopes by the resample's own predictor spread.
        let slopes: Vec<f64> = (0..p)
            .map(|j| {
                let mean = xtx_b[(0, j + 1)] / nb;
                let var = (xtx_b[(j + 1, j + 1)] / nb - mean * mean) * nb / (nb - 1.0);
                b[j + 1] * var.max(0.0).sqrt()
            })
            .collect();
        let mut out = slopes.clone();
        if let Some((a, c)) = gap_idx {
            out.push(slopes[a] - slopes[c]);
        }
        Some(out)
    });
    let width = p + usize::from(gap_idx.is_some());
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); width];
    for v in replicates.iter().flatten() {
        for (k, x) in v.iter().enumerate() {
            draws[k].push(*x);
        }
    }

    let coefficients = (0..p)
        .map(|j| {
            let ci = percentile_ci(beta[j + 1], &draws[j]);
            Coefficient {
                name: design.names[j].clone(),
                beta: beta[j + 1],
                ci_low: ci.ci_low,
                ci_high: ci.ci_high,
            }
        })
        .collect();
    let gap = gap_idx.map(|(a, b)| percentile_ci(beta[a + 1] - beta[b + 1], &draws[p]));
    Ok(RegressionFit {
        intercept: beta[0],
        coefficients,
        gap,
        r2,
        n_rows: n,
        n_clusters: index.len(),
    })
}

/// Fits `spec.predictors` on diagnostic rows, plus the baseline model when one is given.
/// The coefficient gap is `D_learn - D_incomp` when both are predictors.
pub fn standardized_regression(rows: &[DiagnosticRow], spec: &RegressionSpec) -> Result<RegressionReport> {
    let design = Design::from_rows(rows, &spec.predictors, spec.filter)?;
    let has = |p: Predictor| spec.predictors.contains(&p);
    let gap = (has(Predictor::DLearn) && has(Predictor::DIncomp))
        .then_some((Predictor::DLearn.name(), Predictor::DIncomp.name()));
    let fit = fit_design(&design, spec.bootstrap_resamples, spec.seed, gap)?;
    let baseline_r2 = match &spec.baseline {
        Some(base) => {
            let d = Design::from_rows(rows, base, spec.filter)?;
            Some(fit_design(&d, 0, spec.seed, None)?.r2)
        }
        None => None,
    };
    Ok(RegressionReport {
        delta_r2: baseline_r2.map(|b| fit.r2 - b),
        baseline_r2,
        fit,
    })
}

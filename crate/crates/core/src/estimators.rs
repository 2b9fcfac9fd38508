//! Pooled OLS, two-way fixed effects and random-effects GLS.
//!
//! Pair effects are absorbed by group demeaning; year effects enter as
//! explicit indicators with the smallest year as base.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::PivotedQr;
use crate::transforms::{demean, quasi_demean_values, GroupIndex};

pub const INTERCEPT: &str = "const";

/// Regressors, outcome and the panel structure needed to fit them.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub outcome: String,
    pub names: Vec<String>,
    /// n × k, substantive regressors only (no intercept, no year indicators).
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Pair grouping for absorption.
    pub groups: Option<GroupIndex>,
    /// Per-row years; when present, year indicators are added at fit time.
    pub years: Option<Vec<i32>>,
    /// Per-row cluster ids; defaults to the pair grouping.
    pub clusters: Option<Vec<usize>>,
}

impl DesignMatrix {
    pub fn new(outcome: impl Into<String>, names: Vec<String>, columns: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if names.len() != columns.len() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate design column `{name}`")));
            }
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::InvalidInput(format!(
                    "column `{name}` has {} rows, outcome has {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("column `{name}` has non-finite entries")));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outcome has non-finite entries".into()));
        }
        let k = columns.len();
        let x = DMatrix::from_fn(n, k, |r, c| columns[c][r]);
        Ok(DesignMatrix {
            outcome: outcome.into(),
            names,
            x,
            y: DVector::from_vec(y),
            groups: None,
            years: None,
            clusters: None,
        })
    }

    pub fn with_groups(mut self, groups: GroupIndex) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn with_years(mut self, years: Vec<i32>) -> Self {
        self.years = Some(years);
        self
    }

    pub fn with_clusters(mut self, clusters: Vec<usize>) -> Self {
        self.clusters = Some(clusters);
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.x.column(i).iter().copied().collect())
    }

    /// Cluster ids: explicit clusters, else the pair grouping.
    pub fn cluster_labels(&self) -> Option<Vec<usize>> {
        self.clusters
            .clone()
            .or_else(|| self.groups.as_ref().map(|g| g.group_labels().to_vec()))
    }

    fn require_groups(&self) -> Result<&GroupIndex> {
        let g = self
            .groups
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("design has no pair grouping".into()))?;
        if g.n_rows() != self.n() {
            return Err(Error::InvalidInput("pair grouping does not match design rows".into()));
        }
        Ok(g)
    }

    /// Substantive columns followed by year indicators, if requested.
    fn expanded(&self) -> Result<(Vec<String>, DMatrix<f64>)> {
        let mut names = self.names.clone();
        let Some(years) = &self.years else {
            return Ok((names, self.x.clone()));
        };
        if years.len() != self.n() {
            return Err(Error::InvalidInput("year labels do not match design rows".into()));
        }
        let (ind_names, ind) = year_indicators(years)?;
        names.extend(ind_names);
        let k = self.k();
        let x = DMatrix::from_fn(self.n(), names.len(), |r, c| {
            if c < k {
                self.x[(r, c)]
            } else {
                ind[c - k][r]
            }
        });
        Ok((names, x))
    }
}

/// Indicator columns `year_<Y>` for every year except the smallest.
pub fn year_indicators(years: &[i32]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut distinct = years.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "year effects need at least two distinct years, found {distinct:?}"
        )));
    }
    let names = distinct[1..].iter().map(|y| format!("year_{y}")).collect();
    let cols = distinct[1..]
        .iter()
        .map(|&y| years.iter().map(|&t| if t == y { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok((names, cols))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Pooled,
    FixedEffects,
    RandomEffects,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Pooled => "pooled",
            Estimator::FixedEffects => "fixed-effects",
            Estimator::RandomEffects => "random-effects",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceComponents {
    /// Pair-effect variance.
    pub sigma_u2: f64,
    /// Idiosyncratic variance.
    pub sigma_e2: f64,
    /// Set when the moment estimate of `sigma_u2` was negative and floored.
    pub floored: bool,
    /// Per-pair quasi-demeaning weights, in pair index order.
    #[serde(skip)]
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimator: Estimator,
    pub outcome: String,
    /// Coefficient names: `const` (pooled/RE), substantive slopes, year indicators.
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    /// Classical `σ̂² (X̃ᵀX̃)⁻¹` with `σ̂² = rss / dof`.
    pub covariance: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
    /// Regressors as entered into the final least-squares step (demeaned for
    /// FE, quasi-demeaned for RE).
    pub regressors: DMatrix<f64>,
    /// Residuals of the final least-squares step.
    pub residuals: DVector<f64>,
    /// Fitted outcome on the original scale.
    pub fitted: DVector<f64>,
    pub n: usize,
    pub dof: usize,
    pub rss: f64,
    /// Total sum of squares at the estimator's level (within-TSS for FE).
    pub tss: f64,
    /// Substantive slopes (excludes intercept and year indicators).
    pub n_slopes: usize,
    pub n_year_effects: usize,
    /// Absorbed pair effects (FE only).
    pub absorbed: usize,
    pub variance_components: Option<VarianceComponents>,
    pub cluster_labels: Option<Vec<usize>>,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coefficients[i])
    }

    /// Names of the substantive slopes.
    pub fn slope_names(&self) -> Vec<String> {
        self.names
            .iter()
            .filter(|n| n.as_str() != INTERCEPT && !n.starts_with("year_"))
            .cloned()
            .collect()
    }

    pub fn classical_se(&self) -> Vec<f64> {
        (0..self.names.len()).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }

    /// Coefficient table for serialization; `se` defaults to the classical one.
    pub fn summary(&self, se: Option<&[f64]>) -> FitSummary {
        let classical = self.classical_se();
        let se = se.unwrap_or(&classical);
        FitSummary {
            estimator: self.estimator,
            outcome: self.outcome.clone(),
            n: self.n,
            dof: self.dof,
            rss: self.rss,
            absorbed_effects: self.absorbed,
            coefficients: self
                .names
                .iter()
                .enumerate()
                .map(|(i, name)| CoefficientRow {
                    name: name.clone(),
                    estimate: self.coefficients[i],
                    se: se.get(i).copied(),
                })
                .collect(),
            variance_components: self.variance_components.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub estimator: Estimator,
    pub outcome: String,
    pub n: usize,
    pub dof: usize,
    pub rss: f64,
    pub absorbed_effects: usize,
    pub coefficients: Vec<CoefficientRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_components: Option<VarianceComponents>,
}

struct LeastSquares {
    beta: DVector<f64>,
    xtx_inv: DMatrix<f64>,
    residuals: DVector<f64>,
    rss: f64,
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LeastSquares> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::InvalidInput(format!("{n} observations for {k} regressors")));
    }
    let qr = PivotedQr::new(x.clone());
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient {
            columns: qr.dependent_columns().into_iter().map(|i| names[i].clone()).collect(),
        });
    }
    let beta = qr.solve(y);
    let residuals = y - x * &beta;
    let rss = residuals.norm_squared();
    Ok(LeastSquares {
        beta,
        xtx_inv: qr.xtx_inverse(),
        residuals,
        rss,
    })
}

fn with_intercept(intercept: DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    DMatrix::from_fn(n, k + 1, |r, c| if c == 0 { intercept[r] } else { x[(r, c - 1)] })
}

fn centered_ss(y: &DVector<f64>) -> f64 {
    let m = y.mean();
    y.iter().map(|v| (v - m) * (v - m)).sum()
}

/// OLS with an intercept; year indicators when the design carries years.
pub fn fit_pooled_ols(design: &DesignMatrix) -> Result<FitResult> {
    let (names, x) = design.expanded()?;
    let n = design.n();
    let mut all_names = vec![INTERCEPT.to_string()];
    all_names.extend(names);
    let xi = with_intercept(DVector::from_element(n, 1.0), &x);
    let ls = least_squares(&xi, &design.y, &all_names)?;
    let k = all_names.len();
    let dof = n - k;
    let sigma2 = ls.rss / dof as f64;
    Ok(FitResult {
        estimator: Estimator::Pooled,
        outcome: design.outcome.clone(),
        covariance: &ls.xtx_inv * sigma2,
        fitted: &design.y - &ls.residuals,
        n,
        dof,
        rss: ls.rss,
        tss: centered_ss(&design.y),
        n_slopes: design.k(),
        n_year_effects: k - 1 - design.k(),
        absorbed: 0,
        variance_components: None,
        cluster_labels: design.cluster_labels(),
        names: all_names,
        coefficients: ls.beta,
        xtx_inv: ls.xtx_inv,
        regressors: xi,
        residuals: ls.residuals,
    })
}

/// Two-way fixed effects: pair effects absorbed by demeaning, year effects
/// as demeaned indicators.
pub fn fit_fixed_effects(design: &DesignMatrix) -> Result<FitResult> {
    let groups = design.require_groups()?;
    if !groups.sizes().iter().any(|&t| t >= 2) {
        return Err(Error::InvalidInput("no pair is observed more than once".into()));
    }
    let (names, x) = design.expanded()?;
    let n = design.n();
    let k = names.len();

    let mut xd = DMatrix::zeros(n, k);
    for (c, name) in names.iter().enumerate() {
        let col: Vec<f64> = x.column(c).iter().copied().collect();
        let (d, _) = demean(&col, groups);
        if c < design.k() {
            let scale = col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if d.iter().all(|v| v.abs() <= 1e-12 * scale) {
                return Err(Error::ZeroWithinVariation(name.clone()));
            }
        }
        xd.set_column(c, &DVector::from_vec(d));
    }
    let y: Vec<f64> = design.y.iter().copied().collect();
    let (yd, _) = demean(&y, groups);
    let yd = DVector::from_vec(yd);

    let g = groups.n_groups();
    if n <= k + g {
        return Err(Error::InvalidInput(format!(
            "{n} observations leave no residual degrees of freedom after {g} pair effects and {k} regressors"
        )));
    }
    let ls = least_squares(&xd, &yd, &names)?;
    let dof = n - k - g;
    let sigma2 = ls.rss / dof as f64;
    Ok(FitResult {
        estimator: Estimator::FixedEffects,
        outcome: design.outcome.clone(),
        covariance: &ls.xtx_inv * sigma2,
        fitted: &design.y - &ls.residuals,
        n,
        dof,
        rss: ls.rss,
        tss: yd.norm_squared(),
        n_slopes: design.k(),
        n_year_effects: k - design.k(),
        absorbed: g,
        variance_components: None,
        cluster_labels: design.cluster_labels(),
        names,
        coefficients: ls.beta,
        xtx_inv: ls.xtx_inv,
        regressors: xd,
        residuals: ls.residuals,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomEffectsOptions {
    /// Use this pair-effect variance instead of the moment estimate.
    pub sigma_u2: Option<f64>,
}

pub fn fit_random_effects(design: &DesignMatrix) -> Result<FitResult> {
    fit_random_effects_with(design, RandomEffectsOptions::default())
}

/// Random-effects GLS with Swamy–Arora variance components and a per-pair
/// weight `θ = 1 − sqrt(σ_ε² / (T σ_u² + σ_ε²))`.
///
/// `σ_ε²` comes from the within regression; `σ_u²` from the between
/// regression on pair means, net of `σ_ε²` times the mean of `1/T`.
pub fn fit_random_effects_with(design: &DesignMatrix, opts: RandomEffectsOptions) -> Result<FitResult> {
    let groups = design.require_groups()?;
    let (names, x) = design.expanded()?;
    let n = design.n();
    let k = names.len();
    let g = groups.n_groups();
    if n <= k + 1 {
        return Err(Error::InvalidInput(format!("{n} observations for {} regressors", k + 1)));
    }

    let within = fit_fixed_effects(design)?;
    let sigma_e2 = within.rss / within.dof as f64;

    let (sigma_u2, floored) = match opts.sigma_u2 {
        Some(s) if s >= 0.0 => (s, false),
        Some(s) => return Err(Error::InvalidParameter(format!("sigma_u2 {s} is negative"))),
        None => {
            // between regression on pair means; rank-revealing so that
            // year-share columns collinear with the intercept are tolerated
            let y: Vec<f64> = design.y.iter().copied().collect();
            let ybar = DVector::from_vec(groups.means(&y));
            let mut xb = DMatrix::from_element(g, k + 1, 1.0);
            for c in 0..k {
                let col: Vec<f64> = x.column(c).iter().copied().collect();
                xb.set_column(c + 1, &DVector::from_vec(groups.means(&col)));
            }
            let qr = PivotedQr::new(xb);
            let dof_b = g as isize - qr.rank() as isize;
            if dof_b <= 0 {
                return Err(Error::InvalidInput(format!(
                    "between regression has {g} pairs for {} effective regressors",
                    qr.rank()
                )));
            }
            let sigma_b2 = qr.rss(&ybar) / dof_b as f64;
            let mean_inv_t = groups.sizes().iter().map(|&t| 1.0 / t as f64).sum::<f64>() / g as f64;
            let raw = sigma_b2 - sigma_e2 * mean_inv_t;
            if raw < 0.0 {
                (0.0, true)
            } else {
                (raw, false)
            }
        }
    };

    let theta: Vec<f64> = groups
        .sizes()
        .iter()
        .map(|&t| {
            let denom = t as f64 * sigma_u2 + sigma_e2;
            if denom <= 0.0 {
                0.0
            } else {
                (1.0 - (sigma_e2 / denom).sqrt()).clamp(0.0, 1.0)
            }
        })
        .collect();

    let ones = vec![1.0; n];
    let mut xs = DMatrix::zeros(n, k + 1);
    xs.set_column(0, &DVector::from_vec(quasi_demean_values(&ones, groups, &theta)?));
    for c in 0..k {
        let col: Vec<f64> = x.column(c).iter().copied().collect();
        xs.set_column(c + 1, &DVector::from_vec(quasi_demean_values(&col, groups, &theta)?));
    }
    let y: Vec<f64> = design.y.iter().copied().collect();
    let ys = DVector::from_vec(quasi_demean_values(&y, groups, &theta)?);

    let mut all_names = vec![INTERCEPT.to_string()];
    all_names.extend(names);
    let ls = least_squares(&xs, &ys, &all_names)?;
    let dof = n - (k + 1);
    let sigma2 = ls.rss / dof as f64;
    let levels = with_intercept(DVector::from_element(n, 1.0), &x);
    Ok(FitResult {
        estimator: Estimator::RandomEffects,
        outcome: design.outcome.clone(),
        covariance: &ls.xtx_inv * sigma2,
        fitted: &levels * &ls.beta,
        n,
        dof,
        rss: ls.rss,
        tss: centered_ss(&ys),
        n_slopes: design.k(),
        n_year_effects: k - design.k(),
        absorbed: 0,
        variance_components: Some(VarianceComponents {
            sigma_u2,
            sigma_e2,
            floored,
            theta,
        }),
        cluster_labels: design.cluster_labels(),
        names: all_names,
        coefficients: ls.beta,
        xtx_inv: ls.xtx_inv,
        regressors: xs,
        residuals: ls.residuals,
    })
}

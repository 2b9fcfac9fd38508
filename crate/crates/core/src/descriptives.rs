//! Bivariate statistics: Pearson and Spearman correlation, simple
//! regression with a 95% band, and paired t tests. All p-values two-sided.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{t_critical, t_two_sided_p, TestKind, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

fn check_pair(x: &[f64], y: &[f64], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min_n {
        return Err(Error::InvalidInput(format!("need at least {min_n} observations, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series contain non-finite values".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(sxx, syy, sxy)` around the means.
fn centered_moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).fold((0.0, 0.0, 0.0), |(sxx, syy, sxy), (a, b)| {
        let (dx, dy) = (a - mx, b - my);
        (sxx + dx * dx, syy + dy * dy, sxy + dx * dy)
    })
}

/// p-value of a correlation through `t = r·sqrt((n−2)/(1−r²))`, dof `n − 2`.
pub fn correlation_p(r: f64, n: usize) -> f64 {
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    t_two_sided_p(r * ((n - 2) as f64 / denom).sqrt(), (n - 2) as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y, 3)?;
    let (sxx, syy, sxy) = centered_moments(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation undefined for a constant series".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation {
        r,
        p_value: correlation_p(r, x.len()),
        n: x.len(),
    })
}

/// 1-based ranks; ties share the mean of their positions.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y, 3)?;
    pearson(&mid_ranks(x), &mid_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimpleRegression {
    pub slope: f64,
    pub intercept: f64,
    pub se_slope: f64,
    pub se_intercept: f64,
    pub p_slope: f64,
    pub r2: f64,
    pub n: usize,
    /// Residual variance `rss / (n − 2)`.
    pub sigma2: f64,
    x_mean: f64,
    sxx: f64,
}

impl SimpleRegression {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// 95% confidence band for the mean response at `x`: `(fit, lo, hi)`.
    pub fn band95(&self, x: f64) -> (f64, f64, f64) {
        let fit = self.predict(x);
        let se = (self.sigma2 * (1.0 / self.n as f64 + (x - self.x_mean).powi(2) / self.sxx)).sqrt();
        let c = t_critical(0.05, (self.n - 2) as f64);
        (fit, fit - c * se, fit + c * se)
    }
}

/// Least squares of `y` on `x` with an intercept and classical standard errors.
pub fn simple_linreg(x: &[f64], y: &[f64]) -> Result<SimpleRegression> {
    check_pair(x, y, 3)?;
    let n = x.len();
    let (sxx, syy, sxy) = centered_moments(x, y);
    if sxx == 0.0 {
        return Err(Error::Degenerate("regressor is constant".into()));
    }
    let slope = sxy / sxx;
    let (mx, my) = (mean(x), mean(y));
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let sigma2 = rss / (n - 2) as f64;
    let se_slope = (sigma2 / sxx).sqrt();
    let se_intercept = (sigma2 * (1.0 / n as f64 + mx * mx / sxx)).sqrt();
    let p_slope = if se_slope == 0.0 {
        0.0
    } else {
        t_two_sided_p(slope / se_slope, (n - 2) as f64)
    };
    Ok(SimpleRegression {
        slope,
        intercept,
        se_slope,
        se_intercept,
        p_slope,
        r2: if syy == 0.0 { 1.0 } else { (1.0 - rss / syy).clamp(0.0, 1.0) },
        n,
        sigma2,
        x_mean: mx,
        sxx,
    })
}

/// `t = mean(d) / (sd(d)/√n)` on `d = a − b`, dof `n − 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_pair(a, b, 2)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let t = m / (var / n).sqrt();
    Ok(TestResult {
        kind: TestKind::PairedT,
        statistic: t,
        dof: n - 1.0,
        dof2: None,
        p_value: t_two_sided_p(t, n - 1.0),
        flags: vec![],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub x: String,
    pub y: String,
    pub n: usize,
    pub pearson_r: f64,
    pub pearson_p: f64,
    pub spearman_rho: f64,
    pub spearman_p: f64,
    pub ols_slope: f64,
    pub ols_intercept: f64,
    pub ols_p: f64,
}

pub fn correlation_report(x_name: &str, x: &[f64], y_name: &str, y: &[f64]) -> Result<CorrelationReport> {
    let p = pearson(x, y)?;
    let s = spearman(x, y)?;
    let l = simple_linreg(x, y)?;
    Ok(CorrelationReport {
        x: x_name.to_string(),
        y: y_name.to_string(),
        n: p.n,
        pearson_r: p.r,
        pearson_p: p.p_value,
        spearman_rho: s.r,
        spearman_p: s.p_value,
        ols_slope: l.slope,
        ols_intercept: l.intercept,
        ols_p: l.p_slope,
    })
}

pub fn write_correlation_csv<W: Write>(writer: W, rows: &[CorrelationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

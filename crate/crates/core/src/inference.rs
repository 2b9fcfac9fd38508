//! Cluster-robust covariances, coefficient and specification tests, fit
//! metrics and the within-variation diagnostic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::estimators::{Estimator, FitResult};
use crate::linalg::{symmetric_pinv, symmetrize, PivotedQr};
use crate::transforms::GroupIndex;

/// Relative eigenvalue cutoff for the Hausman pseudo-inverse.
pub const HAUSMAN_PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correction {
    CR0,
    CR1,
}

#[derive(Debug, Clone)]
pub struct ClusterCovariance {
    pub matrix: DMatrix<f64>,
    pub n_clusters: usize,
    pub correction: Correction,
}

impl ClusterCovariance {
    pub fn se(&self) -> Vec<f64> {
        (0..self.matrix.nrows()).map(|i| self.matrix[(i, i)].max(0.0).sqrt()).collect()
    }

    /// Student-t reference dof for coefficient tests.
    pub fn dof(&self) -> f64 {
        (self.n_clusters - 1) as f64
    }
}

/// `(XᵀX)⁻¹ (Σ_g X_gᵀe_g e_gᵀX_g) (XᵀX)⁻¹`, times `G/(G−1)·(n−1)/(n−k)` for CR1.
pub fn cluster_robust_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    clusters: &[usize],
    correction: Correction,
) -> Result<ClusterCovariance> {
    let qr = PivotedQr::new(x.clone());
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient {
            columns: qr.dependent_columns().iter().map(|i| format!("column {i}")).collect(),
        });
    }
    sandwich(&qr.xtx_inverse(), x, residuals, clusters, correction)
}

/// Cluster-robust covariance of a fit, clustered on its stored labels (pairs by default).
pub fn cluster_robust(fit: &FitResult, correction: Correction) -> Result<ClusterCovariance> {
    let labels = fit
        .cluster_labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("fit carries no cluster labels".into()))?;
    sandwich(&fit.xtx_inv, &fit.regressors, &fit.residuals, labels, correction)
}

fn sandwich(
    bread: &DMatrix<f64>,
    x: &DMatrix<f64>,
    e: &DVector<f64>,
    clusters: &[usize],
    correction: Correction,
) -> Result<ClusterCovariance> {
    let (n, k) = x.shape();
    if e.len() != n || clusters.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} design rows, {} residuals, {} cluster labels",
            e.len(),
            clusters.len()
        )));
    }
    let groups = GroupIndex::from_labels(clusters);
    let g = groups.n_groups();
    if g < 2 {
        return Err(Error::Degenerate("cluster-robust covariance needs at least two clusters".into()));
    }
    let mut meat = DMatrix::zeros(k, k);
    let mut score = DVector::zeros(k);
    for gi in 0..g {
        score.fill(0.0);
        for &r in groups.rows(gi) {
            score.axpy(e[r], &x.row(r).transpose(), 1.0);
        }
        meat.ger(1.0, &score, &score, 1.0);
    }
    let mut v = bread * meat * bread;
    if correction == Correction::CR1 {
        if n <= k {
            return Err(Error::InvalidInput(format!("{n} observations for {k} regressors")));
        }
        v *= cr1_factor(n, k, g);
    }
    symmetrize(&mut v);
    Ok(ClusterCovariance {
        matrix: v,
        n_clusters: g,
        correction,
    })
}

pub fn cr1_factor(n: usize, k: usize, g: usize) -> f64 {
    (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - k) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    CoefT,
    FeVsPooledF,
    HausmanChi2,
    PairedT,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub dof: f64,
    /// Denominator dof for F tests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dof2: Option<f64>,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Two-sided Student-t p-value; `dof = ∞` gives the normal limit.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let a = t.abs();
    let sf = if dof.is_infinite() {
        Normal::new(0.0, 1.0).expect("unit normal").sf(a)
    } else {
        StudentsT::new(0.0, 1.0, dof).expect("positive dof").sf(a)
    };
    (2.0 * sf).clamp(0.0, 1.0)
}

/// Two-sided critical value `t_{1−α/2, dof}`.
pub fn t_critical(alpha: f64, dof: f64) -> f64 {
    if dof.is_infinite() {
        Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(1.0 - alpha / 2.0)
    } else {
        StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(1.0 - alpha / 2.0)
    }
}

pub fn chi_square_p(statistic: f64, dof: f64) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof).expect("positive dof").sf(statistic)
}

pub fn f_p(statistic: f64, d1: f64, d2: f64) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(d1, d2).expect("positive dof").sf(statistic)
}

/// `***` p<0.01, `**` p<0.05, `*` p<0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefTest {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub dof: f64,
    pub p_value: f64,
    pub ci90: (f64, f64),
    pub ci95: (f64, f64),
    pub stars: &'static str,
    /// `se = 0`; p is reported as 0.
    pub degenerate: bool,
}

/// Per-coefficient t tests against the diagonal of `covariance`.
pub fn coef_tests(names: &[String], estimates: &[f64], covariance: &DMatrix<f64>, dof: f64) -> Result<Vec<CoefTest>> {
    let k = names.len();
    if estimates.len() != k || covariance.shape() != (k, k) {
        return Err(Error::InvalidInput(format!(
            "{k} names, {} estimates, {:?} covariance",
            estimates.len(),
            covariance.shape()
        )));
    }
    if !(dof > 0.0) {
        return Err(Error::InvalidParameter(format!("t-test dof {dof} must be positive")));
    }
    let c90 = t_critical(0.10, dof);
    let c95 = t_critical(0.05, dof);
    Ok(names
        .iter()
        .zip(estimates)
        .enumerate()
        .map(|(i, (name, &b))| {
            let se = covariance[(i, i)].max(0.0).sqrt();
            let degenerate = se == 0.0;
            let (t, p) = if degenerate {
                let t = if b == 0.0 { 0.0 } else { b.signum() * f64::INFINITY };
                (t, 0.0)
            } else {
                let t = b / se;
                (t, t_two_sided_p(t, dof))
            };
            CoefTest {
                name: name.clone(),
                estimate: b,
                se,
                t,
                dof,
                p_value: p,
                ci90: (b - c90 * se, b + c90 * se),
                ci95: (b - c95 * se, b + c95 * se),
                stars: stars(p),
                degenerate,
            }
        })
        .collect())
}

/// Coefficient tests of a fit under a cluster covariance, with dof `G − 1`.
pub fn coef_tests_clustered(fit: &FitResult, cov: &ClusterCovariance) -> Result<Vec<CoefTest>> {
    coef_tests(&fit.names, fit.coefficients.as_slice(), &cov.matrix, cov.dof())
}

/// F test of the pair effects: pooled OLS nested in the fixed-effects model.
pub fn f_test_fe_vs_pooled(fe: &FitResult, pooled: &FitResult) -> Result<TestResult> {
    if fe.estimator != Estimator::FixedEffects || pooled.estimator != Estimator::Pooled {
        return Err(Error::InvalidInput(format!(
            "F test needs a fixed-effects and a pooled fit, got {} and {}",
            fe.estimator, pooled.estimator
        )));
    }
    if fe.outcome != pooled.outcome || fe.n != pooled.n || fe.slope_names() != pooled.slope_names() {
        return Err(Error::InvalidInput("F test fits differ in outcome, sample or slopes".into()));
    }
    if fe.absorbed < 2 {
        return Err(Error::InvalidInput("F test needs at least two pairs".into()));
    }
    let q = (fe.absorbed - 1) as f64;
    let d2 = fe.dof as f64;
    let mut diff = pooled.rss - fe.rss;
    if diff < 0.0 {
        if -diff > 1e-10 * pooled.rss.max(1.0) {
            return Err(Error::NumericalInconsistency(format!(
                "pooled RSS {} below fixed-effects RSS {}",
                pooled.rss, fe.rss
            )));
        }
        diff = 0.0;
    }
    let mut flags = Vec::new();
    let statistic = if fe.rss > 0.0 {
        (diff / q) / (fe.rss / d2)
    } else {
        flags.push("zero fixed-effects RSS".to_string());
        if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let p_value = if statistic.is_infinite() { 0.0 } else { f_p(statistic, q, d2) };
    Ok(TestResult {
        kind: TestKind::FeVsPooledF,
        statistic,
        dof: q,
        dof2: Some(d2),
        p_value,
        flags,
    })
}

/// `H = dᵀ V⁺ d` with the pseudo-inverse of `V`; returns `(H, rank, not_pd)`.
pub fn hausman_statistic(d: &DVector<f64>, v_diff: &DMatrix<f64>) -> (f64, usize, bool) {
    let pinv = symmetric_pinv(v_diff, HAUSMAN_PINV_CUTOFF);
    let h = (d.transpose() * &pinv.inverse * d)[(0, 0)];
    (h.max(0.0), pinv.rank, pinv.not_positive_definite)
}

/// Hausman test over `names`, using each fit's classical covariance.
/// Names missing from either fit are skipped and flagged.
pub fn hausman_test(fe: &FitResult, re: &FitResult, names: &[String]) -> Result<TestResult> {
    let mut idx = Vec::new();
    let mut flags = Vec::new();
    for name in names {
        match (fe.index(name), re.index(name)) {
            (Some(i), Some(j)) => idx.push((i, j)),
            _ => flags.push(format!("`{name}` absent from a fit")),
        }
    }
    if idx.is_empty() {
        return Err(Error::InvalidInput("no tested coefficient is present in both fits".into()));
    }
    let m = idx.len();
    let d = DVector::from_fn(m, |a, _| fe.coefficients[idx[a].0] - re.coefficients[idx[a].1]);
    let v = DMatrix::from_fn(m, m, |a, b| {
        fe.covariance[(idx[a].0, idx[b].0)] - re.covariance[(idx[a].1, idx[b].1)]
    });
    let (h, _, not_pd) = hausman_statistic(&d, &v);
    if not_pd {
        flags.push("variance difference not positive definite; pseudo-inverse used".into());
    }
    Ok(TestResult {
        kind: TestKind::HausmanChi2,
        statistic: h,
        dof: m as f64,
        dof2: None,
        p_value: chi_square_p(h, m as f64),
        flags,
    })
}

pub const METRICS_CONVENTION: &str = "adj R2 = 1 - (RSS/dof)/(TSS/(n-1)), TSS at the estimator's level (within for FE); \
RMSE = sqrt(RSS/n); AIC = n ln(RSS/n) + 2k, BIC = n ln(RSS/n) + k ln(n), k = slopes + 1, Gaussian constants dropped";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitMetrics {
    pub adj_r2: f64,
    pub rmse: f64,
    pub aic: f64,
    pub bic: f64,
    pub k_eff: usize,
    pub convention: &'static str,
}

pub fn fit_metrics(fit: &FitResult) -> Result<FitMetrics> {
    let n = fit.n;
    let k_eff = fit.n_slopes + 1;
    if n <= k_eff {
        return Err(Error::InvalidInput(format!("{n} observations for {k_eff} effective parameters")));
    }
    if !(fit.tss > 0.0) {
        return Err(Error::Degenerate("outcome has no variation at the estimator's level".into()));
    }
    let rss = fit.rss.max(1e-300);
    let nf = n as f64;
    let ll = nf * (rss / nf).ln();
    Ok(FitMetrics {
        adj_r2: 1.0 - (rss / fit.dof as f64) / (fit.tss / (nf - 1.0)),
        rmse: (rss / nf).sqrt(),
        aic: ll + 2.0 * k_eff as f64,
        bic: ll + k_eff as f64 * nf.ln(),
        k_eff,
        convention: METRICS_CONVENTION,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WithinShare {
    pub column: String,
    pub total_ss: f64,
    pub within_ss: f64,
    /// `None` when the column has no variation.
    pub within_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WithinVariationReport {
    pub columns: Vec<WithinShare>,
    pub n_pairs: usize,
    /// Share of pairs observed in at least two years.
    pub share_multi_year: f64,
}

/// Within-pair sum of squares over total sum of squares, per column.
pub fn within_variation_report(panel: &PanelDataset, columns: &[&str]) -> Result<WithinVariationReport> {
    if panel.is_empty() {
        return Err(Error::InvalidInput("empty panel".into()));
    }
    let groups = panel.pair_index();
    let rows = columns
        .iter()
        .map(|&c| {
            let v = panel.column(c)?;
            Ok(within_share(c, &v, &groups))
        })
        .collect::<Result<_>>()?;
    Ok(WithinVariationReport {
        columns: rows,
        n_pairs: groups.n_groups(),
        share_multi_year: panel.share_multi_year(),
    })
}

fn within_share(column: &str, v: &[f64], groups: &GroupIndex) -> WithinShare {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let total_ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    let means = groups.means(v);
    let within_ss: f64 = v
        .iter()
        .enumerate()
        .map(|(r, x)| {
            let d = x - means[groups.group_of(r)];
            d * d
        })
        .sum();
    // rounding floor for a constant column
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = n * (4.0 * f64::EPSILON * scale).powi(2);
    WithinShare {
        column: column.to_string(),
        total_ss,
        within_ss,
        within_share: (total_ss > floor).then(|| (within_ss / total_ss).clamp(0.0, 1.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::tests::simulate;
    use crate::estimators::{fit_fixed_effects, fit_pooled_ols, fit_random_effects, DesignMatrix};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha20Rng, n: usize, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))
    }

    /// Term-by-term sandwich: Σ_g Σ_{i,j∈g} e_i e_j x_i x_jᵀ, bread by explicit inverse.
    pub(crate) fn brute_force_sandwich(x: &DMatrix<f64>, e: &DVector<f64>, cl: &[usize]) -> DMatrix<f64> {
        let (n, k) = x.shape();
        let bread = (x.transpose() * x).try_inverse().unwrap();
        let mut meat = DMatrix::zeros(k, k);
        for i in 0..n {
            for j in 0..n {
                if cl[i] != cl[j] {
                    continue;
                }
                for a in 0..k {
                    for b in 0..k {
                        meat[(a, b)] += e[i] * e[j] * x[(i, a)] * x[(j, b)];
                    }
                }
            }
        }
        &bread * meat * &bread
    }

    #[test]
    fn three_cluster_hand_expansion() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 9, 2);
        let e = DVector::from_fn(9, |_, _| rng.sample(StandardNormal));
        let cl = [0, 0, 1, 1, 1, 2, 2, 2, 0];
        let got = cluster_robust_cov(&x, &e, &cl, Correction::CR0).unwrap();
        let want = brute_force_sandwich(&x, &e, &cl);
        assert_eq!(got.n_clusters, 3);
        for (a, b) in got.matrix.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let cr1 = cluster_robust_cov(&x, &e, &cl, Correction::CR1).unwrap();
        let f = 3.0 / 2.0 * 8.0 / 7.0;
        for (a, b) in cr1.matrix.iter().zip(got.matrix.iter()) {
            assert_relative_eq!(*a, b * f, max_relative = 1e-14);
        }
    }

    #[test]
    fn singleton_clusters_give_hc0() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let n = 30;
        let x = random_matrix(&mut rng, n, 3);
        let e = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let cl: Vec<usize> = (0..n).collect();
        let got = cluster_robust_cov(&x, &e, &cl, Correction::CR0).unwrap();
        let bread = (x.transpose() * &x).try_inverse().unwrap();
        let mut meat = DMatrix::zeros(3, 3);
        for i in 0..n {
            let xi = x.row(i).transpose();
            meat += &xi * xi.transpose() * (e[i] * e[i]);
        }
        let hc0 = &bread * meat * &bread;
        for (a, b) in got.matrix.iter().zip(hc0.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cluster_is_an_error() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let e = DVector::from_vec(vec![0.1, -0.2, 0.1]);
        assert!(cluster_robust_cov(&x, &e, &[4, 4, 4], Correction::CR1).is_err());
    }

    proptest! {
        #[test]
        fn sandwich_invariant_to_row_order(seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let n = 24;
            let x = random_matrix(&mut rng, n, 2);
            let e = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            let cl: Vec<usize> = (0..n).map(|i| i % 5).collect();
            let a = cluster_robust_cov(&x, &e, &cl, Correction::CR1).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let xp = DMatrix::from_fn(n, 2, |r, c| x[(perm[r], c)]);
            let ep = DVector::from_fn(n, |r, _| e[perm[r]]);
            let clp: Vec<usize> = perm.iter().map(|&i| cl[i]).collect();
            let b = cluster_robust_cov(&xp, &ep, &clp, Correction::CR1).unwrap();
            for (u, v) in a.matrix.iter().zip(b.matrix.iter()) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1e-12));
            }
            // PSD
            prop_assert!(crate::linalg::min_eigenvalue(&a.matrix) >= -1e-10);
        }

        #[test]
        fn p_monotone_in_statistic(a in 0.0f64..10.0, b in 0.0f64..10.0, dof in 1.0f64..200.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(t_two_sided_p(hi, dof) <= t_two_sided_p(lo, dof));
            prop_assert!(chi_square_p(hi, dof) <= chi_square_p(lo, dof));
            prop_assert!(f_p(hi, dof, 50.0) <= f_p(lo, dof, 50.0));
        }
    }

    #[test]
    fn coefficient_test_examples() {
        let names = vec!["a".to_string(), "b".into(), "c".into(), "d".into()];
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.0004f64.powi(2), 0.0]));
        let t = coef_tests(&names, &[0.0, 1.96, 0.0021, 0.3], &cov, 1e7).unwrap();
        assert_eq!((t[0].t, t[0].p_value), (0.0, 1.0));
        assert!((t[1].p_value - 0.05).abs() < 5e-3);
        assert_relative_eq!(t[2].t, 5.25, max_relative = 1e-12);
        let at100 = coef_tests(&names[2..3], &[0.0021], &DMatrix::from_element(1, 1, 0.0004f64.powi(2)), 100.0).unwrap();
        assert!(at100[0].p_value < 1e-4);
        assert_eq!(at100[0].stars, "***");
        assert!(t[3].degenerate && t[3].p_value == 0.0);
        // 95% band wider than 90% band
        assert!(t[1].ci95.0 < t[1].ci90.0 && t[1].ci95.1 > t[1].ci90.1);
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.2), "");
        assert_eq!(stars(0.099), "*");
        assert_eq!(stars(0.049), "**");
        assert_eq!(stars(0.0099), "***");
        assert_eq!(stars(0.05), "*");
    }

    #[test]
    fn chi_square_closed_form_dof4() {
        for x in [0.5, 3.0, 9.0866, 20.0] {
            let closed = (-x / 2.0f64).exp() * (1.0 + x / 2.0);
            assert_relative_eq!(chi_square_p(x, 4.0), closed, max_relative = 1e-10);
        }
        assert!((chi_square_p(9.0866, 4.0) - 0.059).abs() < 1e-3);
        assert!((chi_square_p(34.8554, 16.0) - 0.0042).abs() < 5e-4);
    }

    #[test]
    fn hausman_zero_difference() {
        let d = DVector::zeros(3);
        let v = DMatrix::identity(3, 3);
        let (h, rank, not_pd) = hausman_statistic(&d, &v);
        assert_eq!((h, rank, not_pd), (0.0, 3, false));
        assert_eq!(chi_square_p(h, 3.0), 1.0);
    }

    #[test]
    fn hausman_flags_singular_difference() {
        let d = DVector::from_vec(vec![1.0, 2.0]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (h, rank, not_pd) = hausman_statistic(&d, &v);
        assert_eq!(rank, 1);
        assert!(not_pd);
        assert_relative_eq!(h, 1.0, max_relative = 1e-12);
    }

    fn scaled(design: &DesignMatrix, col: usize, c: f64) -> DesignMatrix {
        let mut d = design.clone();
        for r in 0..d.n() {
            d.x[(r, col)] *= c;
        }
        d
    }

    #[test]
    fn hausman_invariant_to_column_scaling() {
        let s = simulate(9, 40, &[2017, 2018, 2019, 2020], 3, 1.0, 0.3, 1.0);
        let names: Vec<String> = s.design.names.clone();
        let h0 = hausman_test(
            &fit_fixed_effects(&s.design).unwrap(),
            &fit_random_effects(&s.design).unwrap(),
            &names,
        )
        .unwrap();
        let d2 = scaled(&scaled(&s.design, 0, 7.5), 2, 0.01);
        let h1 = hausman_test(&fit_fixed_effects(&d2).unwrap(), &fit_random_effects(&d2).unwrap(), &names).unwrap();
        assert_relative_eq!(h0.statistic, h1.statistic, max_relative = 1e-6);
        assert_eq!(h0.dof, 3.0);
    }

    #[test]
    fn hausman_requires_shared_names() {
        let s = simulate(10, 20, &[2017, 2018, 2019], 2, 1.0, 0.3, 1.0);
        let fe = fit_fixed_effects(&s.design).unwrap();
        let re = fit_random_effects(&s.design).unwrap();
        assert!(hausman_test(&fe, &re, &["nope".to_string()]).is_err());
        let t = hausman_test(&fe, &re, &["x0".to_string(), "nope".to_string()]).unwrap();
        assert_eq!(t.dof, 1.0);
        assert_eq!(t.flags.len(), 1);
    }

    #[test]
    fn f_test_identical_rss() {
        let s = simulate(11, 20, &[2017, 2018, 2019], 2, 1.0, 0.3, 1.0);
        let fe = fit_fixed_effects(&s.design).unwrap();
        let mut pooled = fit_pooled_ols(&s.design).unwrap();
        pooled.rss = fe.rss;
        let t = f_test_fe_vs_pooled(&fe, &pooled).unwrap();
        assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
        pooled.rss = fe.rss * 0.5;
        assert!(matches!(f_test_fe_vs_pooled(&fe, &pooled), Err(Error::NumericalInconsistency(_))));
    }

    #[test]
    fn f_test_dof_and_strong_effects() {
        let s = simulate(12, 50, &[2017, 2018, 2019, 2020], 2, 5.0, 0.0, 1.0);
        let fe = fit_fixed_effects(&s.design).unwrap();
        let pooled = fit_pooled_ols(&s.design).unwrap();
        let t = f_test_fe_vs_pooled(&fe, &pooled).unwrap();
        assert_eq!(t.dof, 49.0);
        assert_eq!(t.dof2, Some(fe.dof as f64));
        let direct = ((pooled.rss - fe.rss) / 49.0) / (fe.rss / fe.dof as f64);
        assert_relative_eq!(t.statistic, direct, max_relative = 1e-12);
        assert!(t.p_value < 1e-6);
    }

    #[test]
    fn cluster_variance_close_to_classical_under_iid_errors() {
        // Monte Carlo: mean clustered variance vs mean classical variance, 500 reps
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let (n, reps) = (400, 500);
        let mut sum_cl = [0.0; 3];
        let mut sum_ols = [0.0; 3];
        for _ in 0..reps {
            let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let y: Vec<f64> = (0..n).map(|i| 1.0 + cols[0][i] - cols[1][i] + rng.sample::<f64, _>(StandardNormal)).collect();
            let d = DesignMatrix::new("y", vec!["a".into(), "b".into()], cols, y)
                .unwrap()
                .with_clusters((0..n).map(|i| i / 4).collect());
            let f = fit_pooled_ols(&d).unwrap();
            let c = cluster_robust(&f, Correction::CR1).unwrap();
            for j in 0..3 {
                sum_cl[j] += c.matrix[(j, j)];
                sum_ols[j] += f.covariance[(j, j)];
            }
        }
        for j in 0..3 {
            let r = sum_cl[j] / sum_ols[j];
            assert!((r - 1.0).abs() < 0.15, "coefficient {j}: ratio {r}");
        }
    }

    #[test]
    fn metric_examples() {
        let s = simulate(14, 20, &[2017, 2018, 2019], 2, 1.0, 0.3, 1.0);
        let mut fe = fit_fixed_effects(&s.design).unwrap();
        let m = fit_metrics(&fe).unwrap();
        let n = fe.n as f64;
        let k = 3.0;
        assert_relative_eq!(m.aic, n * (fe.rss / n).ln() + 2.0 * k, max_relative = 1e-12);
        assert_relative_eq!(m.bic, n * (fe.rss / n).ln() + k * n.ln(), max_relative = 1e-12);
        assert_relative_eq!(m.rmse, (fe.rss / n).sqrt(), max_relative = 1e-12);
        let tss_within: f64 = {
            let y: Vec<f64> = s.design.y.iter().copied().collect();
            let (d, _) = crate::transforms::demean(&y, s.design.groups.as_ref().unwrap());
            d.iter().map(|v| v * v).sum()
        };
        assert_relative_eq!(m.adj_r2, 1.0 - (fe.rss / fe.dof as f64) / (tss_within / (n - 1.0)), max_relative = 1e-12);
        assert!(m.bic >= m.aic);

        fe.rss = n;
        let unit = fit_metrics(&fe).unwrap();
        assert_relative_eq!(unit.aic, 2.0 * k, epsilon = 1e-9);
        assert_relative_eq!(unit.bic, k * n.ln(), epsilon = 1e-9);
        fe.rss = 0.0;
        assert_eq!(fit_metrics(&fe).unwrap().adj_r2, 1.0);
    }

    #[test]
    fn within_share_examples() {
        use crate::transforms::tests::{random_panel, toy_panel};
        let between = toy_panel(&[(0, 2018, 0.01, 1.0), (0, 2019, 0.01, 1.0), (1, 2018, 0.01, 5.0), (1, 2019, 0.01, 5.0)]);
        let r = within_variation_report(&between, &["x"]).unwrap();
        assert_eq!(r.columns[0].within_share, Some(0.0));
        let within = toy_panel(&[(0, 2018, 0.01, 1.0), (0, 2019, 0.01, 3.0), (1, 2018, 0.01, 3.0), (1, 2019, 0.01, 1.0)]);
        assert_eq!(within_variation_report(&within, &["x"]).unwrap().columns[0].within_share, Some(1.0));
        let flat = toy_panel(&[(0, 2018, 0.01, 0.3), (0, 2019, 0.01, 0.3), (1, 2018, 0.01, 0.3)]);
        assert_eq!(within_variation_report(&flat, &["x"]).unwrap().columns[0].within_share, None);

        // explicit decomposition oracle: total = within + between
        let p = random_panel(15, 40, &[2017, 2018, 2019], 0.7);
        let r = within_variation_report(&p, &["x", "ln_outflow"]).unwrap();
        for row in &r.columns {
            let v = p.column(&row.column).unwrap();
            let mut by_pair: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
            for (o, x) in p.observations().iter().zip(&v) {
                by_pair.entry(format!("{:?}", o.pair)).or_default().push(*x);
            }
            let grand = v.iter().sum::<f64>() / v.len() as f64;
            let mut within = 0.0;
            let mut between = 0.0;
            for xs in by_pair.values() {
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                within += xs.iter().map(|x| (x - m).powi(2)).sum::<f64>();
                between += xs.len() as f64 * (m - grand).powi(2);
            }
            assert_relative_eq!(row.within_ss, within, max_relative = 1e-10);
            let share = row.within_share.unwrap();
            assert!((share + between / row.total_ss - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.n_pairs, p.pair_index().n_groups());
    }
}

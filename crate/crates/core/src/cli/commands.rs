use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Format, MarginsRequest, RunConfig};
use super::report::{fmt4, fmt_opt, markdown_grid, to_json, Cell, FooterRow, FooterValue, ReportTable, TableRow};
use crate::data::{summarize, Endpoint, Moderator, PanelDataset, SummaryRow};
use crate::descriptives::{correlation_report, paired_t_test, CorrelationReport};
use crate::error::{Error, Result};
use crate::estimators::{fit_fixed_effects, fit_pooled_ols, fit_random_effects, FitResult, INTERCEPT};
use crate::inference::{
    cluster_robust, coef_tests, coef_tests_clustered, f_test_fe_vs_pooled, fit_metrics, hausman_test,
    within_variation_report, CoefTest, Correction, FitMetrics, TestResult, WithinVariationReport, METRICS_CONVENTION,
};
use crate::margins::{effect_curve, EffectPolynomial, MarginalEffectCurve};
use crate::specs::{Effects, ModelSpec, BASELINE_COLUMNS};
use crate::synth::generate;
use crate::transforms::{exclude_year, subsample, trim, winsorize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_ESTIMATION: i32 = 4;

pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, e: impl std::fmt::Display) -> Self {
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Output-side I/O failures.
fn io(e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_IO, e)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> std::result::Result<(), Failure> {
    std::fs::write(dir.join(name), contents).map_err(|e| io(format!("{}: {e}", dir.join(name).display())))
}

fn csv_file(dir: &Path, name: &str) -> std::result::Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| io(format!("{}: {e}", path.display())))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> std::result::Result<(), Failure> {
    let mut w = csv::Writer::from_writer(csv_file(dir, name)?);
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Validates, creates the output directory and echoes the effective config.
pub fn prepare(cfg: &RunConfig) -> std::result::Result<(), Failure> {
    cfg.validate().map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| io(format!("{}: {e}", cfg.output_dir.display())))?;
    let echo = cfg.effective_toml().map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    write_file(&cfg.output_dir, EFFECTIVE_CONFIG, &echo)
}

fn load(cfg: &RunConfig) -> std::result::Result<PanelDataset, Failure> {
    cfg.load_panel().map_err(|e| {
        let code = if matches!(e, Error::Config(_)) { EXIT_CONFIG } else { EXIT_DATA };
        Failure::new(code, e)
    })
}

pub fn cmd_synth(cfg: &RunConfig) -> std::result::Result<(), Failure> {
    prepare(cfg)?;
    let s = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_CONFIG, "synth needs a [synth] table"))?;
    let g = generate(s).map_err(|e| Failure::new(EXIT_DATA, e))?;
    g.write_to(&cfg.output_dir).map_err(io)
}

// ---------------------------------------------------------------- fit

/// Every fit, test and metric behind one spec's table.
#[derive(Debug, Clone, Serialize)]
pub struct SpecReport {
    pub spec: ModelSpec,
    pub table: ReportTable,
    pub fixed_effects: Vec<CoefTest>,
    pub pooled: Vec<CoefTest>,
    pub random_effects: Vec<CoefTest>,
    pub f_test: TestResult,
    pub hausman: Option<TestResult>,
    pub hausman_error: Option<String>,
    pub metrics: Vec<(String, Option<FitMetrics>)>,
    pub n_clusters: usize,
    pub sigma_u2: Option<f64>,
    pub sigma_e2: Option<f64>,
}

const MODEL_COLUMNS: [&str; 3] = ["FE", "Pooled OLS", "RE"];

fn classical_tests(fit: &FitResult) -> Result<Vec<CoefTest>> {
    coef_tests(&fit.names, fit.coefficients.as_slice(), &fit.covariance, fit.dof as f64)
}

pub fn fit_spec(panel: &PanelDataset, spec: &ModelSpec) -> Result<SpecReport> {
    let (design, _) = spec.build(panel)?;
    let fe = fit_fixed_effects(&design)?;
    let pooled = fit_pooled_ols(&design)?;
    let re = fit_random_effects(&design)?;
    let cl = cluster_robust(&fe, Correction::CR1)?;
    let fe_tests = coef_tests_clustered(&fe, &cl)?;
    let pooled_tests = classical_tests(&pooled)?;
    let re_tests = classical_tests(&re)?;
    let f_test = f_test_fe_vs_pooled(&fe, &pooled)?;
    let (hausman, hausman_error) = match hausman_test(&fe, &re, &fe.slope_names()) {
        Ok(h) => (Some(h), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let fits = [&fe, &pooled, &re];
    let metrics: Vec<Option<FitMetrics>> = fits.iter().map(|f| fit_metrics(f).ok()).collect();

    let mut labels = fe.slope_names();
    labels.push(INTERCEPT.to_string());
    let tests = [&fe_tests, &pooled_tests, &re_tests];
    let rows = labels
        .iter()
        .map(|l| TableRow {
            label: l.clone(),
            cells: tests
                .iter()
                .map(|t| t.iter().find(|c| &c.name == l).map(|c| Cell::new(c.estimate, c.se, c.p_value)))
                .collect(),
        })
        .collect();

    let first = |v: Option<f64>| vec![v.map(FooterValue::Real), None, None];
    let per_fit = |g: &dyn Fn(&FitMetrics) -> f64| -> Vec<Option<FooterValue>> {
        metrics.iter().map(|m| m.as_ref().map(|m| FooterValue::Real(g(m)))).collect()
    };
    let footer = vec![
        FooterRow {
            label: "F (FE vs pooled)".into(),
            values: first(Some(f_test.statistic)),
        },
        FooterRow {
            label: "F p-value".into(),
            values: first(Some(f_test.p_value)),
        },
        FooterRow {
            label: "Hausman chi2".into(),
            values: first(hausman.as_ref().map(|h| h.statistic)),
        },
        FooterRow {
            label: "Hausman p-value".into(),
            values: first(hausman.as_ref().map(|h| h.p_value)),
        },
        FooterRow {
            label: "n".into(),
            values: fits.iter().map(|f| Some(FooterValue::Count(f.n))).collect(),
        },
        FooterRow {
            label: "adj R2".into(),
            values: per_fit(&|m| m.adj_r2),
        },
        FooterRow {
            label: "RMSE".into(),
            values: per_fit(&|m| m.rmse),
        },
        FooterRow {
            label: "AIC".into(),
            values: per_fit(&|m| m.aic),
        },
        FooterRow {
            label: "BIC".into(),
            values: per_fit(&|m| m.bic),
        },
    ];
    let mut notes = vec![
        format!(
            "FE: pair and year effects absorbed; CR1 standard errors clustered on {} ({} clusters, t dof {}).",
            format!("{:?}", spec.cluster).to_lowercase(),
            cl.n_clusters,
            cl.dof()
        ),
        "Pooled OLS and RE: classical standard errors; year effects included, not shown.".into(),
        "* p<0.1, ** p<0.05, *** p<0.01".into(),
        METRICS_CONVENTION.to_string(),
    ];
    if let Some(h) = &hausman {
        if !h.flags.is_empty() {
            notes.push(format!("Hausman flags: {}", h.flags.join(", ")));
        }
    }
    if let Some(e) = &hausman_error {
        notes.push(format!("Hausman unavailable: {e}"));
    }
    let vc = re.variance_components.as_ref();
    Ok(SpecReport {
        spec: spec.clone(),
        table: ReportTable {
            title: format!("Model `{}` ({})", spec.name, design.outcome),
            columns: MODEL_COLUMNS.iter().map(|s| s.to_string()).collect(),
            rows,
            footer,
            notes,
        },
        fixed_effects: fe_tests,
        pooled: pooled_tests,
        random_effects: re_tests,
        f_test,
        hausman,
        hausman_error,
        metrics: MODEL_COLUMNS.iter().map(|s| s.to_string()).zip(metrics).collect(),
        n_clusters: cl.n_clusters,
        sigma_u2: vc.map(|v| v.sigma_u2),
        sigma_e2: vc.map(|v| v.sigma_e2),
    })
}

#[derive(Serialize)]
struct FitError {
    spec: String,
    error: String,
}

/// Writes the failure table, if any, and reports the first failure.
fn fail_on(dir: &Path, name: &str, failures: Vec<FitError>) -> std::result::Result<(), Failure> {
    let Some(first) = failures.first() else {
        return Ok(());
    };
    let message = format!("{}: {}", first.spec, first.error);
    write_rows(dir, name, &failures)?;
    Err(Failure::new(EXIT_ESTIMATION, message))
}

pub fn cmd_fit(cfg: &RunConfig) -> std::result::Result<(), Failure> {
    prepare(cfg)?;
    let panel = load(cfg)?;
    let dir = &cfg.output_dir;
    let results: Vec<Result<SpecReport>> = cfg.models.par_iter().map(|s| fit_spec(&panel, s)).collect();

    let mut failures = Vec::new();
    for (spec, res) in cfg.models.iter().zip(results) {
        match res {
            Ok(rep) => {
                let stem = format!("fit_{}", spec.name);
                if cfg.wants(Format::Md) {
                    write_file(dir, &format!("{stem}.md"), &rep.table.to_markdown())?;
                }
                if cfg.wants(Format::Csv) {
                    rep.table.write_csv(csv_file(dir, &format!("{stem}.csv"))?).map_err(io)?;
                }
                if cfg.wants(Format::Json) {
                    write_file(dir, &format!("{stem}.json"), &to_json(&rep).map_err(io)?)?;
                }
            }
            Err(e) => failures.push(FitError {
                spec: spec.name.clone(),
                error: e.to_string(),
            }),
        }
    }
    fail_on(dir, "fit_errors.csv", failures)
}

// ---------------------------------------------------------------- robustness

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub variant: String,
    pub detail: String,
    pub regressor: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci90_lo: Option<f64>,
    pub ci90_hi: Option<f64>,
    pub ci95_lo: Option<f64>,
    pub ci95_hi: Option<f64>,
    pub p_value: Option<f64>,
    pub stars: String,
    pub n: Option<usize>,
    pub error: String,
}

struct Variant {
    name: String,
    detail: String,
    effects: Effects,
    lag: u8,
    panel: fn(&PanelDataset, &RunConfig) -> Result<PanelDataset>,
}

fn identity(p: &PanelDataset, _: &RunConfig) -> Result<PanelDataset> {
    Ok(p.clone())
}

fn variants(cfg: &RunConfig, base: &ModelSpec) -> Vec<Variant> {
    let r = &cfg.robustness;
    let main = base.effects;
    let mut out = vec![
        Variant {
            name: "main".into(),
            detail: String::new(),
            effects: main,
            lag: base.lag,
            panel: identity,
        },
        Variant {
            name: "random-effects".into(),
            detail: String::new(),
            effects: Effects::Random,
            lag: base.lag,
            panel: identity,
        },
        Variant {
            name: "winsorize".into(),
            detail: format!("{} at {} per tail", r.column, r.winsorize_pct),
            effects: main,
            lag: base.lag,
            panel: |p, c| winsorize(p, &c.robustness.column, c.robustness.winsorize_pct),
        },
        Variant {
            name: "trim".into(),
            detail: format!("{} at {} per tail", r.column, r.trim_pct),
            effects: main,
            lag: base.lag,
            panel: |p, c| trim(p, &c.robustness.column, c.robustness.trim_pct),
        },
        Variant {
            name: "subsample".into(),
            detail: format!("fraction {} seed {}", r.subsample_fraction, r.subsample_seed),
            effects: main,
            lag: base.lag,
            panel: |p, c| subsample(p, c.robustness.subsample_fraction, c.robustness.subsample_seed),
        },
    ];
    if !r.exclude_years.is_empty() {
        let years: Vec<String> = r.exclude_years.iter().map(|y| y.to_string()).collect();
        out.push(Variant {
            name: "exclude-year".into(),
            detail: years.join(" "),
            effects: main,
            lag: base.lag,
            panel: |p, c| {
                let mut p = p.clone();
                for &y in &c.robustness.exclude_years {
                    p = exclude_year(&p, y)?;
                }
                Ok(p)
            },
        });
    }
    for &k in &r.lag_k {
        out.push(Variant {
            name: format!("lag-{k}"),
            detail: String::new(),
            effects: main,
            lag: k,
            panel: identity,
        });
    }
    out
}

fn run_variant(panel: &PanelDataset, cfg: &RunConfig, base: &ModelSpec, v: &Variant) -> Result<(Vec<CoefTest>, usize)> {
    let p = (v.panel)(panel, cfg)?;
    let spec = ModelSpec {
        lag: v.lag,
        effects: v.effects,
        ..base.clone()
    };
    let (design, _) = spec.build(&p)?;
    let fit = match v.effects {
        Effects::TwoWayFixed => fit_fixed_effects(&design)?,
        Effects::Random => fit_random_effects(&design)?,
        Effects::Pooled => fit_pooled_ols(&design)?,
    };
    let cl = cluster_robust(&fit, Correction::CR1)?;
    Ok((coef_tests_clustered(&fit, &cl)?, fit.n))
}

pub fn robustness_rows(panel: &PanelDataset, cfg: &RunConfig) -> Result<Vec<RobustnessRow>> {
    let name = &cfg.robustness.spec;
    let base = cfg
        .spec(name)
        .ok_or_else(|| Error::Config(format!("robustness spec `{name}` is not among [[models]]")))?;
    let regressors = base.policy_columns();
    let vs = variants(cfg, base);
    let results: Vec<_> = vs.par_iter().map(|v| run_variant(panel, cfg, base, v)).collect();
    let mut rows = Vec::with_capacity(vs.len() * regressors.len());
    for (v, res) in vs.iter().zip(results) {
        for reg in &regressors {
            let mut row = RobustnessRow {
                variant: v.name.clone(),
                detail: v.detail.clone(),
                regressor: reg.clone(),
                estimate: None,
                se: None,
                ci90_lo: None,
                ci90_hi: None,
                ci95_lo: None,
                ci95_hi: None,
                p_value: None,
                stars: String::new(),
                n: None,
                error: String::new(),
            };
            match &res {
                Ok((tests, n)) => {
                    row.n = Some(*n);
                    match tests.iter().find(|t| &t.name == reg) {
                        Some(t) => {
                            row.estimate = Some(t.estimate);
                            row.se = Some(t.se);
                            row.ci90_lo = Some(t.ci90.0);
                            row.ci90_hi = Some(t.ci90.1);
                            row.ci95_lo = Some(t.ci95.0);
                            row.ci95_hi = Some(t.ci95.1);
                            row.p_value = Some(t.p_value);
                            row.stars = t.stars.to_string();
                        }
                        None => row.error = format!("`{reg}` not estimated"),
                    }
                }
                Err(e) => row.error = e.to_string(),
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn cmd_robustness(cfg: &RunConfig) -> std::result::Result<(), Failure> {
    prepare(cfg)?;
    if cfg.spec(&cfg.robustness.spec).is_none() {
        return Err(Failure::new(
            EXIT_CONFIG,
            format!("robustness spec `{}` is not among [[models]]", cfg.robustness.spec),
        ));
    }
    let panel = load(cfg)?;
    let rows = robustness_rows(&panel, cfg).map_err(|e| Failure::new(EXIT_ESTIMATION, e))?;
    let dir = &cfg.output_dir;
    // tidy long table is always written
    write_rows(dir, "robustness.csv", &rows)?;
    if cfg.wants(Format::Md) {
        let grid: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    r.regressor.clone(),
                    format!("{}{}", fmt_opt(r.estimate), r.stars),
                    format!("[{}, {}]", fmt_opt(r.ci90_lo), fmt_opt(r.ci90_hi)),
                    format!("[{}, {}]", fmt_opt(r.ci95_lo), fmt_opt(r.ci95_hi)),
                    fmt_opt(r.p_value),
                    r.n.map(|n| n.to_string()).unwrap_or_default(),
                    r.error.clone(),
                ]
            })
            .collect();
        let body = markdown_grid(&["variant", "regressor", "estimate", "90% CI", "95% CI", "p", "n", "error"], &grid);
        write_file(dir, "robustness.md", &format!("## Robustness of `{}`\n\n{body}", cfg.robustness.spec))?;
    }
    if cfg.wants(Format::Json) {
        write_file(dir, "robustness.json", &to_json(&rows).map_err(io)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- margins

#[derive(Debug, Clone, Serialize)]
pub struct CurveSummary {
    pub file: String,
    pub policy: String,
    pub moderator: String,
    pub order: String,
    pub dof: f64,
    pub vertex: Option<f64>,
    pub sign_changes: Vec<f64>,
    pub n: usize,
}

/// `<policy>__<moderator>.csv`.
pub fn curve_file(policy: &str, moderator: &str) -> String {
    format!("{policy}__{moderator}.csv")
}

pub type CurveSet = Vec<(MarginalEffectCurve, usize)>;

fn curves_for(panel: &PanelDataset, req: &MarginsRequest, m: Moderator) -> Result<CurveSet> {
    let (design, _) = req.spec_for(m).build(panel)?;
    let fit = fit_fixed_effects(&design)?;
    let cl = cluster_robust(&fit, Correction::CR1)?;
    req.policy_list()
        .iter()
        .map(|p| {
            let ep = Endpoint::of_column(p)
                .ok_or_else(|| Error::InvalidParameter(format!("`{p}` has no endpoint suffix")))?;
            let mod_col = format!("mod_{}", ep.suffix());
            let observed = design.column(&mod_col).ok_or_else(|| Error::MissingColumn(mod_col.clone()))?;
            let grid = req.grid.points(&observed)?;
            let poly = EffectPolynomial::from_fit(&fit, &cl.matrix, p, req.order)?;
            Ok((effect_curve(&poly, p, m, &grid, cl.dof())?, fit.n))
        })
        .collect()
}

/// One entry per interaction fit, in request order (moderators outer,
/// policies inner); each curve carries the fit's n.
pub fn margin_curves(panel: &PanelDataset, cfg: &RunConfig) -> Vec<(String, Result<CurveSet>)> {
    let jobs: Vec<_> = cfg
        .margins
        .iter()
        .flat_map(|req| req.moderators.iter().map(move |m| (req, *m)))
        .collect();
    jobs.par_iter()
        .map(|(req, m)| (req.spec_for(*m).name, curves_for(panel, req, *m)))
        .collect()
}

pub fn cmd_margins(cfg: &RunConfig) -> std::result::Result<(), Failure> {
    prepare(cfg)?;
    if cfg.margins.is_empty() {
        return Err(Failure::new(EXIT_CONFIG, "margins needs at least one [[margins]] request"));
    }
    let panel = load(cfg)?;
    let dir = cfg.output_dir.join("margins");
    std::fs::create_dir_all(&dir).map_err(|e| io(format!("{}: {e}", dir.display())))?;
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (spec, res) in margin_curves(&panel, cfg) {
        let curves = match res {
            Ok(c) => c,
            Err(e) => {
                failures.push(FitError { spec, error: e.to_string() });
                continue;
            }
        };
        for (c, n) in &curves {
            let file = curve_file(&c.policy, c.moderator.name());
            c.write_csv(csv_file(&dir, &file)?).map_err(io)?;
            summaries.push(CurveSummary {
                file: format!("margins/{file}"),
                policy: c.policy.clone(),
                moderator: c.moderator.name().to_string(),
                order: format!("{:?}", c.order).to_lowercase(),
                dof: c.dof,
                vertex: c.vertex,
                sign_changes: c.sign_changes.clone(),
                n: *n,
            });
        }
    }
    if cfg.wants(Format::Md) {
        let grid: Vec<Vec<String>> = summaries
            .iter()
            .map(|s| {
                vec![
                    s.policy.clone(),
                    s.moderator.clone(),
                    s.order.clone(),
                    fmt_opt(s.vertex),
                    s.sign_changes.iter().map(|x| fmt4(*x)).collect::<Vec<_>>().join(" "),
                    s.n.to_string(),
                    s.file.clone(),
                ]
            })
            .collect();
        let body = markdown_grid(&["policy", "moderator", "order", "vertex", "sign changes", "n", "file"], &grid);
        write_file(&cfg.output_dir, "margins.md", &format!("## Marginal effects\n\n{body}"))?;
    }
    if cfg.wants(Format::Json) {
        write_file(&cfg.output_dir, "margins.json", &to_json(&summaries).map_err(io)?)?;
    }
    fail_on(&cfg.output_dir, "margins_errors.csv", failures)
}

// ---------------------------------------------------------------- describe

#[derive(Debug, Clone, Serialize)]
pub struct PairedRow {
    pub a: String,
    pub b: String,
    pub statistic: Option<f64>,
    pub dof: Option<f64>,
    pub p_value: Option<f64>,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationRow {
    pub x: String,
    pub y: String,
    pub report: Option<CorrelationReport>,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DescribeReport {
    pub n: usize,
    pub summary: Vec<SummaryRow>,
    /// Columns with zero standard deviation.
    pub constant_columns: Vec<String>,
    pub correlations: Vec<CorrelationRow>,
    pub paired_t: Vec<PairedRow>,
    pub within: Option<WithinVariationReport>,
    pub within_error: Option<String>,
}

/// Origin-vs-destination column pairs for AP and MP totals.
const PAIRED: [(&str, &str); 2] = [
    ("ap_total_origin", "ap_total_dest"),
    ("mp_total_origin", "mp_total_dest"),
];

pub fn describe(panel: &PanelDataset) -> Result<DescribeReport> {
    let summary = summarize(panel)?;
    let constant_columns = summary.iter().filter(|r| r.sd == 0.0).map(|r| r.variable.clone()).collect();

    let mut pairs: Vec<(String, String)> = BASELINE_COLUMNS
        .iter()
        .map(|c| (c.to_string(), "ln_outflow".to_string()))
        .collect();
    for ep in ["origin", "dest"] {
        pairs.push((format!("ap_total_{ep}"), format!("mp_total_{ep}")));
    }
    let correlations = pairs
        .into_iter()
        .map(|(x, y)| {
            let res = panel
                .column(&x)
                .and_then(|xv| panel.column(&y).and_then(|yv| correlation_report(&x, &xv, &y, &yv)));
            let (report, error) = match res {
                Ok(r) => (Some(r), String::new()),
                Err(e) => (None, e.to_string()),
            };
            CorrelationRow { x, y, report, error }
        })
        .collect();

    let paired_t = PAIRED
        .iter()
        .map(|(a, b)| {
            let res = panel.column(a).and_then(|av| panel.column(b).and_then(|bv| paired_t_test(&av, &bv)));
            match res {
                Ok(t) => PairedRow {
                    a: a.to_string(),
                    b: b.to_string(),
                    statistic: Some(t.statistic),
                    dof: Some(t.dof),
                    p_value: Some(t.p_value),
                    error: String::new(),
                },
                Err(e) => PairedRow {
                    a: a.to_string(),
                    b: b.to_string(),
                    statistic: None,
                    dof: None,
                    p_value: None,
                    error: e.to_string(),
                },
            }
        })
        .collect();

    let mut within_cols = vec!["ln_outflow"];
    within_cols.extend(BASELINE_COLUMNS);
    let (within, within_error) = match within_variation_report(panel, &within_cols) {
        Ok(w) => (Some(w), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(DescribeReport {
        n: panel.len(),
        summary,
        constant_columns,
        correlations,
        paired_t,
        within,
        within_error,
    })
}

#[derive(Serialize)]
struct CorrelationCsv<'a> {
    x: &'a str,
    y: &'a str,
    n: Option<usize>,
    pearson_r: Option<f64>,
    pearson_p: Option<f64>,
    spearman_rho: Option<f64>,
    spearman_p: Option<f64>,
    ols_slope: Option<f64>,
    ols_intercept: Option<f64>,
    ols_p: Option<f64>,
    error: &'a str,
}

#[derive(Serialize)]
struct WithinCsv<'a> {
    column: &'a str,
    total_ss: f64,
    within_ss: f64,
    within_share: Option<f64>,
}

fn describe_markdown(r: &DescribeReport) -> String {
    let mut s = format!("## Summary statistics (n = {})\n\n", r.n);
    let rows: Vec<Vec<String>> = r
        .summary
        .iter()
        .map(|row| {
            let flag = if r.constant_columns.contains(&row.variable) { "constant" } else { "" };
            vec![
                row.variable.clone(),
                row.n.to_string(),
                fmt4(row.mean),
                fmt4(row.sd),
                fmt4(row.min),
                fmt4(row.max),
                flag.to_string(),
            ]
        })
        .collect();
    s += &markdown_grid(&["variable", "n", "mean", "sd", "min", "max", "flag"], &rows);

    s += "\n## Correlations\n\n";
    let rows: Vec<Vec<String>> = r
        .correlations
        .iter()
        .map(|c| match &c.report {
            Some(k) => vec![
                c.x.clone(),
                c.y.clone(),
                k.n.to_string(),
                fmt4(k.pearson_r),
                fmt4(k.pearson_p),
                fmt4(k.spearman_rho),
                fmt4(k.spearman_p),
                fmt4(k.ols_slope),
                String::new(),
            ],
            None => {
                let mut v = vec![c.x.clone(), c.y.clone()];
                v.extend(std::iter::repeat_n(String::new(), 6));
                v.push(c.error.clone());
                v
            }
        })
        .collect();
    s += &markdown_grid(
        &["x", "y", "n", "pearson r", "p", "spearman rho", "p", "ols slope", "error"],
        &rows,
    );

    s += "\n## Paired t-tests, origin vs destination\n\n";
    let rows: Vec<Vec<String>> = r
        .paired_t
        .iter()
        .map(|p| {
            vec![
                p.a.clone(),
                p.b.clone(),
                fmt_opt(p.statistic),
                p.dof.map(|d| d.to_string()).unwrap_or_default(),
                fmt_opt(p.p_value),
                p.error.clone(),
            ]
        })
        .collect();
    s += &markdown_grid(&["a", "b", "t", "dof", "p", "error"], &rows);

    s += "\n## Within-pair variation\n\n";
    match (&r.within, &r.within_error) {
        (Some(w), _) => {
            s += &format!("{} pairs; share observed in 2+ years {}\n\n", w.n_pairs, fmt4(w.share_multi_year));
            let rows: Vec<Vec<String>> = w
                .columns
                .iter()
                .map(|c| {
                    vec![
                        c.column.clone(),
                        fmt4(c.total_ss),
                        fmt4(c.within_ss),
                        c.within_share.map(fmt4).unwrap_or_else(|| "no variation".into()),
                    ]
                })
                .collect();
            s += &markdown_grid(&["column", "total SS", "within SS", "within share"], &rows);
        }
        (None, e) => s += &format!("unavailable: {}\n", e.clone().unwrap_or_default()),
    }
    s
}

pub fn cmd_describe(cfg: &RunConfig) -> std::result::Result<(), Failure> {
    prepare(cfg)?;
    let panel = load(cfg)?;
    let rep = describe(&panel).map_err(|e| Failure::new(EXIT_DATA, e))?;
    let dir = &cfg.output_dir;
    if cfg.wants(Format::Md) {
        write_file(dir, "describe.md", &describe_markdown(&rep))?;
    }
    if cfg.wants(Format::Csv) {
        write_rows(dir, "summary.csv", &rep.summary)?;
        let corr: Vec<CorrelationCsv> = rep
            .correlations
            .iter()
            .map(|c| {
                let k = c.report.as_ref();
                CorrelationCsv {
                    x: &c.x,
                    y: &c.y,
                    n: k.map(|k| k.n),
                    pearson_r: k.map(|k| k.pearson_r),
                    pearson_p: k.map(|k| k.pearson_p),
                    spearman_rho: k.map(|k| k.spearman_rho),
                    spearman_p: k.map(|k| k.spearman_p),
                    ols_slope: k.map(|k| k.ols_slope),
                    ols_intercept: k.map(|k| k.ols_intercept),
                    ols_p: k.map(|k| k.ols_p),
                    error: &c.error,
                }
            })
            .collect();
        write_rows(dir, "correlations.csv", &corr)?;
        write_rows(dir, "paired_t.csv", &rep.paired_t)?;
        if let Some(w) = &rep.within {
            let rows: Vec<WithinCsv> = w
                .columns
                .iter()
                .map(|c| WithinCsv {
                    column: &c.column,
                    total_ss: c.total_ss,
                    within_ss: c.within_ss,
                    within_share: c.within_share,
                })
                .collect();
            write_rows(dir, "within_variation.csv", &rows)?;
        }
    }
    if cfg.wants(Format::Json) {
        write_file(dir, "describe.json", &to_json(&rep).map_err(io)?)?;
    }
    write_file(dir, "provenance.json", &(panel.provenance().to_json().map_err(io)? + "\n"))?;
    Ok(())
}

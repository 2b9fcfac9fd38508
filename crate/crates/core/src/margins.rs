//! Marginal effect of a policy count on the log outcome as a function of
//! its moderator: `φ + θM (+ ζM²)` with delta-method standard errors.

use std::io::Write;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::Moderator;
use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::inference::t_critical;
use crate::specs::InteractionOrder;
use crate::transforms::quantile;

/// `(φ, θ, ζ)` and their covariance; `ζ = 0` with zero variance for linear order.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectPolynomial {
    pub coef: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub order: InteractionOrder,
}

impl EffectPolynomial {
    pub fn new(coef: [f64; 3], cov: Matrix3<f64>, order: InteractionOrder) -> Self {
        EffectPolynomial {
            coef: Vector3::from(coef),
            cov,
            order,
        }
    }

    /// Pulls `policy`, `policy_x_mod` and (quadratic) `policy_x_mod2` from a fit.
    pub fn from_fit(fit: &FitResult, covariance: &DMatrix<f64>, policy: &str, order: InteractionOrder) -> Result<Self> {
        if covariance.shape() != (fit.names.len(), fit.names.len()) {
            return Err(Error::InvalidInput("covariance does not match the fit".into()));
        }
        let mut names = vec![policy.to_string()];
        match order {
            InteractionOrder::None => {}
            InteractionOrder::Linear => names.push(format!("{policy}_x_mod")),
            InteractionOrder::Quadratic => {
                names.push(format!("{policy}_x_mod"));
                names.push(format!("{policy}_x_mod2"));
            }
        }
        let idx = names
            .iter()
            .map(|n| fit.index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut coef = Vector3::zeros();
        let mut cov = Matrix3::zeros();
        for (a, &i) in idx.iter().enumerate() {
            coef[a] = fit.coefficients[i];
            for (b, &j) in idx.iter().enumerate() {
                cov[(a, b)] = covariance[(i, j)];
            }
        }
        Ok(EffectPolynomial { coef, cov, order })
    }

    /// `(effect, se)` at moderator value `m`.
    pub fn eval(&self, m: f64) -> (f64, f64) {
        let g = Vector3::new(1.0, m, m * m);
        let effect = self.coef.dot(&g);
        let var = (g.transpose() * self.cov * g)[(0, 0)];
        (effect, var.max(0.0).sqrt())
    }

    /// `−θ / (2ζ)` when `ζ ≠ 0`.
    pub fn vertex(&self) -> Option<f64> {
        (self.coef[2] != 0.0).then(|| -self.coef[1] / (2.0 * self.coef[2]))
    }

    /// Real roots of the effect polynomial, ascending.
    pub fn roots(&self) -> Vec<f64> {
        let (c, b, a) = (self.coef[0], self.coef[1], self.coef[2]);
        if a == 0.0 {
            return if b == 0.0 { vec![] } else { vec![-c / b] };
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return vec![];
        }
        // stable form avoids cancellation in −b ± √disc
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let mut r = if q == 0.0 { vec![0.0] } else { vec![q / a, c / q] };
        r.sort_by(|x, y| x.total_cmp(y));
        r.dedup();
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Evenly spaced between two values.
    Range { min: f64, max: f64, points: usize },
    /// Evenly spaced between two observed quantiles of the moderator.
    Quantiles { lo: f64, hi: f64, points: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Quantiles {
            lo: 0.01,
            hi: 0.99,
            points: 101,
        }
    }
}

impl GridSpec {
    pub fn points(&self, observed: &[f64]) -> Result<Vec<f64>> {
        let (min, max, n) = match *self {
            GridSpec::Range { min, max, points } => (min, max, points),
            GridSpec::Quantiles { lo, hi, points } => {
                if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                    return Err(Error::InvalidParameter(format!("quantile grid [{lo}, {hi}] invalid")));
                }
                if observed.is_empty() {
                    return Err(Error::InvalidInput("no observed moderator values for a quantile grid".into()));
                }
                (quantile(observed, lo), quantile(observed, hi), points)
            }
        };
        if n == 0 {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(Error::InvalidParameter(format!("grid bounds [{min}, {max}] invalid")));
        }
        if n == 1 {
            return Ok(vec![min]);
        }
        let step = (max - min) / (n - 1) as f64;
        Ok((0..n).map(|i| if i == n - 1 { max } else { min + step * i as f64 }).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalEffectCurve {
    pub policy: String,
    pub moderator: Moderator,
    pub order: InteractionOrder,
    /// Student-t dof for the bands.
    pub dof: f64,
    pub grid: Vec<f64>,
    pub effect: Vec<f64>,
    pub se: Vec<f64>,
    pub lo90: Vec<f64>,
    pub hi90: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
    /// Turning point, when it lies inside the grid.
    pub vertex: Option<f64>,
    /// Moderator values inside the grid where the effect changes sign.
    pub sign_changes: Vec<f64>,
}

/// Evaluates `poly` on `grid` with t(`dof`) bands.
pub fn effect_curve(
    poly: &EffectPolynomial,
    policy: &str,
    moderator: Moderator,
    grid: &[f64],
    dof: f64,
) -> Result<MarginalEffectCurve> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    if !(dof > 0.0) {
        return Err(Error::InvalidParameter(format!("band dof {dof} must be positive")));
    }
    let c90 = t_critical(0.10, dof);
    let c95 = t_critical(0.05, dof);
    let n = grid.len();
    let mut curve = MarginalEffectCurve {
        policy: policy.to_string(),
        moderator,
        order: poly.order,
        dof,
        grid: grid.to_vec(),
        effect: Vec::with_capacity(n),
        se: Vec::with_capacity(n),
        lo90: Vec::with_capacity(n),
        hi90: Vec::with_capacity(n),
        lo95: Vec::with_capacity(n),
        hi95: Vec::with_capacity(n),
        vertex: None,
        sign_changes: vec![],
    };
    for &m in grid {
        let (e, s) = poly.eval(m);
        curve.effect.push(e);
        curve.se.push(s);
        curve.lo90.push(e - c90 * s);
        curve.hi90.push(e + c90 * s);
        curve.lo95.push(e - c95 * s);
        curve.hi95.push(e + c95 * s);
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inside = |m: &f64| *m >= lo && *m <= hi;
    curve.vertex = poly.vertex().filter(inside);
    curve.sign_changes = poly
        .roots()
        .into_iter()
        .filter(inside)
        // a double root touches zero without crossing
        .filter(|r| poly.vertex() != Some(*r))
        .collect();
    Ok(curve)
}

impl MarginalEffectCurve {
    /// Rows `moderator,effect,se,lo90,hi90,lo95,hi95` at full precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["moderator", "effect", "se", "lo90", "hi90", "lo95", "hi95"])?;
        for i in 0..self.grid.len() {
            w.write_record(
                [
                    self.grid[i],
                    self.effect[i],
                    self.se[i],
                    self.lo90[i],
                    self.hi90[i],
                    self.lo95[i],
                    self.hi95[i],
                ]
                .iter()
                .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fit_fixed_effects;
    use crate::inference::{cluster_robust, Correction};
    use crate::specs::build_interaction_with;
    use crate::synth::{generate, DgpConfig};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn diag(a: f64, b: f64, c: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(a, b, c))
    }

    #[test]
    fn degenerate_interaction_is_flat() {
        let p = EffectPolynomial::new([0.3, 0.0, 0.0], diag(0.04, 0.0, 0.0), InteractionOrder::Quadratic);
        for m in [-3.0, 0.0, 11.3] {
            let (e, s) = p.eval(m);
            assert_eq!(e, 0.3);
            assert_relative_eq!(s, 0.2, max_relative = 1e-15);
        }
    }

    #[test]
    fn income_polynomial_at_11_3() {
        let p = EffectPolynomial::new([-5.4065, 0.9458, -0.0413], Matrix3::zeros(), InteractionOrder::Quadratic);
        let (e, _) = p.eval(11.3);
        let hand = -5.4065 + 0.9458 * 11.3 - 0.0413 * 11.3 * 11.3;
        assert_relative_eq!(e, hand, max_relative = 1e-12);
        assert!((e - 0.007443).abs() < 1e-6, "{e}");
    }

    #[test]
    fn ageing_vertex() {
        let p = EffectPolynomial::new([-0.0984, 1.2416, -3.4720], Matrix3::zeros(), InteractionOrder::Quadratic);
        assert!((p.vertex().unwrap() - 0.1788).abs() < 1e-4);
        let curve = effect_curve(&p, "mp_inst_origin", Moderator::AgeingRate, &[0.05, 0.1, 0.15, 0.2, 0.25, 0.3], 100.0).unwrap();
        assert!(curve.vertex.is_some());
        // concave: interior maximum
        let (top, _) = p.eval(p.vertex().unwrap());
        assert!(curve.effect.iter().all(|e| *e <= top));
    }

    #[test]
    fn three_points_recover_coefficients() {
        let coef = [0.7, -1.3, 0.25];
        let p = EffectPolynomial::new(coef, Matrix3::zeros(), InteractionOrder::Quadratic);
        let ms: [f64; 3] = [-1.0, 0.5, 2.0];
        let a = Matrix3::from_fn(|r, c| ms[r].powi(c as i32));
        let y = Vector3::from_fn(|r, _| p.eval(ms[r]).0);
        let back = a.lu().solve(&y).unwrap();
        for i in 0..3 {
            assert!((back[i] - coef[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_curve_has_constant_slope() {
        let p = EffectPolynomial::new([0.2, 0.05, 0.0], diag(0.01, 0.001, 0.0), InteractionOrder::Linear);
        let grid = GridSpec::Range { min: 10.0, max: 12.0, points: 21 }.points(&[]).unwrap();
        let c = effect_curve(&p, "x", Moderator::LnIncome, &grid, 50.0).unwrap();
        for i in 1..grid.len() {
            let slope = (c.effect[i] - c.effect[i - 1]) / (grid[i] - grid[i - 1]);
            assert!((slope - 0.05).abs() < 1e-12);
        }
        assert_eq!(c.vertex, None);
        assert!(c.sign_changes.is_empty());
        let p0 = EffectPolynomial::new([0.2, 0.05, 0.0], Matrix3::zeros(), InteractionOrder::Linear);
        assert_eq!(p0.eval(0.0).0, 0.2);
    }

    #[test]
    fn bands_symmetric_and_se_nonnegative() {
        let cov = Matrix3::new(0.04, -0.01, 0.001, -0.01, 0.01, -0.0005, 0.001, -0.0005, 0.0001);
        let p = EffectPolynomial::new([-0.5, 0.3, -0.02], cov, InteractionOrder::Quadratic);
        let grid = GridSpec::Range { min: -5.0, max: 20.0, points: 101 }.points(&[]).unwrap();
        let c = effect_curve(&p, "x", Moderator::LnIncome, &grid, 30.0).unwrap();
        for i in 0..grid.len() {
            assert!(c.se[i] >= 0.0);
            assert_relative_eq!(c.effect[i] - c.lo95[i], c.hi95[i] - c.effect[i], max_relative = 1e-9);
            assert!(c.lo95[i] <= c.lo90[i] && c.hi90[i] <= c.hi95[i]);
        }
        // roots reported are zeros of the effect
        assert_eq!(c.sign_changes.len(), 2);
        for r in &c.sign_changes {
            assert!(p.eval(*r).0.abs() < 1e-12);
        }
    }

    #[test]
    fn grid_defaults_and_errors() {
        let obs: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let g = GridSpec::default().points(&obs).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[100]), (1.0, 99.0));
        assert!(GridSpec::Range { min: 0.0, max: 1.0, points: 0 }.points(&[]).is_err());
        let p = EffectPolynomial::new([0.0; 3], Matrix3::zeros(), InteractionOrder::Linear);
        assert!(effect_curve(&p, "x", Moderator::LnIncome, &[], 10.0).is_err());
    }

    fn synthetic_fit() -> (crate::estimators::FitResult, DMatrix<f64>) {
        let cfg = DgpConfig {
            n_pairs: 400,
            ..DgpConfig::default()
        };
        let g = generate(&cfg).unwrap();
        let policies = vec!["mp_inst_origin".to_string(), "mp_behav_dest".to_string()];
        let d = build_interaction_with(&g.panel, "ln_outflow", Moderator::LnIncome, InteractionOrder::Quadratic, &policies, false).unwrap();
        let fit = fit_fixed_effects(&d).unwrap();
        let cov = cluster_robust(&fit, Correction::CR1).unwrap().matrix;
        (fit, cov)
    }

    #[test]
    fn missing_coefficient_is_named() {
        let (fit, cov) = synthetic_fit();
        match EffectPolynomial::from_fit(&fit, &cov, "ap_tech_origin", InteractionOrder::Linear).unwrap_err() {
            Error::MissingColumn(c) => assert_eq!(c, "ap_tech_origin"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn delta_se_matches_parametric_bootstrap() {
        let (fit, cov) = synthetic_fit();
        let p = EffectPolynomial::from_fit(&fit, &cov, "mp_inst_origin", InteractionOrder::Quadratic).unwrap();
        let chol = p.cov.cholesky().expect("positive definite block");
        let l = chol.l();
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let draws: Vec<Vector3<f64>> = (0..5000)
            .map(|_| {
                let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                p.coef + l * z
            })
            .collect();
        for m in [10.9, 11.3, 11.7] {
            let g = Vector3::new(1.0, m, m * m);
            let vals: Vec<f64> = draws.iter().map(|b| b.dot(&g)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
            let (_, se) = p.eval(m);
            assert!((sd / se - 1.0).abs() < 0.05, "M={m}: bootstrap {sd} delta {se}");
        }
    }

    #[test]
    fn csv_export() {
        let p = EffectPolynomial::new([0.1, 0.2, 0.0], diag(0.01, 0.01, 0.0), InteractionOrder::Linear);
        let c = effect_curve(&p, "x", Moderator::LnIncome, &[1.0, 2.0], 10.0).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "moderator,effect,se,lo90,hi90,lo95,hi95");
        assert!(lines.next().unwrap().starts_with("1,0.30000000000000004,"));
    }
}

//! Declarative model specifications and the design builders behind them.
//!
//! Column naming:
//!
//! ```text
//! {ap|mp}_{tech|inst|behav|nature|total}_{origin|dest}   policy counts
//! mod_origin, mod_dest, mod2_origin, mod2_dest          moderator main effects
//! <policy>_x_mod, <policy>_x_mod2                        interactions
//! ```
//!
//! Moderators are endpoint-matched: origin policies interact with the
//! origin moderator, destination policies with the destination moderator.

use serde::{Deserialize, Serialize};

use crate::data::{policy_regressor_names, Endpoint, Moderator, PanelDataset, ENDPOINTS, POLICY_CATEGORIES, POLICY_TYPES};
use crate::error::{Error, Result};
use crate::estimators::DesignMatrix;
use crate::transforms::{lag_regressors, GroupIndex};

/// Policy columns interacted with moderators by default.
pub const SIGNIFICANT_SIX: [&str; 6] = [
    "mp_inst_origin",
    "mp_behav_origin",
    "ap_behav_dest",
    "mp_tech_dest",
    "mp_behav_dest",
    "mp_nature_dest",
];

/// AP origin, MP origin, AP destination, MP destination.
pub const BASELINE_COLUMNS: [&str; 4] = ["ap_total_origin", "mp_total_origin", "ap_total_dest", "mp_total_dest"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorRoles {
    /// AP/MP totals at each endpoint (4 columns).
    #[default]
    Totals,
    /// AP/MP by policy type at each endpoint (16 columns).
    ByType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionOrder {
    #[default]
    None,
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effects {
    /// Pair effects absorbed, year indicators.
    #[default]
    TwoWayFixed,
    Random,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterVar {
    #[default]
    Pair,
    Origin,
    Destination,
}

fn default_outcome() -> String {
    "ln_outflow".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    #[serde(default)]
    pub regressors: RegressorRoles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moderator: Option<Moderator>,
    #[serde(default)]
    pub order: InteractionOrder,
    #[serde(default)]
    pub effects: Effects,
    #[serde(default)]
    pub cluster: ClusterVar,
    /// Regressor lag in years (0, 1 or 2).
    #[serde(default)]
    pub lag: u8,
    /// Policies to interact; defaults to [`SIGNIFICANT_SIX`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interacted: Option<Vec<String>>,
    /// Interact every policy column of the chosen role instead.
    #[serde(default)]
    pub interact_all: bool,
    /// Subtract the sample mean of each endpoint moderator before forming terms.
    #[serde(default)]
    pub center: bool,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>) -> Self {
        ModelSpec {
            name: name.into(),
            outcome: default_outcome(),
            regressors: RegressorRoles::Totals,
            moderator: None,
            order: InteractionOrder::None,
            effects: Effects::TwoWayFixed,
            cluster: ClusterVar::Pair,
            lag: 0,
            interacted: None,
            interact_all: false,
            center: false,
        }
    }

    pub fn baseline() -> Self {
        ModelSpec::new("baseline")
    }

    pub fn heterogeneity() -> Self {
        ModelSpec {
            regressors: RegressorRoles::ByType,
            ..ModelSpec::new("heterogeneity")
        }
    }

    pub fn interaction(moderator: Moderator, order: InteractionOrder) -> Self {
        let tag = if order == InteractionOrder::Quadratic { "quadratic" } else { "linear" };
        ModelSpec {
            regressors: RegressorRoles::ByType,
            moderator: Some(moderator),
            order,
            ..ModelSpec::new(format!("interaction_{}_{tag}", moderator.name()))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("spec `{}`: {m}", self.name)));
        if self.name.trim().is_empty() {
            return Err(Error::Config("model spec needs a name".into()));
        }
        if !matches!(self.outcome.as_str(), "ln_outflow" | "outflow_rate") {
            return bad(format!("outcome `{}` must be ln_outflow or outflow_rate", self.outcome));
        }
        match (self.moderator, self.order) {
            (Some(_), InteractionOrder::None) => return bad("a moderator needs order linear or quadratic".into()),
            (None, o) if o != InteractionOrder::None => return bad(format!("order {o:?} needs a moderator")),
            _ => {}
        }
        if self.lag > 2 {
            return bad(format!("lag {} outside 0..=2", self.lag));
        }
        if self.interact_all && self.interacted.is_some() {
            return bad("`interacted` and `interact_all` are exclusive".into());
        }
        if let Some(list) = &self.interacted {
            let valid = policy_regressor_names();
            if list.is_empty() {
                return bad("`interacted` is empty".into());
            }
            for p in list {
                if !valid.contains(p) {
                    return bad(format!("`{p}` is not a policy column"));
                }
            }
        }
        Ok(())
    }

    /// Policy columns entering the design.
    pub fn policy_columns(&self) -> Vec<String> {
        if self.moderator.is_some() {
            if let Some(list) = &self.interacted {
                return list.clone();
            }
            if !self.interact_all {
                return SIGNIFICANT_SIX.iter().map(|s| s.to_string()).collect();
            }
        }
        match self.regressors {
            RegressorRoles::Totals => BASELINE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            RegressorRoles::ByType => heterogeneity_columns(),
        }
    }

    /// Builds the design, lagging policy columns first when `lag > 0`.
    /// Returns the panel the design was built from.
    pub fn build(&self, panel: &PanelDataset) -> Result<(DesignMatrix, PanelDataset)> {
        self.validate()?;
        let policies = self.policy_columns();
        let panel = if self.lag > 0 {
            let cols: Vec<&str> = policies.iter().map(String::as_str).collect();
            lag_regressors(panel, self.lag as i32, &cols)?
        } else {
            panel.clone()
        };
        let design = match self.moderator {
            None => build_from_columns(&panel, &self.outcome, &policies)?,
            Some(m) => build_interaction_with(&panel, &self.outcome, m, self.order, &policies, self.center)?,
        };
        let design = match self.cluster {
            ClusterVar::Pair => design,
            ClusterVar::Origin => design.with_clusters(county_clusters(&panel, Endpoint::Origin)),
            ClusterVar::Destination => design.with_clusters(county_clusters(&panel, Endpoint::Destination)),
        };
        Ok((design, panel))
    }
}

fn county_clusters(panel: &PanelDataset, ep: Endpoint) -> Vec<usize> {
    let labels: Vec<&str> = panel
        .observations()
        .iter()
        .map(|o| match ep {
            Endpoint::Origin => o.pair.origin.as_str(),
            Endpoint::Destination => o.pair.destination.as_str(),
        })
        .collect();
    GroupIndex::from_labels(&labels).group_labels().to_vec()
}

/// The 16 type-level policy columns: endpoint, then category, then type.
pub fn heterogeneity_columns() -> Vec<String> {
    let mut out = Vec::with_capacity(16);
    for ep in ENDPOINTS {
        for cat in POLICY_CATEGORIES {
            for ty in POLICY_TYPES {
                out.push(format!("{cat}_{ty}_{}", ep.suffix()));
            }
        }
    }
    out
}

fn attach_panel(design: DesignMatrix, panel: &PanelDataset) -> DesignMatrix {
    design.with_groups(panel.pair_index()).with_years(panel.year_labels())
}

fn build_from_columns(panel: &PanelDataset, outcome: &str, columns: &[String]) -> Result<DesignMatrix> {
    let cols = columns.iter().map(|c| panel.column(c)).collect::<Result<Vec<_>>>()?;
    let y = panel.column(outcome)?;
    Ok(attach_panel(DesignMatrix::new(outcome, columns.to_vec(), cols, y)?, panel))
}

/// Four policy totals (AP/MP × origin/destination); outcome `ln_outflow`.
pub fn build_baseline(panel: &PanelDataset) -> Result<DesignMatrix> {
    let cols: Vec<String> = BASELINE_COLUMNS.iter().map(|s| s.to_string()).collect();
    build_from_columns(panel, "ln_outflow", &cols)
}

/// Sixteen type-level policy counts; outcome `ln_outflow`.
pub fn build_heterogeneity(panel: &PanelDataset) -> Result<DesignMatrix> {
    build_from_columns(panel, "ln_outflow", &heterogeneity_columns())
}

/// Moderator interaction design over [`SIGNIFICANT_SIX`], raw moderator scale.
pub fn build_interaction(panel: &PanelDataset, moderator: Moderator, order: InteractionOrder) -> Result<DesignMatrix> {
    let policies: Vec<String> = SIGNIFICANT_SIX.iter().map(|s| s.to_string()).collect();
    build_interaction_with(panel, "ln_outflow", moderator, order, &policies, false)
}

/// Policies, `mod_origin`, `mod_dest`, linear interactions and, for
/// quadratic order, `mod2_*` and quadratic interactions.
pub fn build_interaction_with(
    panel: &PanelDataset,
    outcome: &str,
    moderator: Moderator,
    order: InteractionOrder,
    policies: &[String],
    center: bool,
) -> Result<DesignMatrix> {
    if order == InteractionOrder::None {
        return Err(Error::InvalidParameter("interaction design needs order linear or quadratic".into()));
    }
    if policies.is_empty() {
        return Err(Error::InvalidParameter("no policy columns to interact".into()));
    }
    let mut m = Vec::with_capacity(2);
    for ep in ENDPOINTS {
        let mut v = panel.column(&moderator.column(ep))?;
        if center && !v.is_empty() {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= mean);
        }
        m.push(v);
    }
    let m_of = |ep: Endpoint| &m[(ep == Endpoint::Destination) as usize];

    let mut names: Vec<String> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut bases = Vec::with_capacity(policies.len());
    for p in policies {
        let ep = Endpoint::of_column(p)
            .ok_or_else(|| Error::InvalidParameter(format!("`{p}` has no endpoint suffix")))?;
        let v = panel.column(p)?;
        names.push(p.clone());
        cols.push(v.clone());
        bases.push((p, ep, v));
    }
    for ep in ENDPOINTS {
        names.push(format!("mod_{}", ep.suffix()));
        cols.push(m_of(ep).clone());
    }
    for (p, ep, v) in &bases {
        names.push(format!("{p}_x_mod"));
        cols.push(v.iter().zip(m_of(*ep)).map(|(a, b)| a * b).collect());
    }
    if order == InteractionOrder::Quadratic {
        for ep in ENDPOINTS {
            names.push(format!("mod2_{}", ep.suffix()));
            cols.push(m_of(ep).iter().map(|x| x * x).collect());
        }
        for (p, ep, v) in &bases {
            names.push(format!("{p}_x_mod2"));
            cols.push(v.iter().zip(m_of(*ep)).map(|(a, b)| a * (b * b)).collect());
        }
    }
    let y = panel.column(outcome)?;
    Ok(attach_panel(DesignMatrix::new(outcome, names, cols, y)?, panel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::assemble::tests::random_fixture;
    use crate::data::{assemble_panel, SampleRule};
    use crate::estimators::fit_fixed_effects;
    use approx::assert_relative_eq;

    fn panel() -> PanelDataset {
        let fx = random_fixture(31, 160);
        assemble_panel(&fx.flows, &fx.policies, &fx.moderators, &SampleRule::default()).unwrap()
    }

    #[test]
    fn column_census() {
        let p = panel();
        assert_eq!(build_baseline(&p).unwrap().k(), 4);
        assert_eq!(build_heterogeneity(&p).unwrap().k(), 16);
        assert_eq!(build_interaction(&p, Moderator::LnIncome, InteractionOrder::Linear).unwrap().k(), 14);
        let q = build_interaction(&p, Moderator::AgeingRate, InteractionOrder::Quadratic).unwrap();
        assert_eq!(q.k(), 22);
        assert!(q.names.contains(&"mp_behav_origin_x_mod2".to_string()));
        assert!(q.names.contains(&"mod2_dest".to_string()));

        let one = PanelDataset::new(p.regressor_names().to_vec(), p.observations()[..1].to_vec(), Default::default()).unwrap();
        let d = build_baseline(&one).unwrap();
        assert_eq!((d.n(), d.k()), (1, 4));
    }

    #[test]
    fn type_counts_sum_to_totals() {
        let p = panel();
        let h = build_heterogeneity(&p).unwrap();
        for ep in ["origin", "dest"] {
            for cat in ["ap", "mp"] {
                let total = p.column(&format!("{cat}_total_{ep}")).unwrap();
                for (r, t) in total.iter().enumerate() {
                    let s: f64 = POLICY_TYPES.iter().map(|ty| h.column(&format!("{cat}_{ty}_{ep}")).unwrap()[r]).sum();
                    assert_eq!(s, *t);
                }
            }
        }
    }

    #[test]
    fn interaction_columns_are_parent_products() {
        let p = panel();
        let d = build_interaction(&p, Moderator::RacialDiversity, InteractionOrder::Quadratic).unwrap();
        for name in SIGNIFICANT_SIX {
            let ep = if name.ends_with("_origin") { "origin" } else { "dest" };
            let base = p.column(name).unwrap();
            let m = p.column(&format!("racial_diversity_{ep}")).unwrap();
            let lin = d.column(&format!("{name}_x_mod")).unwrap();
            let quad = d.column(&format!("{name}_x_mod2")).unwrap();
            for r in 0..p.len() {
                assert_eq!(lin[r], base[r] * m[r]);
                assert_eq!(quad[r], base[r] * (m[r] * m[r]));
            }
            assert_eq!(d.column(&format!("mod_{ep}")).unwrap(), m);
        }
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let p = panel();
        let spec = ModelSpec::interaction(Moderator::EducationalAttainment, InteractionOrder::Quadratic);
        let (a, _) = spec.build(&p).unwrap();
        let (b, _) = spec.build(&p).unwrap();
        assert_eq!(a.names, b.names);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn unknown_moderator_lists_valid_names() {
        let err = toml::from_str::<ModelSpec>("name = \"x\"\nmoderator = \"wealth\"\norder = \"linear\"").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ln_income") && msg.contains("ageing_rate"), "{msg}");
        let err = Moderator::parse("wealth").unwrap_err().to_string();
        assert!(err.contains("educational_attainment"));
    }

    #[test]
    fn spec_validation() {
        let mut s = ModelSpec::baseline();
        assert!(s.validate().is_ok());
        s.moderator = Some(Moderator::LnIncome);
        assert!(s.validate().is_err());
        s.order = InteractionOrder::Linear;
        assert!(s.validate().is_ok());
        s.interacted = Some(vec!["mp_total_origin".into()]);
        assert!(s.validate().is_ok());
        s.interacted = Some(vec!["bogus".into()]);
        assert!(s.validate().is_err());
        let mut s = ModelSpec::baseline();
        s.order = InteractionOrder::Quadratic;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::baseline();
        s.lag = 3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = ModelSpec {
            interacted: Some(vec!["mp_inst_origin".into(), "ap_behav_dest".into()]),
            center: true,
            ..ModelSpec::interaction(Moderator::LnIncome, InteractionOrder::Quadratic)
        };
        let text = toml::to_string(&s).unwrap();
        assert_eq!(toml::from_str::<ModelSpec>(&text).unwrap(), s);
        let (d, _) = s.build(&panel()).unwrap();
        assert_eq!(d.k(), 2 + 2 + 2 + 2 + 2);
    }

    #[test]
    fn interact_all_uses_every_type_column() {
        let s = ModelSpec {
            interact_all: true,
            ..ModelSpec::interaction(Moderator::LnIncome, InteractionOrder::Linear)
        };
        assert_eq!(s.policy_columns().len(), 16);
    }

    #[test]
    fn centering_leaves_quadratic_interactions_unchanged() {
        use crate::synth::{generate, DgpConfig};
        let cfg = DgpConfig {
            n_pairs: 150,
            ..DgpConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let policies: Vec<String> = ["mp_inst_origin", "mp_tech_dest"].iter().map(|s| s.to_string()).collect();
        let raw = build_interaction_with(&out.panel, "ln_outflow", Moderator::AgeingRate, InteractionOrder::Quadratic, &policies, false).unwrap();
        let cen = build_interaction_with(&out.panel, "ln_outflow", Moderator::AgeingRate, InteractionOrder::Quadratic, &policies, true).unwrap();
        let a = fit_fixed_effects(&raw).unwrap();
        let b = fit_fixed_effects(&cen).unwrap();
        for p in &policies {
            let name = format!("{p}_x_mod2");
            assert_relative_eq!(a.coef(&name).unwrap(), b.coef(&name).unwrap(), max_relative = 1e-6);
        }
        // linear terms are reparameterized
        let name = format!("{}_x_mod", policies[0]);
        assert!((a.coef(&name).unwrap() - b.coef(&name).unwrap()).abs() > 1e-9);
    }
}

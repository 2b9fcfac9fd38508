use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    policy_regressor_names, policy_regressor_values, CountyId, FlowRecord, ModeratorRecord,
    PairKey, PanelDataset, PanelObservation, PolicyCounts, Provenance, RejectedRow,
};
use crate::error::{Error, Result};

/// A free-text climate action as published by the reporting body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyAction {
    pub action: String,
    pub description: String,
}

impl PolicyAction {
    pub fn text(&self) -> String {
        format!("{} {}", self.action, self.description)
    }
}

/// Case-insensitive substring match of any keyword against each text.
///
/// Substring, not word-boundary: "heat" also matches "heating". An empty
/// keyword list matches nothing.
pub fn keyword_filter_adaptation<S: AsRef<str>, K: AsRef<str>>(texts: &[S], keywords: &[K]) -> Vec<bool> {
    let kws: Vec<String> = keywords
        .iter()
        .map(|k| k.as_ref().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    texts
        .iter()
        .map(|t| {
            let lower = t.as_ref().to_lowercase();
            kws.iter().any(|k| lower.contains(k.as_str()))
        })
        .collect()
}

/// `1 − Σ p²`, the probability two random residents belong to different groups.
///
/// Proportions summing to within 1e-6 of one are renormalized first.
pub fn compute_racial_diversity(proportions: &[f64]) -> Result<f64> {
    if proportions.is_empty() {
        return Err(Error::InvalidInput("no racial-group proportions".into()));
    }
    if let Some(p) = proportions.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidInput(format!("invalid proportion {p}")));
    }
    let total: f64 = proportions.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidInput("all racial-group proportions are zero".into()));
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "racial-group proportions sum to {total}, not 1"
        )));
    }
    let k = proportions.len();
    if proportions.iter().all(|p| *p == proportions[0]) {
        // renormalized equal shares are exactly 1/k each
        return Ok(1.0 - 1.0 / k as f64);
    }
    let sum_sq: f64 = proportions.iter().map(|p| (p / total) * (p / total)).sum();
    Ok((1.0 - sum_sq).max(0.0))
}

/// Sample restrictions applied while assembling the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleRule {
    /// Drop pair-years where either endpoint reports zero heat-related policies.
    pub drop_zero_hp: bool,
    /// Keep only these years, when set.
    pub years: Option<Vec<i32>>,
}

impl Default for SampleRule {
    fn default() -> Self {
        SampleRule {
            drop_zero_hp: true,
            years: None,
        }
    }
}

/// Inner-joins flows to endpoint policy counts and moderators.
pub fn assemble_panel(
    flows: &[FlowRecord],
    policies: &[PolicyCounts],
    moderators: &[ModeratorRecord],
    rule: &SampleRule,
) -> Result<PanelDataset> {
    let mut policy_idx: BTreeMap<(&CountyId, i32), &PolicyCounts> = BTreeMap::new();
    for p in policies {
        if policy_idx.insert((&p.county, p.year), p).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate policy record for county {} year {}",
                p.county, p.year
            )));
        }
    }
    let mut mod_idx: BTreeMap<(&CountyId, i32), &ModeratorRecord> = BTreeMap::new();
    for m in moderators {
        m.validate()?;
        if mod_idx.insert((&m.county, m.year), m).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate moderator record for county {} year {}",
                m.county, m.year
            )));
        }
    }

    let mut prov = Provenance::default();
    let mut valid = Vec::with_capacity(flows.len());
    for (row, f) in flows.iter().enumerate() {
        match f.rejection_reason() {
            Some(reason) => prov.rejected.push(RejectedRow { row, reason }),
            None => valid.push(f),
        }
    }
    prov.record("validate flow rows", flows.len(), valid.len(), None);

    if let Some(years) = &rule.years {
        let before = valid.len();
        valid.retain(|f| years.contains(&f.year));
        prov.record("restrict years", before, valid.len(), Some(format!("{years:?}")));
    }

    let before = valid.len();
    let mut joined = Vec::with_capacity(valid.len());
    for f in valid {
        let (Some(po), Some(pd)) = (
            policy_idx.get(&(&f.origin, f.year)),
            policy_idx.get(&(&f.destination, f.year)),
        ) else {
            continue;
        };
        joined.push((f, *po, *pd));
    }
    prov.record("join policy counts", before, joined.len(), None);

    if rule.drop_zero_hp {
        let before = joined.len();
        joined.retain(|(_, po, pd)| po.hp_total() > 0 && pd.hp_total() > 0);
        prov.record(
            "drop zero-HP pair-years",
            before,
            joined.len(),
            Some(format!("{} dropped", before - joined.len())),
        );
    }

    let mut observations = Vec::with_capacity(joined.len());
    for (f, po, pd) in joined {
        let lookup = |c: &CountyId| {
            mod_idx
                .get(&(c, f.year))
                .map(|m| (*m).clone())
                .ok_or_else(|| Error::MissingModerator {
                    county: c.to_string(),
                    year: f.year,
                })
        };
        observations.push(PanelObservation {
            pair: PairKey {
                origin: f.origin.clone(),
                destination: f.destination.clone(),
            },
            year: f.year,
            outflow_rate: f.outflow_rate,
            ln_outflow: f.outflow_rate.ln(),
            regressors: policy_regressor_values(po, pd),
            moderators_origin: lookup(&f.origin)?,
            moderators_destination: lookup(&f.destination)?,
        });
    }
    PanelDataset::new(policy_regressor_names(), observations, prov)
}

/// Re-applies the nonzero-HP restriction to an already assembled panel.
pub fn filter_nonzero_hp(panel: &PanelDataset) -> Result<PanelDataset> {
    let idx: Vec<usize> = ["ap_total_origin", "mp_total_origin", "ap_total_dest", "mp_total_dest"]
        .iter()
        .map(|n| {
            panel
                .regressor_index(n)
                .ok_or_else(|| Error::MissingColumn(n.to_string()))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<PanelObservation> = panel
        .observations()
        .iter()
        .filter(|o| {
            o.regressors[idx[0]] + o.regressors[idx[1]] > 0.0
                && o.regressors[idx[2]] + o.regressors[idx[3]] > 0.0
        })
        .cloned()
        .collect();
    panel.derive(kept, "drop zero-HP pair-years", None)
}

//! Core records and the assembled pair-year panel.

pub(crate) mod assemble;
mod io;
mod summary;

pub use assemble::{
    assemble_panel, compute_racial_diversity, filter_nonzero_hp, keyword_filter_adaptation,
    PolicyAction, SampleRule,
};
pub use io::{
    read_flows_csv, read_moderators_csv, read_policies_csv, write_flows_csv,
    write_moderators_csv, write_policies_csv, ModeratorRow,
};
pub use summary::{summarize, SummaryRow};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::GroupIndex;

/// Policy subtypes, in column order.
pub const POLICY_TYPES: [&str; 4] = ["tech", "inst", "behav", "nature"];
/// Policy categories: adaptation and mitigation.
pub const POLICY_CATEGORIES: [&str; 2] = ["ap", "mp"];
/// Column suffixes for the two ends of a flow.
pub const ENDPOINTS: [Endpoint; 2] = [Endpoint::Origin, Endpoint::Destination];

/// County FIPS code, zero-padded to five digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CountyId(String);

impl CountyId {
    pub fn parse(raw: &str) -> Result<Self> {
        let t = raw.trim();
        if t.is_empty() || t.len() > 5 || !t.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::InvalidInput(format!("bad FIPS code `{raw}`")));
        }
        let padded = format!("{t:0>5}");
        let state: u32 = padded[..2].parse().expect("digits");
        if !(1..=56).contains(&state) {
            return Err(Error::InvalidInput(format!(
                "FIPS `{raw}` has state prefix {state:02} outside 01-56"
            )));
        }
        Ok(CountyId(padded))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CountyId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        CountyId::parse(&s)
    }
}

impl From<CountyId> for String {
    fn from(c: CountyId) -> String {
        c.0
    }
}

impl fmt::Display for CountyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Origin,
    Destination,
}

impl Endpoint {
    pub fn suffix(self) -> &'static str {
        match self {
            Endpoint::Origin => "origin",
            Endpoint::Destination => "dest",
        }
    }

    /// Endpoint encoded in a column name's trailing suffix.
    pub fn of_column(name: &str) -> Option<Endpoint> {
        if name.ends_with("_origin") {
            Some(Endpoint::Origin)
        } else if name.ends_with("_dest") {
            Some(Endpoint::Destination)
        } else {
            None
        }
    }
}

/// Ordered origin/destination pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub origin: CountyId,
    pub destination: CountyId,
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.origin, self.destination)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub origin: CountyId,
    pub destination: CountyId,
    pub year: i32,
    /// Share of the origin base moving to the destination in `year`.
    pub outflow_rate: f64,
}

impl FlowRecord {
    /// Reason this row cannot enter the panel, if any.
    pub fn rejection_reason(&self) -> Option<String> {
        if self.origin == self.destination {
            return Some(format!("origin equals destination ({})", self.origin));
        }
        if !self.outflow_rate.is_finite() {
            return Some("non-finite outflow_rate".into());
        }
        if self.outflow_rate <= 0.0 {
            return Some(format!("non-positive outflow_rate {}", self.outflow_rate));
        }
        if self.outflow_rate >= 1.0 {
            return Some(format!("outflow_rate {} not below 1", self.outflow_rate));
        }
        None
    }
}

/// Per county-year policy counts by category and subtype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCounts {
    pub county: CountyId,
    pub year: i32,
    pub ap_by_type: [u32; 4],
    pub mp_by_type: [u32; 4],
}

impl PolicyCounts {
    pub fn ap_total(&self) -> u32 {
        self.ap_by_type.iter().sum()
    }

    pub fn mp_total(&self) -> u32 {
        self.mp_by_type.iter().sum()
    }

    pub fn hp_total(&self) -> u32 {
        self.ap_total() + self.mp_total()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moderator {
    LnIncome,
    AgeingRate,
    RacialDiversity,
    EducationalAttainment,
}

impl Moderator {
    pub const ALL: [Moderator; 4] = [
        Moderator::LnIncome,
        Moderator::AgeingRate,
        Moderator::RacialDiversity,
        Moderator::EducationalAttainment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Moderator::LnIncome => "ln_income",
            Moderator::AgeingRate => "ageing_rate",
            Moderator::RacialDiversity => "racial_diversity",
            Moderator::EducationalAttainment => "educational_attainment",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Moderator::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| {
                let valid: Vec<_> = Moderator::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidParameter(format!(
                    "unknown moderator `{name}`; valid: {}",
                    valid.join(", ")
                ))
            })
    }

    pub fn column(self, endpoint: Endpoint) -> String {
        format!("{}_{}", self.name(), endpoint.suffix())
    }
}

impl fmt::Display for Moderator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorRecord {
    pub county: CountyId,
    pub year: i32,
    pub ln_income: f64,
    pub ageing_rate: f64,
    pub racial_diversity: f64,
    pub educational_attainment: f64,
}

impl ModeratorRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidInput(format!(
                "moderator {what}={v} out of range for county {} year {}",
                self.county, self.year
            )))
        };
        if !self.ln_income.is_finite() {
            return bad("ln_income", self.ln_income);
        }
        if !(0.0..=1.0).contains(&self.ageing_rate) {
            return bad("ageing_rate", self.ageing_rate);
        }
        if !(0.0..1.0).contains(&self.racial_diversity) {
            return bad("racial_diversity", self.racial_diversity);
        }
        if !(0.0..=1.0).contains(&self.educational_attainment) {
            return bad("educational_attainment", self.educational_attainment);
        }
        Ok(())
    }

    pub fn value(&self, m: Moderator) -> f64 {
        match m {
            Moderator::LnIncome => self.ln_income,
            Moderator::AgeingRate => self.ageing_rate,
            Moderator::RacialDiversity => self.racial_diversity,
            Moderator::EducationalAttainment => self.educational_attainment,
        }
    }
}

/// Names of the 20 policy regressors every assembled panel carries.
pub fn policy_regressor_names() -> Vec<String> {
    let mut names = Vec::with_capacity(20);
    for ep in ENDPOINTS {
        for cat in POLICY_CATEGORIES {
            for ty in POLICY_TYPES {
                names.push(format!("{cat}_{ty}_{}", ep.suffix()));
            }
            names.push(format!("{cat}_total_{}", ep.suffix()));
        }
    }
    names
}

/// Regressor values in [`policy_regressor_names`] order.
pub fn policy_regressor_values(origin: &PolicyCounts, dest: &PolicyCounts) -> Vec<f64> {
    let mut out = Vec::with_capacity(20);
    for pc in [origin, dest] {
        for (counts, total) in [
            (&pc.ap_by_type, pc.ap_total()),
            (&pc.mp_by_type, pc.mp_total()),
        ] {
            out.extend(counts.iter().map(|&c| c as f64));
            out.push(total as f64);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelObservation {
    pub pair: PairKey,
    pub year: i32,
    pub outflow_rate: f64,
    pub ln_outflow: f64,
    /// Aligned with the owning dataset's regressor names.
    pub regressors: Vec<f64>,
    pub moderators_origin: ModeratorRecord,
    pub moderators_destination: ModeratorRecord,
}

impl PanelObservation {
    pub fn moderators(&self, ep: Endpoint) -> &ModeratorRecord {
        match ep {
            Endpoint::Origin => &self.moderators_origin,
            Endpoint::Destination => &self.moderators_destination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub step: String,
    pub rows_before: usize,
    pub rows_after: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// Zero-based position in the input flow table.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub steps: Vec<ProvenanceStep>,
    pub rejected: Vec<RejectedRow>,
}

impl Provenance {
    pub fn record(&mut self, step: impl Into<String>, before: usize, after: usize, detail: Option<String>) {
        self.steps.push(ProvenanceStep {
            step: step.into(),
            rows_before: before,
            rows_after: after,
            detail,
        });
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Immutable pair-year panel in canonical (pair, year) order.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    regressor_names: Vec<String>,
    observations: Vec<PanelObservation>,
    provenance: Provenance,
}

impl PanelDataset {
    pub fn new(
        regressor_names: Vec<String>,
        mut observations: Vec<PanelObservation>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for n in &regressor_names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate regressor name `{n}`")));
            }
        }
        for o in &observations {
            if o.regressors.len() != regressor_names.len() {
                return Err(Error::InvalidInput(format!(
                    "observation {} {} has {} regressors, expected {}",
                    o.pair,
                    o.year,
                    o.regressors.len(),
                    regressor_names.len()
                )));
            }
        }
        observations.sort_by(|a, b| (&a.pair, a.year).cmp(&(&b.pair, b.year)));
        for w in observations.windows(2) {
            if w[0].pair == w[1].pair && w[0].year == w[1].year {
                return Err(Error::DuplicateObservation {
                    origin: w[0].pair.origin.to_string(),
                    destination: w[0].pair.destination.to_string(),
                    year: w[0].year,
                });
            }
        }
        Ok(PanelDataset {
            regressor_names,
            observations,
            provenance,
        })
    }

    /// Rebuilds with a subset/rewrite of rows, keeping schema and appending a
    /// provenance step.
    pub(crate) fn derive(
        &self,
        observations: Vec<PanelObservation>,
        step: &str,
        detail: Option<String>,
    ) -> Result<Self> {
        let mut prov = self.provenance.clone();
        prov.record(step, self.len(), observations.len(), detail);
        PanelDataset::new(self.regressor_names.clone(), observations, prov)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[PanelObservation] {
        &self.observations
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn regressor_index(&self, name: &str) -> Option<usize> {
        self.regressor_names.iter().position(|n| n == name)
    }

    /// Every column name [`PanelDataset::column`] resolves.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["ln_outflow".to_string(), "outflow_rate".to_string()];
        names.extend(self.regressor_names.iter().cloned());
        for ep in ENDPOINTS {
            for m in Moderator::ALL {
                names.push(m.column(ep));
            }
        }
        names
    }

    /// Column values by name: `ln_outflow`, `outflow_rate`, any regressor, or
    /// `<moderator>_origin` / `<moderator>_dest`.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let acc = self.accessor(name)?;
        Ok(self.observations.iter().map(|o| acc.get(o)).collect())
    }

    pub(crate) fn accessor(&self, name: &str) -> Result<ColumnAccessor> {
        match name {
            "ln_outflow" => return Ok(ColumnAccessor::LnOutflow),
            "outflow_rate" => return Ok(ColumnAccessor::OutflowRate),
            _ => {}
        }
        if let Some(i) = self.regressor_index(name) {
            return Ok(ColumnAccessor::Regressor(i));
        }
        for ep in ENDPOINTS {
            for m in Moderator::ALL {
                if m.column(ep) == name {
                    return Ok(ColumnAccessor::Moderator(m, ep));
                }
            }
        }
        Err(Error::MissingColumn(name.to_string()))
    }

    pub fn pair_labels(&self) -> Vec<PairKey> {
        self.observations.iter().map(|o| o.pair.clone()).collect()
    }

    pub fn year_labels(&self) -> Vec<i32> {
        self.observations.iter().map(|o| o.year).collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let mut y = self.year_labels();
        y.sort_unstable();
        y.dedup();
        y
    }

    pub fn pair_index(&self) -> GroupIndex {
        GroupIndex::from_labels(&self.pair_labels())
    }

    /// Number of observations per pair.
    pub fn pair_counts(&self) -> BTreeMap<PairKey, usize> {
        let mut m = BTreeMap::new();
        for o in &self.observations {
            *m.entry(o.pair.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Share of pairs observed in two or more years.
    pub fn share_multi_year(&self) -> f64 {
        let counts = self.pair_counts();
        if counts.is_empty() {
            return 0.0;
        }
        counts.values().filter(|&&c| c >= 2).count() as f64 / counts.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum ColumnAccessor {
    LnOutflow,
    OutflowRate,
    Regressor(usize),
    Moderator(Moderator, Endpoint),
}

impl ColumnAccessor {
    pub(crate) fn get(&self, o: &PanelObservation) -> f64 {
        match *self {
            ColumnAccessor::LnOutflow => o.ln_outflow,
            ColumnAccessor::OutflowRate => o.outflow_rate,
            ColumnAccessor::Regressor(i) => o.regressors[i],
            ColumnAccessor::Moderator(m, ep) => o.moderators(ep).value(m),
        }
    }

    /// Writes `v`, keeping `ln_outflow` and `outflow_rate` consistent.
    pub(crate) fn set(&self, o: &mut PanelObservation, v: f64) {
        match *self {
            ColumnAccessor::LnOutflow => {
                o.ln_outflow = v;
                o.outflow_rate = v.exp();
            }
            ColumnAccessor::OutflowRate => {
                o.outflow_rate = v;
                o.ln_outflow = v.ln();
            }
            ColumnAccessor::Regressor(i) => o.regressors[i] = v,
            ColumnAccessor::Moderator(m, ep) => {
                let rec = match ep {
                    Endpoint::Origin => &mut o.moderators_origin,
                    Endpoint::Destination => &mut o.moderators_destination,
                };
                match m {
                    Moderator::LnIncome => rec.ln_income = v,
                    Moderator::AgeingRate => rec.ageing_rate = v,
                    Moderator::RacialDiversity => rec.racial_diversity = v,
                    Moderator::EducationalAttainment => rec.educational_attainment = v,
                }
            }
        }
    }
}

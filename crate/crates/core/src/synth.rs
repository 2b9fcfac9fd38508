//! Synthetic gravity panels with known parameters.
//!
//! `ln y = intercept + Σ β·x + u_pair + v_year + ε`, with Poisson (or
//! negative-binomial) policy counts per county-year and county-level
//! moderators. All draws come from one ChaCha20 stream seeded by `seed`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{
    assemble_panel, policy_regressor_names, write_flows_csv, write_moderators_csv, write_policies_csv, CountyId,
    FlowRecord, Moderator, ModeratorRow, PairKey, PanelDataset, PanelObservation, PolicyCounts, SampleRule, ENDPOINTS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyLaw {
    /// Poisson means of AP counts by type (tech, inst, behav, nature).
    pub ap_means: [f64; 4],
    pub mp_means: [f64; 4],
    /// Sd of the per-county log multiplier on all means.
    pub county_sd: f64,
    /// Negative-binomial size `r` (variance `μ + μ²/r`); Poisson when unset.
    pub nb_size: Option<f64>,
}

impl Default for PolicyLaw {
    fn default() -> Self {
        PolicyLaw {
            ap_means: [0.8, 1.0, 0.9, 0.3],
            mp_means: [1.5, 1.8, 1.6, 0.5],
            county_sd: 0.3,
            nb_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeratorLaw {
    pub ln_income_mean: f64,
    pub ln_income_sd: f64,
    pub ageing_mean: f64,
    pub ageing_sd: f64,
    pub education_mean: f64,
    pub education_sd: f64,
    /// Number of racial groups; shares are normalized Gamma(1) draws.
    pub race_groups: usize,
    /// Year-to-year sd, as a fraction of each moderator's cross-county sd;
    /// racial shares get log-scale multipliers with this sd.
    pub yearly_jitter: f64,
}

impl Default for ModeratorLaw {
    fn default() -> Self {
        ModeratorLaw {
            ln_income_mean: 11.3,
            ln_income_sd: 0.23,
            ageing_mean: 0.14,
            ageing_sd: 0.03,
            education_mean: 0.4,
            education_sd: 0.08,
            race_groups: 4,
            yearly_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub seed: u64,
    pub n_counties: usize,
    pub n_pairs: usize,
    pub years: Vec<i32>,
    pub intercept: f64,
    /// True slopes keyed by panel column (policy or moderator columns).
    pub slopes: BTreeMap<String, f64>,
    pub sigma_u: f64,
    pub sigma_year: f64,
    pub sigma_eps: f64,
    pub policy: PolicyLaw,
    pub moderators: ModeratorLaw,
    /// Independent drop probability per pair-year.
    pub missing_year_prob: f64,
}

/// Slopes on the four policy totals: AP/MP origin, AP/MP destination.
pub fn baseline_slopes(values: [f64; 4]) -> BTreeMap<String, f64> {
    crate::specs::BASELINE_COLUMNS
        .iter()
        .zip(values)
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            seed: 20240101,
            n_counties: 60,
            n_pairs: 300,
            years: vec![2017, 2018, 2019, 2020],
            intercept: -4.3,
            slopes: baseline_slopes([0.002, -0.0015, 0.02, 0.0]),
            sigma_u: 0.5,
            sigma_year: 0.05,
            sigma_eps: 0.3,
            policy: PolicyLaw::default(),
            moderators: ModeratorLaw::default(),
            missing_year_prob: 0.0,
        }
    }
}

fn moderator_columns() -> Vec<String> {
    Moderator::ALL
        .iter()
        .flat_map(|m| ENDPOINTS.iter().map(move |ep| m.column(*ep)))
        .collect()
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.n_counties < 2 {
            return bad("need at least two counties".into());
        }
        if self.n_counties > 56 * 999 {
            return bad(format!("{} counties exceed the county-code space", self.n_counties));
        }
        let max_pairs = self.n_counties * (self.n_counties - 1);
        if self.n_pairs == 0 || self.n_pairs > max_pairs {
            return bad(format!("n_pairs {} outside 1..={max_pairs}", self.n_pairs));
        }
        if self.years.is_empty() {
            return bad("no years".into());
        }
        let mut y = self.years.clone();
        y.sort_unstable();
        y.dedup();
        if y.len() != self.years.len() {
            return bad("duplicate years".into());
        }
        for (name, v) in [
            ("sigma_u", self.sigma_u),
            ("sigma_year", self.sigma_year),
            ("sigma_eps", self.sigma_eps),
            ("policy.county_sd", self.policy.county_sd),
            ("moderators.ln_income_sd", self.moderators.ln_income_sd),
            ("moderators.ageing_sd", self.moderators.ageing_sd),
            ("moderators.education_sd", self.moderators.education_sd),
            ("moderators.yearly_jitter", self.moderators.yearly_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a finite non-negative number"));
            }
        }
        if self.policy.ap_means.iter().chain(&self.policy.mp_means).any(|m| !(*m >= 0.0 && m.is_finite())) {
            return bad("policy means must be finite and non-negative".into());
        }
        if let Some(r) = self.policy.nb_size {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("nb_size {r} must be positive"));
            }
        }
        if self.moderators.race_groups == 0 {
            return bad("race_groups must be positive".into());
        }
        if !(0.0..1.0).contains(&self.missing_year_prob) {
            return bad(format!("missing_year_prob {} outside [0, 1)", self.missing_year_prob));
        }
        if !self.intercept.is_finite() {
            return bad("intercept must be finite".into());
        }
        let mut known = policy_regressor_names();
        known.extend(moderator_columns());
        for (k, v) in &self.slopes {
            if !known.contains(k) {
                return bad(format!("slope on unknown column `{k}`"));
            }
            if !v.is_finite() {
                return bad(format!("slope on `{k}` is not finite"));
            }
        }
        Ok(())
    }
}

/// Exact parameters and realized effects behind a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    pub seed: u64,
    pub intercept: f64,
    pub slopes: BTreeMap<String, f64>,
    pub sigma_u: f64,
    pub sigma_year: f64,
    pub sigma_eps: f64,
    pub year_effects: BTreeMap<i32, f64>,
    pub pair_effects: BTreeMap<String, f64>,
    pub n_pairs: usize,
    pub pair_years_drawn: usize,
    pub pair_years_missing: usize,
    pub panel_rows: usize,
}

impl Truth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub panel: PanelDataset,
    pub truth: Truth,
    pub flows: Vec<FlowRecord>,
    pub policies: Vec<PolicyCounts>,
    pub moderators: Vec<ModeratorRow>,
    /// Noise draws keyed by (pair, year).
    pub noise: BTreeMap<(PairKey, i32), f64>,
}

impl Generated {
    /// `intercept + Σ β·x + u + v` for a panel row.
    pub fn systematic(&self, obs: &PanelObservation) -> Result<f64> {
        let mut s = self.truth.intercept;
        for (name, beta) in &self.truth.slopes {
            s += beta * self.panel.accessor(name)?.get(obs);
        }
        s += self.truth.pair_effects[&obs.pair.to_string()];
        s += self.truth.year_effects[&obs.year];
        Ok(s)
    }

    /// Writes `flows.csv`, `policies.csv`, `moderators.csv` and `truth.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_flows_csv(BufWriter::new(File::create(dir.join("flows.csv"))?), &self.flows)?;
        write_policies_csv(BufWriter::new(File::create(dir.join("policies.csv"))?), &self.policies)?;
        write_moderators_csv(BufWriter::new(File::create(dir.join("moderators.csv"))?), &self.moderators)?;
        std::fs::write(dir.join("truth.json"), self.truth.to_json()? + "\n")?;
        Ok(())
    }
}

fn county_id(i: usize) -> CountyId {
    let code = format!("{:02}{:03}", 1 + i / 999, 1 + i % 999);
    CountyId::parse(&code).expect("generated county code is valid")
}

fn count_draw(rng: &mut ChaCha20Rng, mean: f64, nb_size: Option<f64>) -> u32 {
    let lambda = match nb_size {
        Some(r) if mean > 0.0 => Gamma::new(r, mean / r).expect("positive gamma parameters").sample(rng),
        _ => mean,
    };
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive Poisson mean").sample(rng) as u32
}

fn jitter_shares(rng: &mut ChaCha20Rng, shares: &[f64], sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return shares.to_vec();
    }
    let v: Vec<f64> = shares.iter().map(|s| s * normal(rng, 0.0, sd).exp()).collect();
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

fn normal(rng: &mut ChaCha20Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite normal parameters").sample(rng)
}

pub fn generate(cfg: &DgpConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut years = cfg.years.clone();
    years.sort_unstable();
    let counties: Vec<CountyId> = (0..cfg.n_counties).map(county_id).collect();

    // policy counts per county-year
    let law = &cfg.policy;
    let mut policies = Vec::with_capacity(counties.len() * years.len());
    for c in &counties {
        let mult = normal(&mut rng, 0.0, law.county_sd).exp();
        for &y in &years {
            let mut ap = [0u32; 4];
            let mut mp = [0u32; 4];
            for t in 0..4 {
                ap[t] = count_draw(&mut rng, law.ap_means[t] * mult, law.nb_size);
                mp[t] = count_draw(&mut rng, law.mp_means[t] * mult, law.nb_size);
            }
            policies.push(PolicyCounts {
                county: c.clone(),
                year: y,
                ap_by_type: ap,
                mp_by_type: mp,
            });
        }
    }

    // moderators: county level plus yearly jitter
    let ml = &cfg.moderators;
    let j = ml.yearly_jitter;
    let mut moderators = Vec::with_capacity(policies.len());
    for c in &counties {
        let inc = normal(&mut rng, ml.ln_income_mean, ml.ln_income_sd);
        let age = normal(&mut rng, ml.ageing_mean, ml.ageing_sd);
        let edu = normal(&mut rng, ml.education_mean, ml.education_sd);
        let gamma = Gamma::new(1.0, 1.0).expect("unit gamma");
        let race: Vec<f64> = (0..ml.race_groups).map(|_| gamma.sample(&mut rng) + 1e-3).collect();
        let total: f64 = race.iter().sum();
        let race: Vec<f64> = race.iter().map(|r| r / total).collect();
        for &y in &years {
            moderators.push(ModeratorRow {
                county: c.clone(),
                year: y,
                median_income: normal(&mut rng, inc, j * ml.ln_income_sd).exp(),
                ageing_rate: normal(&mut rng, age, j * ml.ageing_sd).clamp(0.01, 0.6),
                race_props: jitter_shares(&mut rng, &race, j),
                educational_attainment: normal(&mut rng, edu, j * ml.education_sd).clamp(0.02, 0.98),
            });
        }
    }
    let moderator_records = moderators.iter().map(ModeratorRow::to_record).collect::<Result<Vec<_>>>()?;

    // pairs, effects, flows
    let c = cfg.n_counties;
    let mut pair_ix = sample(&mut rng, c * (c - 1), cfg.n_pairs).into_vec();
    pair_ix.sort_unstable();
    let pairs: Vec<(usize, usize)> = pair_ix
        .into_iter()
        .map(|k| {
            let o = k / (c - 1);
            let r = k % (c - 1);
            (o, if r >= o { r + 1 } else { r })
        })
        .collect();
    let year_effects: BTreeMap<i32, f64> = years.iter().map(|&y| (y, normal(&mut rng, 0.0, cfg.sigma_year))).collect();

    let policy_of: BTreeMap<(&CountyId, i32), &PolicyCounts> = policies.iter().map(|p| ((&p.county, p.year), p)).collect();
    let moderator_of: BTreeMap<(&CountyId, i32), &crate::data::ModeratorRecord> =
        moderator_records.iter().map(|m| ((&m.county, m.year), m)).collect();
    let names = policy_regressor_names();

    let mut pair_effects = BTreeMap::new();
    let mut flows = Vec::new();
    let mut noise = BTreeMap::new();
    let mut missing = 0usize;
    for &(o, d) in &pairs {
        let key = PairKey {
            origin: counties[o].clone(),
            destination: counties[d].clone(),
        };
        let u = normal(&mut rng, 0.0, cfg.sigma_u);
        pair_effects.insert(key.to_string(), u);
        for &y in &years {
            let eps = normal(&mut rng, 0.0, cfg.sigma_eps);
            let drop = cfg.missing_year_prob > 0.0 && rng.random_bool(cfg.missing_year_prob);
            if drop {
                missing += 1;
                continue;
            }
            let po = policy_of[&(&key.origin, y)];
            let pd = policy_of[&(&key.destination, y)];
            let regs = crate::data::policy_regressor_values(po, pd);
            let mo = moderator_of[&(&key.origin, y)];
            let md = moderator_of[&(&key.destination, y)];
            let mut ln_y = cfg.intercept;
            for (name, beta) in &cfg.slopes {
                let x = match names.iter().position(|n| n == name) {
                    Some(i) => regs[i],
                    None => {
                        let (m, ep) = Moderator::ALL
                            .iter()
                            .flat_map(|m| ENDPOINTS.iter().map(move |ep| (*m, *ep)))
                            .find(|(m, ep)| &m.column(*ep) == name)
                            .expect("validated slope column");
                        match ep {
                            crate::data::Endpoint::Origin => mo.value(m),
                            crate::data::Endpoint::Destination => md.value(m),
                        }
                    }
                };
                ln_y += beta * x;
            }
            ln_y += u + year_effects[&y] + eps;
            noise.insert((key.clone(), y), eps);
            flows.push(FlowRecord {
                origin: key.origin.clone(),
                destination: key.destination.clone(),
                year: y,
                outflow_rate: ln_y.exp(),
            });
        }
    }

    let panel = assemble_panel(&flows, &policies, &moderator_records, &SampleRule::default())?;
    let truth = Truth {
        seed: cfg.seed,
        intercept: cfg.intercept,
        slopes: cfg.slopes.clone(),
        sigma_u: cfg.sigma_u,
        sigma_year: cfg.sigma_year,
        sigma_eps: cfg.sigma_eps,
        year_effects,
        pair_effects,
        n_pairs: cfg.n_pairs,
        pair_years_drawn: cfg.n_pairs * years.len(),
        pair_years_missing: missing,
        panel_rows: panel.len(),
    };
    Ok(Generated {
        panel,
        truth,
        flows,
        policies,
        moderators,
        noise,
    })
}

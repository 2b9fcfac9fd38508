//! TOML run configuration.
//!
//! ```toml
//! formats = ["md", "csv", "json"]
//!
//! [synth]              # or [data] with flows / policies / moderators paths
//! seed = 7
//!
//! [[models]]
//! name = "baseline"
//!
//! [robustness]
//! trim_pct = 0.05
//!
//! [[margins]]
//! moderators = ["ln_income"]
//! order = "quadratic"
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    assemble_panel, policy_regressor_names, read_flows_csv, read_moderators_csv, read_policies_csv, Moderator,
    PanelDataset, SampleRule,
};
use crate::error::{Error, Result};
use crate::margins::GridSpec;
use crate::specs::{ClusterVar, InteractionOrder, ModelSpec, SIGNIFICANT_SIX};
use crate::synth::{generate, DgpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Md,
    Csv,
    Json,
}

/// Source tables; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub flows: PathBuf,
    pub policies: PathBuf,
    pub moderators: PathBuf,
    #[serde(default)]
    pub sample: SampleRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    /// Name of the model spec the battery perturbs.
    pub spec: String,
    /// Column winsorized and trimmed.
    pub column: String,
    pub winsorize_pct: f64,
    pub trim_pct: f64,
    pub subsample_fraction: f64,
    pub subsample_seed: u64,
    pub exclude_years: Vec<i32>,
    pub lag_k: Vec<u8>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            spec: "baseline".into(),
            column: "outflow_rate".into(),
            winsorize_pct: 0.01,
            trim_pct: 0.05,
            subsample_fraction: 0.8,
            subsample_seed: 20240101,
            exclude_years: vec![2020],
            lag_k: vec![1, 2],
        }
    }
}

fn default_order() -> InteractionOrder {
    InteractionOrder::Quadratic
}

fn all_moderators() -> Vec<Moderator> {
    Moderator::ALL.to_vec()
}

/// One interaction fit per moderator; one curve per (policy, moderator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginsRequest {
    /// Policies to interact; defaults to [`SIGNIFICANT_SIX`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<String>>,
    #[serde(default = "all_moderators")]
    pub moderators: Vec<Moderator>,
    #[serde(default = "default_order")]
    pub order: InteractionOrder,
    #[serde(default)]
    pub center: bool,
    #[serde(default)]
    pub cluster: ClusterVar,
    #[serde(default)]
    pub grid: GridSpec,
}

impl Default for MarginsRequest {
    fn default() -> Self {
        MarginsRequest {
            policies: None,
            moderators: all_moderators(),
            order: default_order(),
            center: false,
            cluster: ClusterVar::Pair,
            grid: GridSpec::default(),
        }
    }
}

impl MarginsRequest {
    pub fn policy_list(&self) -> Vec<String> {
        self.policies
            .clone()
            .unwrap_or_else(|| SIGNIFICANT_SIX.iter().map(|s| s.to_string()).collect())
    }

    pub fn spec_for(&self, moderator: Moderator) -> ModelSpec {
        ModelSpec {
            interacted: Some(self.policy_list()),
            center: self.center,
            cluster: self.cluster,
            ..ModelSpec::interaction(moderator, self.order)
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn all_formats() -> Vec<Format> {
    vec![Format::Md, Format::Csv, Format::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<DgpConfig>,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub robustness: RobustnessConfig,
    #[serde(default)]
    pub margins: Vec<MarginsRequest>,
    /// Not echoed: the echo lives inside it.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that replace file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    /// Replaces the synth seed and the subsample seed.
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base_dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(f) = o.format {
            self.formats = vec![f];
        }
        if let Some(seed) = o.seed {
            if let Some(s) = &mut self.synth {
                s.seed = seed;
            }
            self.robustness.subsample_seed = seed;
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    pub fn spec(&self, name: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.data, &self.synth) {
            (Some(_), Some(_)) => return bad("give either [data] or [synth], not both".into()),
            (None, None) => return bad("no input: add a [data] or [synth] table".into()),
            (None, Some(s)) => s.validate()?,
            (Some(d), None) => {
                for p in [&d.flows, &d.policies, &d.moderators] {
                    let full = self.base_dir.join(p);
                    if !full.is_file() {
                        return bad(format!("input file {} does not exist", full.display()));
                    }
                }
            }
        }
        if self.models.is_empty() {
            return bad("at least one [[models]] entry is required".into());
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            m.validate()?;
            if !seen.insert(m.name.as_str()) {
                return bad(format!("duplicate model name `{}`", m.name));
            }
        }
        if self.formats.is_empty() {
            return bad("no output formats".into());
        }

        let r = &self.robustness;
        for (name, v) in [("winsorize_pct", r.winsorize_pct), ("trim_pct", r.trim_pct)] {
            if !(v > 0.0 && v < 0.5) {
                return bad(format!("robustness.{name} = {v} outside (0, 0.5)"));
            }
        }
        if !(r.subsample_fraction > 0.0 && r.subsample_fraction <= 1.0) {
            return bad(format!("robustness.subsample_fraction = {} outside (0, 1]", r.subsample_fraction));
        }
        if let Some(k) = r.lag_k.iter().find(|k| !(1..=2).contains(*k)) {
            return bad(format!("robustness.lag_k entry {k} outside 1..=2"));
        }

        let policies = policy_regressor_names();
        let mut curves = BTreeSet::new();
        for (i, req) in self.margins.iter().enumerate() {
            if req.order == InteractionOrder::None {
                return bad(format!("margins[{i}]: order must be linear or quadratic"));
            }
            if req.moderators.is_empty() {
                return bad(format!("margins[{i}]: no moderators"));
            }
            let list = req.policy_list();
            if list.is_empty() {
                return bad(format!("margins[{i}]: no policies"));
            }
            for p in &list {
                if !policies.contains(p) {
                    return bad(format!("margins[{i}]: `{p}` is not a policy column"));
                }
                for m in &req.moderators {
                    if !curves.insert((p.clone(), *m)) {
                        return bad(format!("margins: curve ({p}, {m}) requested twice"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads and joins the source tables, or generates a synthetic panel.
    pub fn load_panel(&self) -> Result<PanelDataset> {
        if let Some(s) = &self.synth {
            return Ok(generate(s)?.panel);
        }
        let d = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("no input: add a [data] or [synth] table".into()))?;
        let open = |p: &Path| File::open(self.base_dir.join(p));
        let flows = read_flows_csv(open(&d.flows)?)?;
        let policies = read_policies_csv(open(&d.policies)?)?;
        let moderators = read_moderators_csv(open(&d.moderators)?)?;
        assemble_panel(&flows, &policies, &moderators, &d.sample)
    }

    /// TOML of the configuration after overrides, minus the output directory.
    pub fn effective_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

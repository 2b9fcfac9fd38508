use serde::Serialize;

use super::PanelDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variable: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 when n = 1.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// One-pass (Welford) moments for every resolvable column.
pub fn summarize(panel: &PanelDataset) -> Result<Vec<SummaryRow>> {
    if panel.is_empty() {
        return Err(Error::InvalidInput("cannot summarize an empty panel".into()));
    }
    panel
        .column_names()
        .into_iter()
        .map(|name| {
            let acc = panel.accessor(&name)?;
            Ok(welford(name, panel.observations().iter().map(|o| acc.get(o))))
        })
        .collect()
}

fn welford(variable: String, values: impl Iterator<Item = f64>) -> SummaryRow {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
        min = min.min(x);
        max = max.max(x);
    }
    let sd = if n > 1 { (m2 / (n - 1) as f64).max(0.0).sqrt() } else { 0.0 };
    SummaryRow {
        variable,
        n,
        mean,
        sd,
        min,
        max,
    }
}

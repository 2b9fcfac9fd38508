//! CSV adapters for the three source tables.
//!
//! ```text
//! flows.csv:      origin_fips,dest_fips,year,outflow_rate
//! policies.csv:   fips,year,ap_tech,ap_inst,ap_behav,ap_nature,mp_tech,mp_inst,mp_behav,mp_nature
//! moderators.csv: fips,year,median_income,ageing_rate,race_prop_1..race_prop_k,educational_attainment
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{compute_racial_diversity, CountyId, FlowRecord, ModeratorRecord, PolicyCounts};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize, Serialize)]
struct FlowRow {
    origin_fips: String,
    dest_fips: String,
    year: i32,
    outflow_rate: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct PolicyRow {
    fips: String,
    year: i32,
    ap_tech: u32,
    ap_inst: u32,
    ap_behav: u32,
    ap_nature: u32,
    mp_tech: u32,
    mp_inst: u32,
    mp_behav: u32,
    mp_nature: u32,
}

fn line_err(line: usize, e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("line {line}: {e}"))
}

pub fn read_flows_csv<R: Read>(reader: R) -> Result<Vec<FlowRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<FlowRow>().enumerate() {
        let row = row?;
        out.push(FlowRecord {
            origin: CountyId::parse(&row.origin_fips).map_err(|e| line_err(i + 2, e))?,
            destination: CountyId::parse(&row.dest_fips).map_err(|e| line_err(i + 2, e))?,
            year: row.year,
            outflow_rate: row.outflow_rate,
        });
    }
    Ok(out)
}

pub fn read_policies_csv<R: Read>(reader: R) -> Result<Vec<PolicyCounts>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PolicyRow>().enumerate() {
        let r = row?;
        out.push(PolicyCounts {
            county: CountyId::parse(&r.fips).map_err(|e| line_err(i + 2, e))?,
            year: r.year,
            ap_by_type: [r.ap_tech, r.ap_inst, r.ap_behav, r.ap_nature],
            mp_by_type: [r.mp_tech, r.mp_inst, r.mp_behav, r.mp_nature],
        });
    }
    Ok(out)
}

/// Raw moderator row as supplied: income in dollars, race shares unreduced.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeratorRow {
    pub county: CountyId,
    pub year: i32,
    pub median_income: f64,
    pub ageing_rate: f64,
    pub race_props: Vec<f64>,
    pub educational_attainment: f64,
}

impl ModeratorRow {
    pub fn to_record(&self) -> Result<ModeratorRecord> {
        if !(self.median_income > 0.0) {
            return Err(Error::InvalidInput(format!(
                "median_income {} must be positive (county {} year {})",
                self.median_income, self.county, self.year
            )));
        }
        let rec = ModeratorRecord {
            county: self.county.clone(),
            year: self.year,
            ln_income: self.median_income.ln(),
            ageing_rate: self.ageing_rate,
            racial_diversity: compute_racial_diversity(&self.race_props)?,
            educational_attainment: self.educational_attainment,
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn read_moderators_csv<R: Read>(reader: R) -> Result<Vec<ModeratorRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let fips = find("fips")?;
    let year = find("year")?;
    let income = find("median_income")?;
    let ageing = find("ageing_rate")?;
    let edu = find("educational_attainment")?;
    let mut race: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.trim()
                .strip_prefix("race_prop_")
                .and_then(|k| k.parse::<usize>().ok())
                .map(|k| (k, i))
        })
        .collect();
    if race.is_empty() {
        return Err(Error::MissingColumn("race_prop_1".into()));
    }
    race.sort_unstable();

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |idx: usize| -> Result<f64> {
            rec.get(idx)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| line_err(line, format!("column {}: {e}", &headers[idx])))
        };
        let row = ModeratorRow {
            county: CountyId::parse(rec.get(fips).unwrap_or("")).map_err(|e| line_err(line, e))?,
            year: rec
                .get(year)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| line_err(line, format!("year: {e}")))?,
            median_income: num(income)?,
            ageing_rate: num(ageing)?,
            race_props: race.iter().map(|&(_, idx)| num(idx)).collect::<Result<_>>()?,
            educational_attainment: num(edu)?,
        };
        out.push(row.to_record().map_err(|e| line_err(line, e))?);
    }
    Ok(out)
}

pub fn write_flows_csv<W: Write>(writer: W, flows: &[FlowRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for f in flows {
        w.serialize(FlowRow {
            origin_fips: f.origin.to_string(),
            dest_fips: f.destination.to_string(),
            year: f.year,
            outflow_rate: f.outflow_rate,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_policies_csv<W: Write>(writer: W, policies: &[PolicyCounts]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in policies {
        let [ap_tech, ap_inst, ap_behav, ap_nature] = p.ap_by_type;
        let [mp_tech, mp_inst, mp_behav, mp_nature] = p.mp_by_type;
        w.serialize(PolicyRow {
            fips: p.county.to_string(),
            year: p.year,
            ap_tech,
            ap_inst,
            ap_behav,
            ap_nature,
            mp_tech,
            mp_inst,
            mp_behav,
            mp_nature,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_moderators_csv<W: Write>(writer: W, rows: &[ModeratorRow]) -> Result<()> {
    let k = rows.iter().map(|r| r.race_props.len()).max().unwrap_or(1);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "fips".to_string(),
        "year".into(),
        "median_income".into(),
        "ageing_rate".into(),
    ];
    header.extend((1..=k).map(|i| format!("race_prop_{i}")));
    header.push("educational_attainment".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.county.to_string(),
            r.year.to_string(),
            r.median_income.to_string(),
            r.ageing_rate.to_string(),
        ];
        rec.extend((0..k).map(|i| r.race_props.get(i).copied().unwrap_or(0.0).to_string()));
        rec.push(r.educational_attainment.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

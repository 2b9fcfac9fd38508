//! Report tables and their markdown / CSV / JSON renderings.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::inference::stars;

/// Fixed 4-decimal display; `-0.0000` prints as `0.0000`, non-finite as `NA`.
pub fn fmt4(x: f64) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt4).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
    pub stars: &'static str,
}

impl Cell {
    pub fn new(estimate: f64, se: f64, p_value: f64) -> Self {
        Cell {
            estimate,
            se,
            p_value,
            stars: stars(p_value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub label: String,
    pub cells: Vec<Option<Cell>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FooterValue {
    Count(usize),
    Real(f64),
}

impl FooterValue {
    fn display(self) -> String {
        match self {
            FooterValue::Count(n) => n.to_string(),
            FooterValue::Real(x) => fmt4(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FooterRow {
    pub label: String,
    pub values: Vec<Option<FooterValue>>,
}

/// Coefficient table: one column per model, estimate with stars over (se).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    pub footer: Vec<FooterRow>,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct CsvRecord<'a> {
    section: &'static str,
    label: &'a str,
    model: &'a str,
    estimate: Option<f64>,
    se: Option<f64>,
    p_value: Option<f64>,
    stars: &'a str,
    value: Option<f64>,
}

impl ReportTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## {}\n", self.title);
        let _ = writeln!(s, "| | {} |", self.columns.join(" | "));
        let _ = writeln!(s, "|---|{}", "---:|".repeat(self.columns.len()));
        for row in &self.rows {
            let cells: Vec<String> = row
                .cells
                .iter()
                .map(|c| match c {
                    Some(c) => format!("{}{} ({})", fmt4(c.estimate), c.stars, fmt4(c.se)),
                    None => String::new(),
                })
                .collect();
            let _ = writeln!(s, "| {} | {} |", row.label, cells.join(" | "));
        }
        for f in &self.footer {
            let cells: Vec<String> = f
                .values
                .iter()
                .map(|v| v.map(FooterValue::display).unwrap_or_default())
                .collect();
            let _ = writeln!(s, "| {} | {} |", f.label, cells.join(" | "));
        }
        if !self.notes.is_empty() {
            s.push('\n');
            for n in &self.notes {
                let _ = writeln!(s, "{n}");
            }
        }
        s
    }

    /// Long CSV: `coef` rows per (label, model), then `footer` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            for (model, cell) in self.columns.iter().zip(&row.cells) {
                if let Some(c) = cell {
                    w.serialize(CsvRecord {
                        section: "coef",
                        label: &row.label,
                        model,
                        estimate: Some(c.estimate),
                        se: Some(c.se),
                        p_value: Some(c.p_value),
                        stars: c.stars,
                        value: None,
                    })?;
                }
            }
        }
        for f in &self.footer {
            for (model, v) in self.columns.iter().zip(&f.values) {
                if let Some(v) = v {
                    let value = match *v {
                        FooterValue::Count(n) => n as f64,
                        FooterValue::Real(x) => x,
                    };
                    w.serialize(CsvRecord {
                        section: "footer",
                        label: &f.label,
                        model,
                        estimate: None,
                        se: None,
                        p_value: None,
                        stars: "",
                        value: Some(value),
                    })?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Renders a header plus rows of pre-formatted cells as a markdown table.
pub fn markdown_grid(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ReportTable {
        ReportTable {
            title: "t".into(),
            columns: vec!["FE".into(), "Pooled".into()],
            rows: vec![TableRow {
                label: "x".into(),
                cells: vec![Some(Cell::new(0.123456, 0.01, 0.03)), None],
            }],
            footer: vec![
                FooterRow {
                    label: "n".into(),
                    values: vec![Some(FooterValue::Count(10)), Some(FooterValue::Count(10))],
                },
                FooterRow {
                    label: "F".into(),
                    values: vec![Some(FooterValue::Real(2.5)), None],
                },
            ],
            notes: vec![],
        }
    }

    #[test]
    fn display_rounding() {
        assert_eq!(fmt4(0.123456), "0.1235");
        assert_eq!(fmt4(-0.00001), "0.0000");
        assert_eq!(fmt4(f64::NAN), "NA");
        assert_eq!(fmt4(-1.5), "-1.5000");
    }

    #[test]
    fn stars_follow_thresholds() {
        assert_eq!(Cell::new(1.0, 1.0, 0.03).stars, "**");
        assert_eq!(Cell::new(1.0, 1.0, 0.009).stars, "***");
        assert_eq!(Cell::new(1.0, 1.0, 0.07).stars, "*");
        assert_eq!(Cell::new(1.0, 1.0, 0.5).stars, "");
    }

    #[test]
    fn markdown_layout() {
        let md = table().to_markdown();
        assert!(md.contains("| x | 0.1235** (0.0100) |  |"), "{md}");
        assert!(md.contains("| n | 10 | 10 |"));
        assert!(md.contains("| F | 2.5000 |  |"));
    }

    #[test]
    fn csv_keeps_full_precision() {
        let mut buf = Vec::new();
        table().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("coef,x,FE,0.123456,0.01,0.03,**,"), "{text}");
        assert!(text.contains("footer,F,FE,,,,,2.5"));
        assert_eq!(text.lines().count(), 1 + 1 + 3);
    }
}

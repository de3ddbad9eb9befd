//! Results tables: approach x corruption level x metrics, best value per
//! metric flagged within each level. Tied best values are all flagged.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use uar_core::metrics::MetricReport;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub approach: String,
    pub level: String,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ssim,
    Psnr,
    Rrmse,
    Lpips,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Ssim, Metric::Psnr, Metric::Rrmse, Metric::Lpips];

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Ssim | Metric::Psnr)
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Ssim => "SSIM",
            Metric::Psnr => "PSNR",
            Metric::Rrmse => "RRMSE",
            Metric::Lpips => "LPIPS",
        }
    }

    fn of(self, m: &MetricReport) -> Option<f64> {
        match self {
            Metric::Ssim => Some(m.ssim),
            Metric::Psnr => Some(m.psnr),
            Metric::Rrmse => Some(m.rrmse),
            Metric::Lpips => m.lpips,
        }
        .filter(|v| !v.is_nan())
    }

    fn decimals(self) -> usize {
        match self {
            Metric::Psnr => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(with = "number_or_inf")]
    pub value: Option<f64>,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub level: String,
    pub approach: String,
    pub ssim: Cell,
    pub psnr: Cell,
    pub rrmse: Cell,
    pub lpips: Cell,
}

impl ReportRow {
    pub fn cell(&self, metric: Metric) -> &Cell {
        match metric {
            Metric::Ssim => &self.ssim,
            Metric::Psnr => &self.psnr,
            Metric::Rrmse => &self.rrmse,
            Metric::Lpips => &self.lpips,
        }
    }

    fn cell_mut(&mut self, metric: Metric) -> &mut Cell {
        match metric {
            Metric::Ssim => &mut self.ssim,
            Metric::Psnr => &mut self.psnr,
            Metric::Rrmse => &mut self.rrmse,
            Metric::Lpips => &mut self.lpips,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ReportRow>,
}

/// Groups entries by level (in order of first appearance) and flags the best
/// value of every metric inside each group.
pub fn build_table(entries: &[ReportEntry]) -> ResultsTable {
    let mut levels: Vec<&str> = Vec::new();
    for e in entries {
        if !levels.contains(&e.level.as_str()) {
            levels.push(&e.level);
        }
    }
    let mut rows = Vec::with_capacity(entries.len());
    for level in levels {
        let group: Vec<&ReportEntry> = entries.iter().filter(|e| e.level == level).collect();
        let start = rows.len();
        for e in &group {
            let cell = |m: Metric| Cell { value: m.of(&e.metrics), best: false };
            rows.push(ReportRow {
                level: e.level.clone(),
                approach: e.approach.clone(),
                ssim: cell(Metric::Ssim),
                psnr: cell(Metric::Psnr),
                rrmse: cell(Metric::Rrmse),
                lpips: cell(Metric::Lpips),
            });
        }
        for metric in Metric::ALL {
            let values = rows[start..].iter().filter_map(|r| r.cell(metric).value);
            let best = if metric.higher_is_better() {
                values.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            } else {
                values.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
            };
            if let Some(best) = best {
                for row in &mut rows[start..] {
                    let cell = row.cell_mut(metric);
                    cell.best = cell.value == Some(best);
                }
            }
        }
    }
    ResultsTable { rows }
}

fn format_value(metric: Metric, cell: &Cell) -> String {
    let text = match cell.value {
        None => return "n/a".into(),
        Some(v) if v.is_infinite() => if v > 0.0 { "inf".to_string() } else { "-inf".to_string() },
        Some(v) => format!("{v:.*}", metric.decimals()),
    };
    if cell.best { format!("**{text}**") } else { text }
}

pub fn render_markdown(table: &ResultsTable) -> String {
    let mut out = String::from("| Level | Approach |");
    for m in Metric::ALL {
        out.push_str(&format!(" {} {} |", m.label(), if m.higher_is_better() { "↑" } else { "↓" }));
    }
    out.push_str("\n|---|---|---:|---:|---:|---:|\n");
    for row in &table.rows {
        out.push_str(&format!("| {} | {} |", row.level, row.approach));
        for m in Metric::ALL {
            out.push_str(&format!(" {} |", format_value(m, row.cell(m))));
        }
        out.push('\n');
    }
    out
}

/// Writes `results.json` and `results.md` into `dir`.
pub fn write_report(table: &ResultsTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(table).expect("table serializes"))?;
    fs::write(dir.join("results.md"), render_markdown(table))?;
    Ok(())
}

/// `None` as null, infinities as the strings `"inf"` / `"-inf"`.
mod number_or_inf {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_infinite() => s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" }),
            Some(x) => s.serialize_f64(*x),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Number(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) if t == "-inf" => Ok(Some(f64::NEG_INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("unexpected value {t:?}"))),
        }
    }
}

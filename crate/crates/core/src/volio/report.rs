//! Per-case metrics CSV with a trailing `mean±std` summary row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, IoError};
use crate::anmetrics::ReportRow;
use crate::volcore::Stage;

pub const REPORT_COLUMNS: [&str; 12] = [
    "case_id",
    "stage",
    "dice",
    "jaccard",
    "max_diameter_mm",
    "gt_max_diameter_mm",
    "diameter_abs_err_mm",
    "slice_index",
    "gt_slice_index",
    "volume_mm3",
    "gt_volume_mm3",
    "rel_vol_diff",
];

const SUMMARY_ID: &str = "summary";
const COMMENT: &str = "# last row: mean±std over cases, population standard deviation";

/// Flat form of one report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub case_id: String,
    pub stage: Stage,
    pub dice: f64,
    pub jaccard: f64,
    pub max_diameter_mm: f64,
    pub gt_max_diameter_mm: f64,
    pub diameter_abs_err_mm: f64,
    pub slice_index: Option<usize>,
    pub gt_slice_index: Option<usize>,
    pub volume_mm3: f64,
    pub gt_volume_mm3: f64,
    pub rel_vol_diff: Option<f64>,
}

impl From<&ReportRow> for ReportRecord {
    fn from(r: &ReportRow) -> Self {
        let m = &r.metrics;
        Self {
            case_id: r.case_id.clone(),
            stage: r.stage,
            dice: m.dice,
            jaccard: m.jaccard,
            max_diameter_mm: m.diameter.max_diameter_mm,
            gt_max_diameter_mm: m.gt_diameter.max_diameter_mm,
            diameter_abs_err_mm: m.diameter_abs_err_mm,
            slice_index: m.diameter.slice_index,
            gt_slice_index: m.gt_diameter.slice_index,
            volume_mm3: m.volume_mm3,
            gt_volume_mm3: m.gt_volume_mm3,
            rel_vol_diff: m.rel_vol_diff,
        }
    }
}

impl ReportRecord {
    fn numeric(&self) -> [Option<f64>; 10] {
        [
            Some(self.dice),
            Some(self.jaccard),
            Some(self.max_diameter_mm),
            Some(self.gt_max_diameter_mm),
            Some(self.diameter_abs_err_mm),
            self.slice_index.map(|v| v as f64),
            self.gt_slice_index.map(|v| v as f64),
            Some(self.volume_mm3),
            Some(self.gt_volume_mm3),
            self.rel_vol_diff,
        ]
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_report(rows: &[ReportRecord]) -> String {
    let mut s = String::new();
    s.push_str(COMMENT);
    s.push('\n');
    s.push_str(&REPORT_COLUMNS.join(","));
    s.push('\n');
    for r in rows {
        let cells = [
            r.case_id.clone(),
            r.stage.to_string(),
            r.dice.to_string(),
            r.jaccard.to_string(),
            r.max_diameter_mm.to_string(),
            r.gt_max_diameter_mm.to_string(),
            r.diameter_abs_err_mm.to_string(),
            opt(r.slice_index),
            opt(r.gt_slice_index),
            r.volume_mm3.to_string(),
            r.gt_volume_mm3.to_string(),
            opt(r.rel_vol_diff),
        ];
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    let mut summary = vec![SUMMARY_ID.to_string(), String::new()];
    for col in 0..10 {
        let values: Vec<f64> = rows.iter().filter_map(|r| r.numeric()[col]).collect();
        summary.push(mean_std(&values).map_or(String::new(), |(m, sd)| format!("{m:.6}±{sd:.6}")));
    }
    s.push_str(&summary.join(","));
    s.push('\n');
    s
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<(), IoError> {
    let records: Vec<ReportRecord> = rows.iter().map(ReportRecord::from).collect();
    write_atomic(path, format_report(&records).as_bytes())
}

/// Reads the per-case lines back, skipping comments and the summary row.
pub fn parse_report(text: &str) -> Result<Vec<ReportRecord>, IoError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| IoError::Report("missing header row".into()))?;
    if header.split(',').map(str::trim).ne(REPORT_COLUMNS) {
        return Err(IoError::Report(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c.len() != REPORT_COLUMNS.len() {
            return Err(IoError::Report(format!("row {} has {} cells", ln + 1, c.len())));
        }
        if c[0] == SUMMARY_ID {
            continue;
        }
        let bad = |col: usize| IoError::Report(format!("row {}: bad {} value {:?}", ln + 1, REPORT_COLUMNS[col], c[col]));
        let f = |col: usize| c[col].parse::<f64>().map_err(|_| bad(col));
        let of = |col: usize| -> Result<Option<f64>, IoError> {
            if c[col].is_empty() {
                Ok(None)
            } else {
                f(col).map(Some)
            }
        };
        let ou = |col: usize| -> Result<Option<usize>, IoError> {
            if c[col].is_empty() {
                Ok(None)
            } else {
                c[col].parse().map(Some).map_err(|_| bad(col))
            }
        };
        out.push(ReportRecord {
            case_id: c[0].to_string(),
            stage: c[1].parse().map_err(|_| bad(1))?,
            dice: f(2)?,
            jaccard: f(3)?,
            max_diameter_mm: f(4)?,
            gt_max_diameter_mm: f(5)?,
            diameter_abs_err_mm: f(6)?,
            slice_index: ou(7)?,
            gt_slice_index: ou(8)?,
            volume_mm3: f(9)?,
            gt_volume_mm3: f(10)?,
            rel_vol_diff: of(11)?,
        });
    }
    Ok(out)
}

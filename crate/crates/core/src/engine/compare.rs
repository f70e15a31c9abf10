//! Side-by-side Baseline/Enhanced tables: per-organ DICE and HD95 with an
//! Overall row.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub organ: String,
    pub baseline_dice: f64,
    pub baseline_hd95_mm: Option<f64>,
    pub enhanced_dice: f64,
    pub enhanced_hd95_mm: Option<f64>,
}

impl ComparisonRow {
    /// `(enhanced - baseline) / baseline`; undefined for a zero baseline.
    pub fn dice_improvement(&self) -> Option<f64> {
        (self.baseline_dice > 0.0).then(|| (self.enhanced_dice - self.baseline_dice) / self.baseline_dice)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Model name shown in the top-left cell, e.g. "3D ResU-Net".
    pub title: String,
    pub rows: Vec<ComparisonRow>,
    pub overall: ComparisonRow,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:+.0}%", 100.0 * v))
}

/// Pairs two reports organ by organ; both must cover the same organs in
/// the same order.
pub fn compare(title: &str, baseline: &MetricsReport, enhanced: &MetricsReport) -> Result<Comparison, EngineError> {
    let names = |r: &MetricsReport| r.classes.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
    if names(baseline) != names(enhanced) {
        return Err(EngineError::DatasetMismatch(format!(
            "baseline organs {:?} differ from enhanced organs {:?}",
            names(baseline),
            names(enhanced)
        )));
    }
    if baseline.n_cases != enhanced.n_cases {
        return Err(EngineError::DatasetMismatch(format!(
            "baseline has {} cases, enhanced {}",
            baseline.n_cases, enhanced.n_cases
        )));
    }
    let rows = baseline
        .classes
        .iter()
        .zip(&enhanced.classes)
        .map(|(b, e)| ComparisonRow {
            organ: b.name.clone(),
            baseline_dice: b.dice,
            baseline_hd95_mm: b.hd95_mm,
            enhanced_dice: e.dice,
            enhanced_hd95_mm: e.hd95_mm,
        })
        .collect();
    Ok(Comparison {
        title: title.to_string(),
        rows,
        overall: ComparisonRow {
            organ: "Overall".into(),
            baseline_dice: baseline.overall_dice,
            baseline_hd95_mm: baseline.overall_hd95_mm,
            enhanced_dice: enhanced.overall_dice,
            enhanced_hd95_mm: enhanced.overall_hd95_mm,
        },
    })
}

impl Comparison {
    fn all_rows(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().chain(std::iter::once(&self.overall))
    }

    /// Two header lines: the column groups, then the metric names.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},Baseline,,Enhanced,,\n", self.title);
        out.push_str("Organ,DICE,HD95,DICE,HD95,DICE improvement\n");
        for r in self.all_rows() {
            let _ = writeln!(
                out,
                "{},{:.2},{},{:.2},{},{}",
                r.organ,
                r.baseline_dice,
                cell(r.baseline_hd95_mm),
                r.enhanced_dice,
                cell(r.enhanced_hd95_mm),
                percent(r.dice_improvement())
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    /// Fixed-width text rendering for terminals.
    pub fn to_text(&self) -> String {
        let width = self.all_rows().map(|r| r.organ.len()).chain([self.title.len(), 7]).max().unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$} | {:^15} | {:^15} |", self.title, "Baseline", "Enhanced");
        let _ = writeln!(out, "{:<width$} | {:>7} {:>7} | {:>7} {:>7} | {:>8}", "Organ", "DICE", "HD95", "DICE", "HD95", "DICE +/-");
        let _ = writeln!(out, "{}", "-".repeat(width + 48));
        for r in self.all_rows() {
            let _ = writeln!(
                out,
                "{:<width$} | {:>7.2} {:>7} | {:>7.2} {:>7} | {:>8}",
                r.organ,
                r.baseline_dice,
                cell(r.baseline_hd95_mm),
                r.enhanced_dice,
                cell(r.enhanced_hd95_mm),
                percent(r.dice_improvement())
            );
        }
        out
    }
}

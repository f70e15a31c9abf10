use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CaseRecord, MetricsError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub name: String,
    pub dice: f64,
    /// Mean over the cases where the distance was defined.
    pub hd95_mm: Option<f64>,
    /// Cases whose distance was undefined (a set was empty).
    pub hd95_absent: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassSummary>,
    pub overall_dice: f64,
    pub overall_hd95_mm: Option<f64>,
    pub n_cases: usize,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-class means over cases; the overall row averages the class means.
pub fn aggregate(cases: &[CaseRecord]) -> Result<MetricsReport, MetricsError> {
    let first = cases.first().ok_or(MetricsError::EmptyInput)?;
    let names: Vec<String> = first.iter().map(|c| c.name.clone()).collect();
    for case in cases {
        let these: Vec<String> = case.iter().map(|c| c.name.clone()).collect();
        if these != names {
            return Err(MetricsError::ClassMismatch(names, these));
        }
    }
    let classes: Vec<ClassSummary> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let dice = mean(cases.iter().map(|c| c[k].dice)).unwrap_or(0.0);
            let present: Vec<f64> = cases.iter().filter_map(|c| c[k].hd95_mm).collect();
            ClassSummary {
                name: name.clone(),
                dice,
                hd95_mm: mean(present.iter().copied()),
                hd95_absent: cases.len() - present.len(),
            }
        })
        .collect();
    if classes.iter().any(|c| c.hd95_absent > 0) {
        log::debug!(
            "undefined HD95 excluded: {}",
            classes
                .iter()
                .filter(|c| c.hd95_absent > 0)
                .map(|c| format!("{} x{}", c.name, c.hd95_absent))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(MetricsReport {
        overall_dice: mean(classes.iter().map(|c| c.dice)).unwrap_or(0.0),
        overall_hd95_mm: mean(classes.iter().filter_map(|c| c.hd95_mm)),
        classes,
        n_cases: cases.len(),
    })
}

pub(crate) fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

impl MetricsReport {
    /// `Organ,DICE,HD95` rows with two decimals and a trailing `Overall` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Organ,DICE,HD95\n");
        for c in &self.classes {
            let _ = writeln!(out, "{},{:.2},{}", c.name, c.dice, cell(c.hd95_mm));
        }
        let _ = writeln!(out, "Overall,{:.2},{}", self.overall_dice, cell(self.overall_hd95_mm));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), MetricsError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| MetricsError::Io { path, source }
        };
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()).map_err(io(&json))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(io(&csv))
    }

    pub fn class(&self, name: &str) -> Option<&ClassSummary> {
        self.classes.iter().find(|c| c.name == name)
    }
}

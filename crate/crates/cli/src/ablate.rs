//! The three ablation sweeps. Every arm is a full training run followed by
//! evaluation of its best checkpoint; a failed arm is recorded and the
//! sweep moves on.

use std::fmt::Write as _;
use std::path::Path;

use oarseg_core::engine::{evaluate_checkpoint, fit, write_report, ExperimentConfig, RunMode, Split};
use oarseg_core::metrics::MetricsReport;
use oarseg_core::model::EncoderKind;
use oarseg_core::optim::{LossConfig, SchedulePolicy, SchedulerConfig};
use serde::Serialize;

use crate::args::AblationKind;
use crate::error::CliError;
use crate::plot::bar_chart;

/// DICE/CE weight pairs of the loss sweep.
pub const LOSS_GRID: [(f64, f64); 7] = [(1.0, 0.0), (0.8, 0.2), (0.6, 0.4), (0.5, 0.5), (0.4, 0.6), (0.2, 0.8), (0.0, 1.0)];

#[derive(Clone, Debug)]
pub struct Arm {
    /// Selector for `--arms` and the run-name suffix.
    pub key: String,
    /// Column header in the result table.
    pub label: String,
    pub config: ExperimentConfig,
}

impl AblationKind {
    pub fn name(self) -> &'static str {
        match self {
            AblationKind::LossWeights => "loss_weights",
            AblationKind::Scheduler => "scheduler",
            AblationKind::Encoder => "encoder",
        }
    }
}

fn arm(base: &ExperimentConfig, kind: AblationKind, key: String, label: String, edit: impl FnOnce(&mut ExperimentConfig)) -> Arm {
    let mut config = base.clone();
    config.mode = RunMode::Custom;
    config.run_name = format!("{}-{}-{}", base.run_name, kind.name(), key.replace([':', '.'], "_"));
    edit(&mut config);
    Arm { key, label, config }
}

/// Every arm of `kind` derived from `base`, in table order.
pub fn arms(base: &ExperimentConfig, kind: AblationKind) -> Vec<Arm> {
    match kind {
        AblationKind::LossWeights => LOSS_GRID
            .iter()
            .map(|&(d, c)| {
                arm(base, kind, format!("{d:.1}:{c:.1}"), format!("DICE {d:.1} / CE {c:.1}"), |cfg| {
                    cfg.loss = LossConfig { dice_weight: d, ce_weight: c, ..base.loss.clone() };
                })
            })
            .collect(),
        AblationKind::Scheduler => SchedulePolicy::ALL
            .iter()
            .map(|&p| {
                let label = if p == SchedulePolicy::Constant { "without cyclicLR" } else { p.name() };
                arm(base, kind, p.name().to_string(), label.to_string(), |cfg| {
                    cfg.scheduler = if p == SchedulePolicy::Constant {
                        SchedulerConfig::constant(base.scheduler.base_lr)
                    } else {
                        SchedulerConfig { policy: p, ..base.scheduler.clone() }
                    };
                })
            })
            .collect(),
        AblationKind::Encoder => [(EncoderKind::EfficientnetStyle, "efficientnet"), (EncoderKind::Resnet34Style, "resnet34")]
            .iter()
            .map(|&(e, label)| {
                arm(base, kind, e.name().to_string(), label.to_string(), |cfg| {
                    cfg.model.encoder = e;
                })
            })
            .collect(),
    }
}

#[derive(Debug, Serialize)]
pub struct ArmResult {
    pub key: String,
    pub label: String,
    pub run_name: String,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AblationOutcome {
    pub kind: String,
    pub split: Split,
    pub arms: Vec<ArmResult>,
}

impl AblationOutcome {
    /// Organ rows by arm columns, with an Overall row; failed arms read `failed`.
    pub fn table_csv(&self, corner: &str) -> String {
        let mut out = corner.to_string();
        for a in &self.arms {
            let _ = write!(out, ",{}", a.label);
        }
        out.push('\n');
        let organs: Vec<String> = self
            .arms
            .iter()
            .find_map(|a| a.report.as_ref())
            .map(|r| r.classes.iter().map(|c| c.name.clone()).collect())
            .unwrap_or_default();
        let cell = |a: &ArmResult, f: &dyn Fn(&MetricsReport) -> f64| a.report.as_ref().map_or("failed".to_string(), |r| format!("{:.2}", f(r)));
        for (k, organ) in organs.iter().enumerate() {
            out.push_str(organ);
            for a in &self.arms {
                let _ = write!(out, ",{}", cell(a, &|r| r.classes[k].dice));
            }
            out.push('\n');
        }
        out.push_str("Overall");
        for a in &self.arms {
            let _ = write!(out, ",{}", cell(a, &|r| r.overall_dice));
        }
        out.push('\n');
        out
    }

    /// Arms ordered by overall DICE, best first; failures last.
    pub fn ranked(&self) -> Vec<&ArmResult> {
        let mut v: Vec<&ArmResult> = self.arms.iter().collect();
        let score = |a: &ArmResult| a.report.as_ref().map_or(f64::NEG_INFINITY, |r| r.overall_dice);
        v.sort_by(|a, b| score(b).total_cmp(&score(a)));
        v
    }

    pub fn ranked_csv(&self) -> String {
        let mut out = String::from("rank,arm,overall_dice,overall_hd95_mm,status\n");
        for (i, a) in self.ranked().into_iter().enumerate() {
            match (&a.report, &a.error) {
                (Some(r), _) => {
                    let hd = r.overall_hd95_mm.map_or("n/a".to_string(), |v| format!("{v:.2}"));
                    let _ = writeln!(out, "{},{},{:.4},{hd},ok", i + 1, a.label, r.overall_dice);
                }
                (None, e) => {
                    let msg = e.as_deref().unwrap_or("failed").replace([',', '\n'], ";");
                    let _ = writeln!(out, "{},{},,,failed: {msg}", i + 1, a.label);
                }
            }
        }
        out
    }
}

/// Trains and evaluates each selected arm, then writes
/// `ablation_<kind>.{csv,json,svg}` and `ablation_<kind>_ranked.csv` to
/// `runs_root`.
pub fn run_ablation(
    base: &ExperimentConfig,
    kind: AblationKind,
    only: Option<&[String]>,
    runs_root: &Path,
) -> Result<AblationOutcome, CliError> {
    let mut selected = arms(base, kind);
    if let Some(keys) = only {
        let known: Vec<String> = selected.iter().map(|a| a.key.clone()).collect();
        if let Some(bad) = keys.iter().find(|k| !known.contains(k)) {
            return Err(CliError::Usage(format!("unknown {} arm `{bad}`; expected one of {}", kind.name(), known.join(", "))));
        }
        selected.retain(|a| keys.contains(&a.key));
    }
    let mut results = Vec::new();
    let mut split = Split::Test;
    for arm in selected {
        log::info!("ablation {}: arm {}", kind.name(), arm.key);
        let outcome = (|| -> Result<(MetricsReport, Split), CliError> {
            let state = fit(&arm.config, runs_root)?;
            let best = state.best.ok_or_else(|| CliError::Internal("run produced no checkpoint".into()))?;
            let has_test = oarseg_core::engine::load_cases(&arm.config, Split::Test).map(|c| !c.is_empty())?;
            let split = if has_test { Split::Test } else { Split::Val };
            let report = evaluate_checkpoint(&best.path, split, &arm.config)?;
            write_report(&state.run_dir, split, &report)?;
            Ok((report, split))
        })();
        let (report, error) = match outcome {
            Ok((r, s)) => {
                split = s;
                (Some(r), None)
            }
            Err(e) => {
                log::error!("arm {} failed: {e}", arm.key);
                (None, Some(e.to_string()))
            }
        };
        results.push(ArmResult {
            key: arm.key,
            label: arm.label,
            run_name: arm.config.run_name,
            report,
            error,
        });
    }
    let outcome = AblationOutcome {
        kind: kind.name().into(),
        split,
        arms: results,
    };
    std::fs::create_dir_all(runs_root).map_err(|e| CliError::io(runs_root, e))?;
    let stem = runs_root.join(format!("ablation_{}", kind.name()));
    let corner = format!("{}({})", base.dataset.kind.as_str().to_uppercase(), base.epochs);
    let write = |ext: &str, text: String| {
        let p = stem.with_extension(ext);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    write("csv", outcome.table_csv(&corner))?;
    write("json", serde_json::to_string_pretty(&outcome).expect("outcome serializes"))?;
    let ranked = runs_root.join(format!("ablation_{}_ranked.csv", kind.name()));
    std::fs::write(&ranked, outcome.ranked_csv()).map_err(|e| CliError::io(&ranked, e))?;
    let bars: Vec<(String, f64)> = outcome
        .arms
        .iter()
        .filter_map(|a| a.report.as_ref().map(|r| (a.label.clone(), r.overall_dice)))
        .collect();
    bar_chart(&stem.with_extension("svg"), &format!("{} ablation", kind.name()), &bars)?;
    if outcome.arms.iter().all(|a| a.report.is_none()) {
        return Err(CliError::Internal(format!("every {} arm failed", kind.name())));
    }
    Ok(outcome)
}

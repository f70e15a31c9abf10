use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oarseg_core::data::synthetic::{generate, SyntheticConfig};
use oarseg_core::data::{scan_dataset, split_patients, DatasetKind, SplitManifest};
use oarseg_core::engine::{
    compare, evaluate_checkpoint, fit, load_cases, write_atomic, write_report, Comparison, DatasetConfig, ExperimentConfig, Split, TrainState,
};
use oarseg_core::metrics::MetricsReport;
use serde::Serialize;

use crate::args::{Common, Preset};
use crate::error::CliError;

pub const RUNS_ENV: &str = "OARSEG_RUNS_DIR";

/// The config file (or the chosen preset), then `--set` overrides in
/// order, then `--seed`.
pub fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if common.preset == Preset::Baseline => ExperimentConfig::baseline("baseline", DatasetConfig::default()),
        None => ExperimentConfig::default(),
    };
    for item in &common.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{item}` is not KEY=VALUE")))?;
        cfg.apply_override(key.trim(), value.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn runs_root(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(RUNS_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub root: PathBuf,
    pub patients: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub classes: Vec<String>,
    /// `DxHxW` extent to patient count.
    pub shapes: BTreeMap<String, usize>,
}

/// Validates every patient, then writes `split.json` and `summary.json`
/// to `--out` (default: the dataset root).
pub fn prepare(common: &Common, synthetic: Option<usize>) -> Result<DatasetSummary, CliError> {
    let cfg = load_config(common)?;
    let root = &cfg.dataset.root;
    if let Some(cases) = synthetic {
        if cfg.dataset.kind != DatasetKind::Synthetic {
            return Err(CliError::Usage("--synthetic needs dataset.kind = synthetic".into()));
        }
        generate(
            root,
            &SyntheticConfig {
                cases,
                seed: cfg.seed,
                ..Default::default()
            },
        )
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let spec = cfg.dataset.spec();
    let scan = scan_dataset(root, &spec).map_err(|e| CliError::Data(e.to_string()))?;
    if !scan.errors.is_empty() {
        let listing: Vec<String> = scan.errors.iter().map(|(id, e)| format!("  {id}: {e}")).collect();
        return Err(CliError::Data(format!(
            "{} of {} patients failed to load:\n{}",
            scan.errors.len(),
            scan.errors.len() + scan.ok.len(),
            listing.join("\n")
        )));
    }
    let ids: Vec<String> = scan.ok.iter().map(|(id, _, _)| id.clone()).collect();
    let split = split_patients(&ids, cfg.dataset.ratios, cfg.seed).map_err(|e| CliError::Data(e.to_string()))?;
    let mut shapes = BTreeMap::new();
    for (_, [d, h, w], _) in &scan.ok {
        *shapes.entry(format!("{d}x{h}x{w}")).or_insert(0) += 1;
    }
    let summary = DatasetSummary {
        dataset: cfg.dataset.kind.as_str().into(),
        root: root.clone(),
        patients: ids.len(),
        train: split.train_ids.len(),
        val: split.val_ids.len(),
        test: split.test_ids.len(),
        classes: spec.class_names(),
        shapes,
    };
    let out = common.out.clone().unwrap_or_else(|| root.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let manifest = serde_json::to_string_pretty(&SplitManifest::from(&split)).expect("manifest serializes");
    write_text(&out.join("split.json"), &manifest)?;
    write_text(&out.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct OverrideAudit<'a> {
    config: Option<&'a Path>,
    overrides: &'a [String],
    seed: Option<u64>,
}

/// Trains, records the applied overrides, and reports the best checkpoint
/// on the validation and (when nonempty) test splits.
pub fn train(common: &Common) -> Result<(TrainState, Vec<(Split, MetricsReport)>), CliError> {
    let cfg = load_config(common)?;
    let root = runs_root(common);
    let state = fit(&cfg, &root)?;
    let audit = OverrideAudit {
        config: common.config.as_deref(),
        overrides: &common.overrides,
        seed: common.seed,
    };
    write_text(&state.run_dir.join("overrides.json"), &serde_json::to_string_pretty(&audit).expect("audit serializes"))?;
    let mut reports = Vec::new();
    if let Some(best) = &state.best {
        for split in [Split::Val, Split::Test] {
            if load_cases(&cfg, split)?.is_empty() {
                continue;
            }
            let report = evaluate_checkpoint(&best.path, split, &cfg)?;
            write_report(&state.run_dir, split, &report)?;
            reports.push((split, report));
        }
    }
    Ok((state, reports))
}

pub fn evaluate(common: &Common, checkpoint: Option<PathBuf>, split: Split) -> Result<MetricsReport, CliError> {
    let cfg = load_config(common)?;
    let ckpt = checkpoint.unwrap_or_else(|| runs_root(common).join(&cfg.run_name).join("best.ckpt"));
    if !ckpt.is_file() {
        return Err(CliError::Data(format!("checkpoint {} not found", ckpt.display())));
    }
    let report = evaluate_checkpoint(&ckpt, split, &cfg)?;
    let dir = ckpt.parent().unwrap_or(Path::new("."));
    write_report(dir, split, &report)?;
    Ok(report)
}

fn read_report(run: &Path, split: Split) -> Result<MetricsReport, CliError> {
    let path = run.join(format!("report_{}.json", split.name()));
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    MetricsReport::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Both runs must use the same dataset and the same patient split.
fn check_same_data(a: &Path, b: &Path) -> Result<(), CliError> {
    let kind = |run: &Path| read_json(&run.join("config.json")).map(|v| v["dataset"]["kind"].clone());
    let (ka, kb) = (kind(a)?, kind(b)?);
    if ka != kb {
        return Err(oarseg_core::engine::EngineError::DatasetMismatch(format!("datasets {ka} and {kb} differ")).into());
    }
    if read_json(&a.join("split.json"))? != read_json(&b.join("split.json"))? {
        return Err(oarseg_core::engine::EngineError::DatasetMismatch("the runs used different patient splits".into()).into());
    }
    Ok(())
}

/// Writes `comparison_<split>.{csv,json,txt}` to `out`.
pub fn compare_runs(baseline: &Path, enhanced: &Path, split: Split, title: &str, out: &Path) -> Result<Comparison, CliError> {
    check_same_data(baseline, enhanced)?;
    let table = compare(title, &read_report(baseline, split)?, &read_report(enhanced, split)?)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let stem = format!("comparison_{}", split.name());
    write_text(&out.join(format!("{stem}.csv")), &table.to_csv())?;
    write_text(&out.join(format!("{stem}.json")), &table.to_json())?;
    write_text(&out.join(format!("{stem}.txt")), &table.to_text())?;
    Ok(table)
}

use std::path::{Path, PathBuf};
use std::process::Command;

use clap::CommandFactory;
use ndarray::Array3;
use oarseg_cli::args::Cli;
use oarseg_cli::error::{EXIT_DATA, EXIT_OK, EXIT_USAGE};
use oarseg_cli::run;
use oarseg_core::data::synthetic::{generate, SyntheticConfig};
use oarseg_core::data::{write_patient, DatasetKind, DatasetSpec, Volume};
use oarseg_core::engine::ExperimentConfig;
use tempfile::TempDir;

fn oarseg(args: &[&str]) -> i32 {
    run(std::iter::once("oarseg").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn phantoms(root: &Path, cases: usize) {
    generate(
        root,
        &SyntheticConfig {
            cases,
            extent: [16, 16, 16],
            ..Default::default()
        },
    )
    .unwrap();
}

/// Overrides for a tiny, quick synthetic run rooted at `data`.
fn tiny(data: &Path) -> Vec<String> {
    [
        "dataset.kind=synthetic".to_string(),
        format!("dataset.root={}", data.display()),
        "dataset.ratios=[0.5,0.25,0.25]".into(),
        "epochs=1".into(),
        "model.depth=2".into(),
        "model.base_width=4".into(),
        "patch_size=\"full\"".into(),
    ]
    .into_iter()
    .flat_map(|o| ["--set".to_string(), o])
    .collect()
}

fn with<'a>(head: &[&'a str], tail: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(tail.iter().map(String::as_str)).collect()
}

#[test]
fn help_lists_flags_and_bad_usage_exits_64() {
    assert_eq!(oarseg(&["--help"]), EXIT_OK);
    let mut cmd = Cli::command();
    for verb in ["prepare", "train", "evaluate", "ablate"] {
        assert_eq!(oarseg(&[verb, "--help"]), EXIT_OK);
        let help = cmd.find_subcommand_mut(verb).unwrap().render_long_help().to_string();
        for flag in ["--config", "--set", "--seed", "--out"] {
            assert!(help.contains(flag), "{verb} help lacks {flag}");
        }
    }
    assert_eq!(oarseg(&["train", "--bogus"]), EXIT_USAGE);
    assert_eq!(oarseg(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(oarseg(&["train", "--set", "epochs"]), EXIT_USAGE);
    assert_eq!(oarseg(&["train", "--set", "loss.no_such_field=1"]), EXIT_USAGE);
    assert_eq!(oarseg(&["train", "--set", "epochs=-3"]), EXIT_USAGE);
    assert_eq!(oarseg(&["ablate", "optimizer"]), EXIT_USAGE);
    let missing = TempDir::new().unwrap();
    assert_eq!(oarseg(&["train", "--config", s(&missing.path().join("nope.toml"))]), EXIT_DATA);
}

fn openkbp_cohort(root: &Path, n: usize) -> DatasetSpec {
    let spec = DatasetSpec::for_kind(DatasetKind::Openkbp);
    for i in 0..n {
        let volume = Volume::new(Array3::zeros((4, 4, 4)), [1.0; 3], format!("pt_{i:03}")).unwrap();
        let masks: Vec<(String, Array3<u8>)> = spec
            .organs
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let mut m = Array3::zeros((4, 4, 4));
                m[[k % 4, 0, 0]] = 1;
                (o.key.clone(), m)
            })
            .collect();
        write_patient(root, &spec, &volume, &masks).unwrap();
    }
    spec
}

#[test]
fn prepare_reports_cohort_sizes_and_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("kbp");
    openkbp_cohort(&data, 188);
    let root = format!("dataset.root={}", data.display());
    let prep = |out: &Path| {
        oarseg(&["prepare", "--set", "dataset.kind=openkbp", "--set", &root, "--seed", "17", "--out", s(out)])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(prep(&a), EXIT_OK);
    assert_eq!(prep(&b), EXIT_OK);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!((summary["train"].as_u64(), summary["val"].as_u64(), summary["test"].as_u64()), (Some(132), Some(28), Some(28)));
    assert_eq!(summary["shapes"]["4x4x4"], 188);
    assert_eq!(summary["classes"][4], "Mandible");
    assert_eq!(std::fs::read(a.join("split.json")).unwrap(), std::fs::read(b.join("split.json")).unwrap());
}

#[test]
fn prepare_names_the_missing_organ() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("kbp");
    openkbp_cohort(&data, 3);
    std::fs::remove_file(data.join("pt_001").join("mask_mandible.npy")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_oarseg"))
        .args(["prepare", "--set", "dataset.kind=openkbp", "--set", &format!("dataset.root={}", data.display())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pt_001") && stderr.contains("mandible"), "{stderr}");
    assert!(!data.join("split.json").exists());
}

#[test]
fn synthetic_flag_requires_a_synthetic_dataset() {
    let tmp = TempDir::new().unwrap();
    let root = format!("dataset.root={}", tmp.path().display());
    assert_eq!(oarseg(&["prepare", "--set", "dataset.kind=pddca", "--set", &root, "--synthetic", "2"]), EXIT_USAGE);
}

#[test]
fn train_audits_overrides_and_honours_the_runs_env() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    phantoms(&data, 4);
    let runs = tmp.path().join("env-runs");
    let mut args = vec!["train".to_string(), "--seed".into(), "9".into()];
    args.extend(tiny(&data));
    args.extend(["--set".into(), "mode=custom".into()]);
    args.extend(["--set".into(), "loss.ce_weight=0.7".into(), "--set".into(), "loss.dice_weight=0.3".into()]);
    args.extend(["--set".into(), "run_name=audited".into()]);
    let status = Command::new(env!("CARGO_BIN_EXE_oarseg"))
        .args(&args)
        .env("OARSEG_RUNS_DIR", &runs)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    let run = runs.join("audited");
    let cfg = ExperimentConfig::load(&run.join("config.json")).unwrap();
    assert_eq!((cfg.epochs, cfg.seed, cfg.loss.ce_weight, cfg.loss.dice_weight), (1, 9, 0.7, 0.3));
    assert_eq!(cfg.dataset.root, data);
    let audit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("overrides.json")).unwrap()).unwrap();
    assert_eq!(audit["seed"], 9);
    assert!(audit["overrides"].as_array().unwrap().iter().any(|o| o == "loss.ce_weight=0.7"));
    for f in ["best.ckpt", "report_val.json", "report_test.json", "report_test.csv", "curves.csv", "lr_trace.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    // Re-scoring the best checkpoint reproduces the report written by train.
    let set = tiny(&data);
    let before = std::fs::read_to_string(run.join("report_test.json")).unwrap();
    let eval = with(&["evaluate", "--seed", "9", "--set", "run_name=audited", "--out", s(&runs)], &set);
    assert_eq!(oarseg(&eval), EXIT_OK);
    assert_eq!(std::fs::read_to_string(run.join("report_test.json")).unwrap(), before);
    let eval_other = with(&["evaluate", "--set", "run_name=never-trained", "--out", s(&runs)], &set);
    assert_eq!(oarseg(&eval_other), EXIT_DATA);
}

#[test]
fn single_arm_ablation_and_compare() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    phantoms(&data, 4);
    let runs = tmp.path().join("runs");
    let set = tiny(&data);

    let args = with(&["ablate", "scheduler", "--arms", "exp_range", "--out", s(&runs)], &set);
    assert_eq!(oarseg(&args), EXIT_OK);
    let table = std::fs::read_to_string(runs.join("ablation_scheduler.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "SYNTHETIC(1),exp_range");
    assert_eq!(lines.iter().map(|l| l.split(',').next().unwrap()).collect::<Vec<_>>(), ["SYNTHETIC(1)", "Lung", "Spinal Cord", "Chiasm", "Overall"]);
    let ranked = std::fs::read_to_string(runs.join("ablation_scheduler_ranked.csv")).unwrap();
    assert_eq!(ranked.lines().count(), 2);
    assert!(ranked.lines().nth(1).unwrap().starts_with("1,exp_range,"));
    assert!(runs.join("ablation_scheduler.svg").is_file());
    assert!(runs.join("enhanced-scheduler-exp_range").join("report_test.json").is_file());

    assert_eq!(oarseg(&with(&["ablate", "scheduler", "--arms", "cosine", "--out", s(&runs)], &set)), EXIT_USAGE);
    let mut broken = with(&["ablate", "encoder", "--arms", "resnet34_style", "--out", s(&runs)], &set);
    broken.extend(["--set", "dataset.root=/nonexistent/oarseg"]);
    assert_ne!(oarseg(&broken), EXIT_OK);
    let failed = std::fs::read_to_string(runs.join("ablation_encoder_ranked.csv")).unwrap();
    assert!(failed.lines().nth(1).unwrap().contains("failed"), "{failed}");

    // A second, baseline run on the same data for the comparison table.
    let base = with(&["train", "--preset", "baseline", "--set", "run_name=base", "--out", s(&runs)], &set);
    assert_eq!(oarseg(&base), EXIT_OK);
    let out = tmp.path().join("cmp");
    let cmp = |b: &Path, e: &Path| {
        oarseg(&["compare", "--baseline", s(b), "--enhanced", s(e), "--title", "Tiny", "--out", s(&out)])
    };
    let enhanced = runs.join("enhanced-scheduler-exp_range");
    assert_eq!(cmp(&runs.join("base"), &enhanced), EXIT_OK);
    let csv = std::fs::read_to_string(out.join("comparison_test.csv")).unwrap();
    assert!(csv.starts_with("Tiny,Baseline,,Enhanced,,\nOrgan,DICE,HD95,DICE,HD95,DICE improvement\n"));
    assert!(out.join("comparison_test.txt").is_file() && out.join("comparison_test.json").is_file());

    // A run with a different patient split cannot be compared.
    let reseeded = with(&["train", "--preset", "baseline", "--seed", "99", "--set", "run_name=reseeded", "--out", s(&runs)], &set);
    assert_eq!(oarseg(&reseeded), EXIT_OK);
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(runs.join("base/split.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(runs.join("reseeded/split.json")).unwrap()).unwrap();
    if a != b {
        assert_eq!(cmp(&runs.join("reseeded"), &enhanced), EXIT_DATA);
    }
    assert_eq!(cmp(&tmp.path().join("absent"), &enhanced), EXIT_DATA);
}

#[test]
fn plot_requires_curves() {
    let tmp = TempDir::new().unwrap();
    let out: PathBuf = tmp.path().join("plots");
    assert_eq!(oarseg(&["plot", "--out", s(&out)]), EXIT_DATA);
    assert_eq!(oarseg(&["plot", s(tmp.path()), "--out", s(&out)]), EXIT_DATA);
    let err = oarseg_cli::plot::plot_runs(&[], &out).err().unwrap();
    assert!(matches!(err, oarseg_cli::error::CliError::MissingCurves(_)));
}

//! Trains baseline or enhanced mode on eight generated phantoms and prints
//! per-epoch validation DICE with timings.
//!
//! `cargo run --release --example synthetic_run -- enhanced 200 [workdir]`
use std::path::PathBuf;
use std::time::Instant;

use oarseg_core::data::synthetic::{generate, SyntheticConfig};
use oarseg_core::engine::{fit_with, DatasetConfig, EpochControl, ExperimentConfig, PatchSize};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("enhanced");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let work = PathBuf::from(args.get(3).cloned().unwrap_or_else(|| "/tmp/oarseg-synthetic".into()));
    let root = work.join("data");
    if !root.exists() {
        generate(&root, &SyntheticConfig::default()).unwrap();
    }
    let dataset = DatasetConfig {
        root,
        ratios: [0.75, 0.125, 0.125],
        ..Default::default()
    };
    let mut cfg = match mode {
        "baseline" => ExperimentConfig::baseline("baseline", dataset),
        _ => ExperimentConfig::enhanced("enhanced", dataset),
    };
    cfg.epochs = epochs;
    cfg.model.depth = 3;
    cfg.model.base_width = 8;
    cfg.patch_size = PatchSize::Size([32, 32, 32]);
    let start = Instant::now();
    let state = fit_with(&cfg, &work.join("runs"), |s| {
        let v = s.val_curve.last().unwrap();
        let per_class: Vec<String> = s.val_class_dice.last().unwrap().iter().map(|d| format!("{d:.3}")).collect();
        println!(
            "epoch {:3} {:6.1}s train {:.4} val loss {:.4} dice {:.4} [{}]",
            v.epoch,
            start.elapsed().as_secs_f64(),
            s.train_curve.last().unwrap().loss,
            v.loss,
            v.mean_dice,
            per_class.join(" ")
        );
        EpochControl::Continue
    })
    .unwrap();
    println!("best {:?}", state.best);
}

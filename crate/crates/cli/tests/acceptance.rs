//! Release-level checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines appear in order on stdout.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use oarseg_cli::plot::plot_runs;
use oarseg_core::data::synthetic::{generate, SyntheticConfig};
use oarseg_core::engine::{fit, fit_with, DatasetConfig, EpochControl, ExperimentConfig, PatchSize, TrainState};
use oarseg_core::metrics::{dice_score, hd95};
use oarseg_core::model::{EncoderKind, Mode, Model, ModelConfig, Variant};
use oarseg_core::optim::{
    ce_loss_grad, combined_loss_grad, dice_loss_grad, loss_node, lr_at, make_optimizer, read_lr_trace, LossConfig, LossShape,
    SchedulePolicy, SchedulerConfig,
};
use oarseg_tensor::{Tensor, Var};
use oracles::{dice_by_sets, hd95_all_pairs, random_labels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(492);
    let (mut dice_bad, mut hd_worst, mut hd_mismatch) = (0, 0.0f64, 0);
    for _ in 0..200 {
        let shape = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let p = random_labels(&mut rng, shape, 3);
        let r = random_labels(&mut rng, shape, 3);
        let spacing = [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)];
        for class in 1..3 {
            if dice_score(&p, &r, class).unwrap() != dice_by_sets(&p, &r, class) {
                dice_bad += 1;
            }
            match (hd95(&p, &r, class, spacing).unwrap(), hd95_all_pairs(&p, &r, class, spacing)) {
                (Some(g), Some(w)) => hd_worst = hd_worst.max((g - w).abs()),
                (g, w) if g != w => hd_mismatch += 1,
                _ => {}
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        dice_bad == 0 && hd_mismatch == 0 && hd_worst < 1e-9 && elapsed < Duration::from_secs(60),
        format!("dice mismatches {dice_bad}, hd95 max error {hd_worst:.1e} mm, presence mismatches {hd_mismatch}, {elapsed:.1?}"),
    )
}

type Kernel = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>;

fn fd_agreement(f: &Kernel, x: &[f64]) -> f64 {
    let (_, grad) = f(x);
    let h = 1e-4;
    let mut probe = x.to_vec();
    let mut ok = 0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe).0;
        probe[i] = x[i] - h;
        let down = f(&probe).0;
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        if (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8) < 1e-3 {
            ok += 1;
        }
    }
    ok as f64 / x.len() as f64
}

fn loss_gradients() -> Outcome {
    let start = Instant::now();
    let shape = LossShape { batch: 2, classes: 3, spatial: 36 };
    let mut rng = ChaCha8Rng::seed_from_u64(493);
    let mut worst = [1.0f64; 3];
    for _ in 0..10 {
        let x: Vec<f64> = (0..2 * 3 * 36).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: Vec<u8> = (0..2 * 36).map(|_| rng.random_range(0..3)).collect();
        let (t1, t2, t3) = (target.clone(), target.clone(), target);
        let kernels: [Kernel; 3] = [
            Box::new(move |z| dice_loss_grad(z, shape, &t1, &LossConfig::dice_only()).unwrap()),
            Box::new(move |z| ce_loss_grad(z, shape, &t2).unwrap()),
            Box::new(move |z| combined_loss_grad(z, shape, &t3, &LossConfig::weighted(0.4, 0.6)).unwrap()),
        ];
        for (w, k) in worst.iter_mut().zip(&kernels) {
            *w = w.min(fd_agreement(k, &x));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst.iter().all(|&f| f >= 0.99) && elapsed < Duration::from_secs(60),
        format!(
            "coordinates within 1e-3: dice {:.1}%, ce {:.1}%, combined {:.1}% (worst of 10 draws), {elapsed:.1?}",
            100.0 * worst[0],
            100.0 * worst[1],
            100.0 * worst[2]
        ),
    )
}

fn scheduler_exactness() -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/lr_golden.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (mut rows, mut mismatches) = (0, 0);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let t: u64 = f[0].parse().unwrap();
        for col in 3..header.len() {
            let cfg = SchedulerConfig {
                step_size: f[1].parse().unwrap(),
                gamma: f[2].parse().unwrap(),
                ..SchedulerConfig::cyclic(SchedulePolicy::parse(header[col]).unwrap())
            };
            if lr_at(&cfg, t).to_bits() != f[col].parse::<f64>().unwrap().to_bits() {
                mismatches += 1;
            }
        }
        rows += 1;
    }
    let step = 250;
    let cfg = |p| SchedulerConfig {
        step_size: step,
        ..SchedulerConfig::cyclic(p)
    };
    let spots = [
        lr_at(&cfg(SchedulePolicy::Triangular), 0) == 0.001,
        lr_at(&cfg(SchedulePolicy::Triangular), step as u64) == 0.006,
        lr_at(&cfg(SchedulePolicy::Triangular2), 3 * step as u64) == 0.0035,
    ];
    outcome(
        rows == 10_000 && mismatches == 0 && spots.iter().all(|&s| s),
        format!("{rows} golden rows x {} policies, {mismatches} mismatches; spot values {spots:?}", header.len() - 3),
    )
}

fn shape_and_gradient_flow() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(495);
    let mut failures = Vec::new();
    let classes = 4;
    for variant in Variant::ALL {
        for encoder in EncoderKind::ALL {
            let cfg = ModelConfig {
                encoder,
                base_width: 4,
                depth: 3,
                ..ModelConfig::for_variant(variant, classes)
            };
            let tag = format!("{}/{}", variant.name(), encoder.name());
            let model = match Model::new(&cfg, 7) {
                Ok(m) => m,
                Err(e) => {
                    failures.push(format!("{tag}: {e}"));
                    continue;
                }
            };
            let shape = if variant.is_3d() { vec![2, 1, 16, 16, 16] } else { vec![2, 1, 1, 32, 32] };
            let n: usize = shape.iter().product();
            let x = Var::constant(Tensor::new(shape.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()));
            let out = model.forward(&x, Mode { training: true }).unwrap();
            let mut want = shape.clone();
            want[1] = classes;
            if out.logits.shape() != want.as_slice() {
                failures.push(format!("{tag}: output {:?}, want {want:?}", out.logits.shape()));
                continue;
            }
            let target: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes as u8)).collect();
            loss_node(&out.logits, &target, &LossConfig::compound()).unwrap().backward();
            let before: Vec<Vec<f32>> = model.params().iter().map(|p| p.value().data().to_vec()).collect();
            let mut opt = make_optimizer(model.params(), 1e-3);
            opt.step();
            for ((name, p), old) in model.named_params().iter().zip(&before) {
                let g = p.grad();
                if !g.all_finite() || g.data().iter().all(|&v| v == 0.0) {
                    failures.push(format!("{tag}: {name} has no gradient"));
                } else if p.value().data() == old.as_slice() {
                    failures.push(format!("{tag}: {name} unchanged by the step"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(300),
        if failures.is_empty() {
            format!("{} variants x {} encoders, {elapsed:.1?}", Variant::ALL.len(), EncoderKind::ALL.len())
        } else {
            failures.join("; ")
        },
    )
}

/// The synthetic experiment shared by the reproduction, artifact and
/// determinism checks.
fn synthetic_config(name: &str, data: &Path, enhanced: bool) -> ExperimentConfig {
    let dataset = DatasetConfig {
        root: data.to_path_buf(),
        ratios: [0.75, 0.125, 0.125],
        ..Default::default()
    };
    let mut cfg = if enhanced {
        ExperimentConfig::enhanced(name, dataset)
    } else {
        ExperimentConfig::baseline(name, dataset)
    };
    cfg.epochs = 200;
    cfg.model.depth = 3;
    cfg.model.base_width = 8;
    cfg.patch_size = PatchSize::Size([32, 32, 32]);
    cfg
}

fn chiasm_index(state: &TrainState) -> usize {
    state.class_names.iter().position(|c| c == "Chiasm").expect("synthetic chiasm class")
}

struct Reproduction {
    enhanced: TrainState,
    baseline: TrainState,
    outcome: Outcome,
}

fn reproduction(data: &Path, runs: &Path) -> Reproduction {
    let start = Instant::now();
    let (mut mean_at, mut chiasm_at) = (None, None);
    let enhanced = fit_with(&synthetic_config("enhanced", data, true), runs, |s| {
        let epoch = s.epoch;
        if mean_at.is_none() && s.val_curve.last().unwrap().mean_dice >= 0.90 {
            mean_at = Some(epoch);
        }
        if chiasm_at.is_none() && s.val_class_dice.last().unwrap()[chiasm_index(s)] >= 0.85 {
            chiasm_at = Some(epoch);
        }
        if mean_at.is_some() && chiasm_at.is_some() {
            EpochControl::Stop
        } else {
            EpochControl::Continue
        }
    })
    .unwrap();
    let enhanced_time = start.elapsed();

    // The baseline only needs to run until it either reaches the chiasm
    // threshold or passes the epoch at which the enhanced run did.
    let horizon = chiasm_at.unwrap_or(200);
    let mut baseline_at = None;
    let baseline = fit_with(&synthetic_config("baseline", data, false), runs, |s| {
        if s.val_class_dice.last().unwrap()[chiasm_index(s)] >= 0.85 {
            baseline_at = Some(s.epoch);
            return EpochControl::Stop;
        }
        if s.epoch >= horizon {
            EpochControl::Stop
        } else {
            EpochControl::Continue
        }
    })
    .unwrap();

    let fmt = |e: Option<usize>| e.map_or("never".to_string(), |e| format!("epoch {e}"));
    let small_ok = match (chiasm_at, baseline_at) {
        (Some(e), Some(b)) => e <= b,
        (Some(_), None) => true,
        (None, _) => false,
    };
    let detail = format!(
        "enhanced mean DICE >= 0.90 at {} in {enhanced_time:.0?}; chiasm DICE >= 0.85: enhanced {}, baseline {} (checked through epoch {})",
        fmt(mean_at),
        fmt(chiasm_at),
        fmt(baseline_at),
        baseline.epoch
    );
    Reproduction {
        enhanced,
        baseline,
        outcome: outcome(mean_at.is_some() && small_ok && enhanced_time < Duration::from_secs(1200), detail),
    }
}

fn cli(args: &[&str]) -> i32 {
    oarseg_cli::run(std::iter::once("oarseg").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn artifacts(baseline: &Path, enhanced: &Path, out: &Path) -> Outcome {
    let mut problems = Vec::new();
    for run in [baseline, enhanced] {
        let code = cli(&[
            "evaluate",
            "--config",
            s(&run.join("config.json")),
            "--checkpoint",
            s(&run.join("best.ckpt")),
            "--split",
            "test",
        ]);
        if code != 0 {
            problems.push(format!("evaluate {} exited {code}", run.display()));
        }
    }
    let code = cli(&["compare", "--baseline", s(baseline), "--enhanced", s(enhanced), "--title", "3D ResU-Net", "--out", s(out)]);
    if code != 0 {
        problems.push(format!("compare exited {code}"));
    }
    let table = std::fs::read_to_string(out.join("comparison_test.csv")).unwrap_or_default();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    let organs: Vec<&str> = rows.iter().skip(2).map(|r| r[0]).collect();
    if rows.first().map(|r| r.join(",")) != Some("3D ResU-Net,Baseline,,Enhanced,,".into())
        || rows.get(1).map(|r| r.join(",")) != Some("Organ,DICE,HD95,DICE,HD95,DICE improvement".into())
    {
        problems.push("table header".into());
    }
    if organs != ["Lung", "Spinal Cord", "Chiasm", "Overall"] {
        problems.push(format!("table rows {organs:?}"));
    }
    if rows.iter().any(|r| r.len() != 6) {
        problems.push("ragged table".into());
    }
    let dice_cells_ok = rows.iter().skip(2).all(|r| [r[1], r[3]].iter().all(|c| c.parse::<f64>().is_ok_and(|v| (0.0..=1.0).contains(&v))));
    if !dice_cells_ok {
        problems.push("DICE cells".into());
    }

    let plots = out.join("plots");
    if cli(&["plot", s(baseline), s(enhanced), "--out", s(&plots)]) != 0 {
        problems.push("plot exited nonzero".into());
    }
    let svg = std::fs::read_to_string(plots.join("curves.svg")).unwrap_or_default();
    for label in ["DICE", "Loss", "baseline", "enhanced"] {
        if !svg.contains(label) {
            problems.push(format!("curves.svg lacks {label}"));
        }
    }
    let drawn = plot_runs(&[enhanced.to_path_buf()], &out.join("plots-check")).unwrap().lr_series;
    let trace = read_lr_trace(&enhanced.join("lr_trace.csv")).unwrap();
    let series = &drawn[0].1;
    if *series != trace {
        problems.push("plotted lr series differs from lr_trace.csv".into());
    }
    let lr: Vec<f64> = series.iter().map(|p| p.1).collect();
    let peaks: Vec<f64> = (1..lr.len().saturating_sub(1)).filter(|&i| lr[i] > lr[i - 1] && lr[i] > lr[i + 1]).map(|i| lr[i]).collect();
    let troughs = (1..lr.len().saturating_sub(1)).filter(|&i| lr[i] < lr[i - 1] && lr[i] < lr[i + 1]).count();
    if peaks.len() < 2 || troughs < 1 || peaks.windows(2).any(|w| w[1] >= w[0]) {
        problems.push(format!("lr trace is not a decaying sawtooth ({} peaks)", peaks.len()));
    }
    if !plots.join("lr_enhanced.svg").is_file() || !plots.join("lr_baseline.svg").is_file() {
        problems.push("missing lr figures".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("4-row comparison table; {} lr peaks, each lower than the last", peaks.len())
        } else {
            problems.join("; ")
        },
    )
}

fn determinism(data: &Path, root: &Path) -> Outcome {
    let mut cfg = synthetic_config("repeat", data, true);
    cfg.epochs = 3;
    let a = fit(&cfg, &root.join("a")).unwrap();
    let b = fit(&cfg, &root.join("b")).unwrap();
    let read = |s: &TrainState, f: &str| std::fs::read(s.run_dir.join(f)).unwrap();
    let same_curves = read(&a, "curves.csv") == read(&b, "curves.csv");
    let same_lr = read(&a, "lr_trace.csv") == read(&b, "lr_trace.csv");
    outcome(same_curves && same_lr, format!("curves.csv identical: {same_curves}, lr_trace.csv identical: {same_lr}"))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, &SyntheticConfig::default()).unwrap();
    let runs = tmp.path().join("runs");

    let mut results: Vec<(&str, Outcome)> = vec![
        ("metric oracle suite", metric_oracle()),
        ("loss gradient suite", loss_gradients()),
        ("scheduler exactness", scheduler_exactness()),
        ("shape and gradient flow", shape_and_gradient_flow()),
    ];
    let repro = reproduction(&data, &runs);
    let (enhanced, baseline) = (repro.enhanced.run_dir.clone(), repro.baseline.run_dir.clone());
    results.push(("synthetic pipeline reproduction", repro.outcome));
    results.push(("end-to-end artifacts", artifacts(&baseline, &enhanced, &tmp.path().join("report"))));
    results.push(("determinism", determinism(&data, &tmp.path().join("repeat"))));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

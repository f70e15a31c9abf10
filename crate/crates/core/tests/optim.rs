use std::path::PathBuf;

use oarseg_core::optim::{
    ce_loss, ce_loss_grad, combined_loss, combined_loss_grad, dice_loss, dice_loss_grad, lr_at, LossConfig,
    LossShape, SchedulePolicy, SchedulerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/lr_golden.csv")
}

#[test]
fn schedule_matches_golden_trace_exactly() {
    let mut r = csv::Reader::from_path(golden_path()).unwrap();
    let headers = r.headers().unwrap().clone();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let t: u64 = rec[0].parse().unwrap();
        let step: usize = rec[1].parse().unwrap();
        let gamma: f64 = rec[2].parse().unwrap();
        for col in 3..headers.len() {
            let policy = SchedulePolicy::parse(&headers[col]).unwrap();
            let cfg = SchedulerConfig {
                step_size: step,
                gamma,
                ..SchedulerConfig::cyclic(policy)
            };
            let want: f64 = rec[col].parse().unwrap();
            assert_eq!(lr_at(&cfg, t).to_bits(), want.to_bits(), "{} at {t}", &headers[col]);
        }
        rows += 1;
    }
    assert_eq!(rows, 10_000);
}

type Kernel = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>;

/// Fraction of coordinates whose analytic gradient agrees with a central
/// difference (h = 1e-4) to relative error 1e-3.
fn agreement(f: &Kernel, x: &[f64]) -> f64 {
    let (_, grad) = f(x);
    let h = 1e-4;
    let mut ok = 0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe).0;
        probe[i] = x[i] - h;
        let down = f(&probe).0;
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let denom = fd.abs().max(grad[i].abs()).max(1e-8);
        if (fd - grad[i]).abs() / denom < 1e-3 {
            ok += 1;
        }
    }
    ok as f64 / x.len() as f64
}

#[test]
fn loss_gradients_match_finite_differences() {
    let shape = LossShape { batch: 2, classes: 3, spatial: 36 };
    let mut rng = ChaCha8Rng::seed_from_u64(2021);
    for trial in 0..5 {
        let x: Vec<f64> = (0..2 * 3 * 36).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: Vec<u8> = (0..2 * 36).map(|_| rng.random_range(0..3)).collect();
        let t1 = target.clone();
        let t2 = target.clone();
        let t3 = target.clone();
        let kernels: Vec<(&str, Kernel)> = vec![
            ("dice", Box::new(move |z| dice_loss_grad(z, shape, &t1, &LossConfig::dice_only()).unwrap())),
            ("ce", Box::new(move |z| ce_loss_grad(z, shape, &t2).unwrap())),
            ("combined", Box::new(move |z| combined_loss_grad(z, shape, &t3, &LossConfig::compound()).unwrap())),
        ];
        for (name, k) in &kernels {
            let frac = agreement(k, &x);
            assert!(frac >= 0.99, "{name} trial {trial}: {frac}");
        }
    }
}

#[test]
fn losses_are_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let shape = LossShape { batch: 1, classes: 4, spatial: 20 };
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(-6.0..6.0)).collect();
        let target: Vec<u8> = (0..20).map(|_| rng.random_range(0..4)).collect();
        let d = dice_loss(&x, shape, &target, &LossConfig::default()).unwrap();
        let c = ce_loss(&x, shape, &target).unwrap();
        let w = LossConfig::weighted(rng.random_range(0.0..2.0), rng.random_range(0.01..2.0));
        let t = combined_loss(&x, shape, &target, &w).unwrap();
        assert!((0.0..=1.0).contains(&d));
        assert!(c >= 0.0 && t >= 0.0);
    }
}

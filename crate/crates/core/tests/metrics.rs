mod common;

use common::oracles::{dice_by_sets, hd95_all_pairs, random_labels};
use ndarray::{s, Array3};
use oarseg_core::metrics::{dice_score, hd95};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spacing(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)]
}

#[test]
fn random_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let shape = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let p = random_labels(&mut rng, shape, 3);
        let r = random_labels(&mut rng, shape, 3);
        let spacing = random_spacing(&mut rng);
        for class in 1..3 {
            assert_eq!(dice_score(&p, &r, class).unwrap(), dice_by_sets(&p, &r, class));
            let got = hd95(&p, &r, class, spacing).unwrap();
            let want = hd95_all_pairs(&p, &r, class, spacing);
            match (got, want) {
                (Some(g), Some(w)) => assert!((g - w).abs() < 1e-9, "{g} vs {w}"),
                (g, w) => assert_eq!(g, w),
            }
        }
    }
}

#[test]
fn symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let p = random_labels(&mut rng, (8, 9, 10), 4);
        let r = random_labels(&mut rng, (8, 9, 10), 4);
        let spacing = random_spacing(&mut rng);
        for class in 1..4 {
            let d = dice_score(&p, &r, class).unwrap();
            assert_eq!(d, dice_score(&r, &p, class).unwrap());
            assert!((0.0..=1.0).contains(&d));
            let h = hd95(&p, &r, class, spacing).unwrap();
            assert_eq!(h, hd95(&r, &p, class, spacing).unwrap());
            assert!(h.is_none_or(|h| h >= 0.0));
        }
    }
}

#[test]
fn translation_and_spacing_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let p = random_labels(&mut rng, (8, 8, 8), 2);
        let r = random_labels(&mut rng, (8, 8, 8), 2);
        let spacing = random_spacing(&mut rng);
        // embed in a larger zero grid at two offsets so no shape touches the border
        let place = |a: &Array3<u8>, o: [usize; 3]| {
            let mut big = Array3::<u8>::zeros((14, 14, 14));
            big.slice_mut(s![o[0]..o[0] + 8, o[1]..o[1] + 8, o[2]..o[2] + 8]).assign(a);
            big
        };
        let (p1, r1) = (place(&p, [1, 1, 1]), place(&r, [1, 1, 1]));
        let (p2, r2) = (place(&p, [5, 3, 4]), place(&r, [5, 3, 4]));
        assert_eq!(dice_score(&p1, &r1, 1).unwrap(), dice_score(&p2, &r2, 1).unwrap());
        let h1 = hd95(&p1, &r1, 1, spacing).unwrap();
        let h2 = hd95(&p2, &r2, 1, spacing).unwrap();
        match (h1, h2) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
            (a, b) => assert_eq!(a, b),
        }
        let doubled = hd95(&p1, &r1, 1, spacing.map(|s| 2.0 * s)).unwrap();
        if let (Some(a), Some(b)) = (h1, doubled) {
            assert!((2.0 * a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn random_small_case_matches_oracle_per_class() {
    use oarseg_core::data::LabelMap;
    use oarseg_core::metrics::evaluate_case;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let names: Vec<String> = ["background", "a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let p = random_labels(&mut rng, (8, 8, 8), 4);
    let r = random_labels(&mut rng, (8, 8, 8), 4);
    let spacing = [1.2, 0.8, 2.5];
    let case = evaluate_case(
        &LabelMap::new(p.clone(), names.clone()).unwrap(),
        &LabelMap::new(r.clone(), names).unwrap(),
        spacing,
    )
    .unwrap();
    for (k, rec) in case.iter().enumerate() {
        let class = k as u8 + 1;
        assert_eq!(rec.dice, dice_by_sets(&p, &r, class));
        match (rec.hd95_mm, hd95_all_pairs(&p, &r, class, spacing)) {
            (Some(g), Some(w)) => assert!((g - w).abs() < 1e-9),
            (g, w) => assert_eq!(g, w),
        }
    }
}

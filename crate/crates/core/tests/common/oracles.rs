//! Brute-force reference implementations used by the test suites.
#![allow(dead_code)]

use ndarray::Array3;
use rand::Rng;

pub fn points_of(a: &Array3<u8>, class: u8) -> Vec<[usize; 3]> {
    a.indexed_iter().filter(|(_, &v)| v == class).map(|((z, y, x), _)| [z, y, x]).collect()
}

/// Dice by counting explicit coordinate sets.
pub fn dice_by_sets(p: &Array3<u8>, r: &Array3<u8>, class: u8) -> f64 {
    use std::collections::HashSet;
    let ps: HashSet<[usize; 3]> = points_of(p, class).into_iter().collect();
    let rs: HashSet<[usize; 3]> = points_of(r, class).into_iter().collect();
    if ps.is_empty() && rs.is_empty() {
        return 1.0;
    }
    2.0 * ps.intersection(&rs).count() as f64 / (ps.len() + rs.len()) as f64
}

/// Members of the class with a 6-neighbour outside the class or the grid.
pub fn surface(a: &Array3<u8>, class: u8) -> Vec<[usize; 3]> {
    let shape = a.shape();
    points_of(a, class)
        .into_iter()
        .filter(|p| {
            let offsets: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
            offsets.iter().any(|o| {
                let q: Vec<i64> = (0..3).map(|k| p[k] as i64 + o[k]).collect();
                if (0..3).any(|k| q[k] < 0 || q[k] >= shape[k] as i64) {
                    return true;
                }
                a[[q[0] as usize, q[1] as usize, q[2] as usize]] != class
            })
        })
        .collect()
}

fn nearest(from: &[usize; 3], to: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    to.iter()
        .map(|t| {
            (0..3)
                .map(|k| ((from[k] as f64 - t[k] as f64) * spacing[k]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// All-pairs symmetric HD95 with linear interpolation between order
/// statistics; `None` when either set is empty.
pub fn hd95_all_pairs(p: &Array3<u8>, r: &Array3<u8>, class: u8, spacing: [f64; 3]) -> Option<f64> {
    let (sp, sr) = (surface(p, class), surface(r, class));
    if sp.is_empty() || sr.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = sp.iter().map(|a| nearest(a, &sr, spacing)).collect();
    d.extend(sr.iter().map(|b| nearest(b, &sp, spacing)));
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = 0.95 * (d.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    Some(d[lo] + (d[hi] - d[lo]) * (rank - lo as f64))
}

/// Random label map with a few blobs plus salt noise, classes `0..classes`.
pub fn random_labels<R: Rng>(rng: &mut R, shape: (usize, usize, usize), classes: u8) -> Array3<u8> {
    let mut a = Array3::<u8>::zeros(shape);
    for c in 1..classes {
        if rng.random_bool(0.1) {
            continue;
        }
        let centre = [
            rng.random_range(0..shape.0) as f64,
            rng.random_range(0..shape.1) as f64,
            rng.random_range(0..shape.2) as f64,
        ];
        let radius = rng.random_range(0.5..5.0);
        for ((z, y, x), v) in a.indexed_iter_mut() {
            let d2 = (z as f64 - centre[0]).powi(2) + (y as f64 - centre[1]).powi(2) + (x as f64 - centre[2]).powi(2);
            if d2 <= radius * radius {
                *v = c;
            }
        }
    }
    let salt = rng.random_range(0.0..0.03);
    for v in a.iter_mut() {
        if rng.random_bool(salt) {
            *v = rng.random_range(0..classes);
        }
    }
    a
}

//! Boundary extraction and exact Euclidean distance transforms on
//! anisotropic grids.

use ndarray::{Array3, Axis, Zip};

/// Voxels in `mask` with at least one 6-neighbour outside it. The region
/// beyond the array counts as outside.
pub fn boundary(mask: &Array3<bool>) -> Array3<bool> {
    let (d, h, w) = mask.dim();
    Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        if !mask[[z, y, x]] {
            return false;
        }
        let p = [z, y, x];
        let dims = [d, h, w];
        (0..3).any(|a| {
            let lo = p[a] == 0 || {
                let mut q = p;
                q[a] -= 1;
                !mask[q]
            };
            let hi = p[a] + 1 == dims[a] || {
                let mut q = p;
                q[a] += 1;
                !mask[q]
            };
            lo || hi
        })
    })
}

/// Squared distance in mm from every voxel centre to the nearest voxel
/// where `sites` is set; infinity everywhere when there are none.
pub fn squared_distance_map(sites: &Array3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut dist = sites.mapv(|s| if s { 0.0 } else { f64::INFINITY });
    let longest = *dist.shape().iter().max().unwrap_or(&0);
    let mut scratch = LowerEnvelope::with_capacity(longest);
    for (axis, &step) in spacing.iter().enumerate() {
        for mut lane in dist.lanes_mut(Axis(axis)) {
            let input: Vec<f64> = lane.to_vec();
            scratch.transform(&input, step);
            Zip::from(&mut lane).and(&scratch.out).for_each(|o, &v| *o = v);
        }
    }
    dist
}

/// One-dimensional squared-distance transform by the lower envelope of
/// parabolas rooted at the finite samples.
struct LowerEnvelope {
    roots: Vec<usize>,
    bounds: Vec<f64>,
    out: Vec<f64>,
}

impl LowerEnvelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            roots: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
            out: Vec::with_capacity(n),
        }
    }

    fn transform(&mut self, f: &[f64], step: f64) {
        let n = f.len();
        self.roots.clear();
        self.bounds.clear();
        self.out.clear();
        let pos = |i: usize| i as f64 * step;
        let meet = |p: usize, q: usize| ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
        for q in (0..n).filter(|&q| f[q].is_finite()) {
            while let Some(&p) = self.roots.last() {
                let s = meet(p, q);
                if s <= *self.bounds.last().unwrap() {
                    self.roots.pop();
                    self.bounds.pop();
                } else {
                    self.bounds.push(s);
                    break;
                }
            }
            if self.roots.is_empty() {
                self.bounds.push(f64::NEG_INFINITY);
            }
            self.roots.push(q);
        }
        if self.roots.is_empty() {
            self.out.resize(n, f64::INFINITY);
            return;
        }
        self.bounds.push(f64::INFINITY);
        let mut k = 0;
        for i in 0..n {
            let x = pos(i);
            while self.bounds[k + 1] < x {
                k += 1;
            }
            let r = self.roots[k];
            let dx = x - pos(r);
            self.out.push(dx * dx + f[r]);
        }
    }
}

/// Percentile with linear interpolation between order statistics
/// (rank `q * (n - 1)`). `sorted` must be ascending and nonempty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let dims = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
            let spacing = [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)];
            let density = rng.random_range(0.0..0.3);
            let sites = Array3::from_shape_fn(dims, |_| rng.random_bool(density));
            let got = squared_distance_map(&sites, spacing);
            let pts: Vec<[usize; 3]> = sites.indexed_iter().filter(|(_, &s)| s).map(|((z, y, x), _)| [z, y, x]).collect();
            for ((z, y, x), &g) in got.indexed_iter() {
                let want = pts
                    .iter()
                    .map(|p| {
                        let dz = (z as f64 - p[0] as f64) * spacing[0];
                        let dy = (y as f64 - p[1] as f64) * spacing[1];
                        let dx = (x as f64 - p[2] as f64) * spacing[2];
                        dz * dz + dy * dy + dx * dx
                    })
                    .fold(f64::INFINITY, f64::min);
                if want.is_infinite() {
                    assert!(g.is_infinite());
                } else {
                    assert!((g - want).abs() < 1e-9, "{g} vs {want}");
                }
            }
        }
    }

    #[test]
    fn boundary_of_solid_cube_is_its_shell() {
        let mut m = Array3::from_elem((5, 5, 5), false);
        m.slice_mut(ndarray::s![1..4, 1..4, 1..4]).fill(true);
        let b = boundary(&m);
        assert_eq!(b.iter().filter(|&&v| v).count(), 26);
        assert!(!b[[2, 2, 2]]);
        let full = Array3::from_elem((3, 3, 3), true);
        assert_eq!(boundary(&full).iter().filter(|&&v| v).count(), 26);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&v, 0.5), 2.0);
        assert!((percentile_sorted(&v, 0.95) - 3.8).abs() < 1e-12);
        assert_eq!(percentile_sorted(&[7.0], 0.95), 7.0);
    }
}

use ndarray::{s, Array3};
use rand::Rng;

/// Zero-pads `a` at the high end of each axis up to `shape` (no-op on axes
/// already at least that long).
pub fn pad_to<T: Copy + Default>(a: &Array3<T>, shape: [usize; 3]) -> Array3<T> {
    let cur = a.shape();
    if cur[0] >= shape[0] && cur[1] >= shape[1] && cur[2] >= shape[2] {
        return a.clone();
    }
    let target = (shape[0].max(cur[0]), shape[1].max(cur[1]), shape[2].max(cur[2]));
    let mut out = Array3::from_elem(target, T::default());
    out.slice_mut(s![..cur[0], ..cur[1], ..cur[2]]).assign(a);
    out
}

pub fn extract_patch<T: Copy>(a: &Array3<T>, start: [usize; 3], size: [usize; 3]) -> Array3<T> {
    a.slice(s![
        start[0]..start[0] + size[0],
        start[1]..start[1] + size[1],
        start[2]..start[2] + size[2]
    ])
    .to_owned()
}

/// Draws a `size` patch. With probability `foreground_prob` the patch is
/// centred (as far as bounds allow) on a random labelled voxel; otherwise
/// its corner is uniform. Inputs smaller than `size` are padded first.
pub fn sample_patch<R: Rng>(
    voxels: &Array3<f32>,
    labels: &Array3<u8>,
    size: [usize; 3],
    foreground_prob: f64,
    rng: &mut R,
) -> (Array3<f32>, Array3<u8>) {
    let v = pad_to(voxels, size);
    let l = pad_to(labels, size);
    let shape = [v.shape()[0], v.shape()[1], v.shape()[2]];
    let max_start = [shape[0] - size[0], shape[1] - size[1], shape[2] - size[2]];
    let mut start = [0; 3];
    let centre = if rng.random::<f64>() < foreground_prob {
        let count = l.iter().filter(|&&x| x != 0).count();
        if count > 0 {
            let pick = rng.random_range(0..count);
            l.indexed_iter().filter(|(_, &x)| x != 0).nth(pick).map(|((z, y, x), _)| [z, y, x])
        } else {
            None
        }
    } else {
        None
    };
    for a in 0..3 {
        start[a] = match centre {
            Some(c) => c[a].saturating_sub(size[a] / 2).min(max_start[a]),
            None => rng.random_range(0..=max_start[a]),
        };
    }
    (extract_patch(&v, start, size), extract_patch(&l, start, size))
}

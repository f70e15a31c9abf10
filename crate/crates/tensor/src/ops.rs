//! Elementwise, pooling, resampling and normalization operators.

use crate::{Param, Tensor, Var};

pub fn add(a: &Var, b: &Var) -> Var {
    assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
    let mut value = a.value().clone();
    value.add_assign(b.value());
    Var::from_op(value, vec![a.clone(), b.clone()], |g, _| {
        vec![Some(g.clone()), Some(g.clone())]
    })
}

pub fn scale(a: &Var, factor: f32) -> Var {
    let value = a.value().map(|v| v * factor);
    Var::from_op(value, vec![a.clone()], move |g, _| vec![Some(g.map(|v| v * factor))])
}

/// Arithmetic mean of equally shaped values.
pub fn mean_of(values: &[Var]) -> Var {
    assert!(!values.is_empty(), "mean_of: no inputs");
    let mut acc = values[0].clone();
    for v in &values[1..] {
        acc = add(&acc, v);
    }
    if values.len() == 1 {
        acc
    } else {
        scale(&acc, 1.0 / values.len() as f32)
    }
}

pub fn relu(a: &Var) -> Var {
    let value = a.value().map(|v| v.max(0.0));
    Var::from_op(value, vec![a.clone()], |g, ps| {
        let x = ps[0].value().data();
        let data = g.data().iter().zip(x).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
        vec![Some(Tensor::new(g.shape().to_vec(), data))]
    })
}

fn sigmoid_scalar(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(a: &Var) -> Var {
    let value = a.value().map(sigmoid_scalar);
    let out = value.clone();
    Var::from_op(value, vec![a.clone()], move |g, _| {
        let data = g.data().iter().zip(out.data()).map(|(&g, &s)| g * s * (1.0 - s)).collect();
        vec![Some(Tensor::new(g.shape().to_vec(), data))]
    })
}

/// `x * sigmoid(x)`.
pub fn swish(a: &Var) -> Var {
    let value = a.value().map(|v| v * sigmoid_scalar(v));
    Var::from_op(value, vec![a.clone()], |g, ps| {
        let x = ps[0].value().data();
        let data = g
            .data()
            .iter()
            .zip(x)
            .map(|(&g, &x)| {
                let s = sigmoid_scalar(x);
                g * (s + x * s * (1.0 - s))
            })
            .collect();
        vec![Some(Tensor::new(g.shape().to_vec(), data))]
    })
}

/// Concatenates rank-5 values along the channel axis.
pub fn concat_channels(values: &[Var]) -> Var {
    assert!(!values.is_empty(), "concat_channels: no inputs");
    let [b, _, d, h, w] = values[0].value().dims5();
    let n = d * h * w;
    let channels: Vec<usize> = values
        .iter()
        .map(|v| {
            let [vb, c, vd, vh, vw] = v.value().dims5();
            assert_eq!([vb, vd, vh, vw], [b, d, h, w], "concat_channels: extent mismatch");
            c
        })
        .collect();
    let total: usize = channels.iter().sum();
    let mut data = Vec::with_capacity(b * total * n);
    for bi in 0..b {
        for (v, &c) in values.iter().zip(&channels) {
            data.extend_from_slice(&v.value().data()[bi * c * n..(bi + 1) * c * n]);
        }
    }
    let value = Tensor::new(vec![b, total, d, h, w], data);
    Var::from_op(value, values.to_vec(), move |g, _| {
        let gd = g.data();
        let mut offset = 0;
        channels
            .iter()
            .map(|&c| {
                let mut part = Vec::with_capacity(b * c * n);
                for bi in 0..b {
                    let start = (bi * total + offset) * n;
                    part.extend_from_slice(&gd[start..start + c * n]);
                }
                offset += c;
                Some(Tensor::new(vec![b, c, d, h, w], part))
            })
            .collect()
    })
}

/// Mean over the spatial axes, keeping rank 5: `[b, c, 1, 1, 1]`.
pub fn global_avg_pool(a: &Var) -> Var {
    let [b, c, d, h, w] = a.value().dims5();
    let n = d * h * w;
    let data = a
        .value()
        .data()
        .chunks(n)
        .map(|ch| ch.iter().sum::<f32>() / n as f32)
        .collect();
    let value = Tensor::new(vec![b, c, 1, 1, 1], data);
    Var::from_op(value, vec![a.clone()], move |g, _| {
        let mut out = Vec::with_capacity(b * c * n);
        for &gv in g.data() {
            out.extend(std::iter::repeat_n(gv / n as f32, n));
        }
        vec![Some(Tensor::new(vec![b, c, d, h, w], out))]
    })
}

/// Multiplies each channel of `x` by the matching entry of `gate`
/// (`[b, c, 1, 1, 1]`).
pub fn channel_gate(x: &Var, gate: &Var) -> Var {
    let [b, c, d, h, w] = x.value().dims5();
    assert_eq!(gate.shape(), &[b, c, 1, 1, 1], "channel_gate: gate shape");
    let n = d * h * w;
    let gv = gate.value().data();
    let mut data = x.value().data().to_vec();
    for (i, ch) in data.chunks_mut(n).enumerate() {
        ch.iter_mut().for_each(|v| *v *= gv[i]);
    }
    let value = Tensor::new(vec![b, c, d, h, w], data);
    Var::from_op(value, vec![x.clone(), gate.clone()], move |g, ps| {
        let xv = ps[0].value().data();
        let gate = ps[1].value().data();
        let gd = g.data();
        let mut dx = gd.to_vec();
        let mut dgate = vec![0f32; b * c];
        for (i, ch) in dx.chunks_mut(n).enumerate() {
            ch.iter_mut().for_each(|v| *v *= gate[i]);
            dgate[i] = gd[i * n..(i + 1) * n]
                .iter()
                .zip(&xv[i * n..(i + 1) * n])
                .map(|(a, b)| a * b)
                .sum();
        }
        vec![
            Some(Tensor::new(vec![b, c, d, h, w], dx)),
            Some(Tensor::new(vec![b, c, 1, 1, 1], dgate)),
        ]
    })
}

/// Non-overlapping max pooling; every extent must be divisible by `factor`.
pub fn max_pool(a: &Var, factor: [usize; 3]) -> Var {
    let [b, c, d, h, w] = a.value().dims5();
    assert!(
        d % factor[0] == 0 && h % factor[1] == 0 && w % factor[2] == 0,
        "max_pool: extent {:?} not divisible by {factor:?}",
        [d, h, w]
    );
    let (od, oh, ow) = (d / factor[0], h / factor[1], w / factor[2]);
    let n_in = d * h * w;
    let n_out = od * oh * ow;
    let x = a.value().data();
    let mut out = vec![f32::NEG_INFINITY; b * c * n_out];
    let mut arg = vec![0u32; b * c * n_out];
    for bc in 0..b * c {
        let src = &x[bc * n_in..(bc + 1) * n_in];
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let i = (z * h + y) * w + xx;
                    let o = bc * n_out + ((z / factor[0]) * oh + y / factor[1]) * ow + xx / factor[2];
                    if src[i] > out[o] {
                        out[o] = src[i];
                        arg[o] = i as u32;
                    }
                }
            }
        }
    }
    let value = Tensor::new(vec![b, c, od, oh, ow], out);
    Var::from_op(value, vec![a.clone()], move |g, _| {
        let mut dx = vec![0f32; b * c * n_in];
        for (o, &gv) in g.data().iter().enumerate() {
            let bc = o / n_out;
            dx[bc * n_in + arg[o] as usize] += gv;
        }
        vec![Some(Tensor::new(vec![b, c, d, h, w], dx))]
    })
}

/// Nearest-neighbour upsampling by an integer factor per axis.
pub fn upsample_nearest(a: &Var, factor: [usize; 3]) -> Var {
    let [b, c, d, h, w] = a.value().dims5();
    let (od, oh, ow) = (d * factor[0], h * factor[1], w * factor[2]);
    let n_in = d * h * w;
    let n_out = od * oh * ow;
    let x = a.value().data();
    let mut out = vec![0f32; b * c * n_out];
    for bc in 0..b * c {
        for z in 0..od {
            for y in 0..oh {
                let src = &x[bc * n_in + ((z / factor[0]) * h + y / factor[1]) * w..];
                let dst = &mut out[bc * n_out + (z * oh + y) * ow..bc * n_out + (z * oh + y + 1) * ow];
                for (xx, v) in dst.iter_mut().enumerate() {
                    *v = src[xx / factor[2]];
                }
            }
        }
    }
    let value = Tensor::new(vec![b, c, od, oh, ow], out);
    Var::from_op(value, vec![a.clone()], move |g, _| {
        let gd = g.data();
        let mut dx = vec![0f32; b * c * n_in];
        for bc in 0..b * c {
            for z in 0..od {
                for y in 0..oh {
                    let dst = bc * n_in + ((z / factor[0]) * h + y / factor[1]) * w;
                    let src = &gd[bc * n_out + (z * oh + y) * ow..bc * n_out + (z * oh + y + 1) * ow];
                    for (xx, &v) in src.iter().enumerate() {
                        dx[dst + xx / factor[2]] += v;
                    }
                }
            }
        }
        vec![Some(Tensor::new(vec![b, c, d, h, w], dx))]
    })
}

/// Forward quantities kept for the normalization backward pass: the
/// normalized input and one inverse standard deviation per group.
struct NormCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

/// Per-sample, per-channel normalization over the spatial axes, followed by
/// a per-channel affine transform.
pub fn instance_norm(x: &Var, gamma: &Var, beta: &Var, eps: f32) -> Var {
    let [b, c, d, h, w] = x.value().dims5();
    assert_eq!(gamma.shape(), &[c]);
    assert_eq!(beta.shape(), &[c]);
    let n = d * h * w;
    let xv = x.value().data();
    let gv = gamma.value().data();
    let bv = beta.value().data();
    let mut cache = NormCache {
        xhat: vec![0f32; xv.len()],
        inv_std: vec![0f32; b * c],
    };
    let mut out = vec![0f32; xv.len()];
    for bc in 0..b * c {
        let src = &xv[bc * n..(bc + 1) * n];
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        cache.inv_std[bc] = inv as f32;
        let ch = bc % c;
        for i in 0..n {
            let xh = ((src[i] as f64 - mean) * inv) as f32;
            cache.xhat[bc * n + i] = xh;
            out[bc * n + i] = gv[ch] * xh + bv[ch];
        }
    }
    let value = Tensor::new(vec![b, c, d, h, w], out);
    Var::from_op(value, vec![x.clone(), gamma.clone(), beta.clone()], move |g, ps| {
        let gd = g.data();
        let gamma = ps[1].value().data();
        let mut dx = vec![0f32; gd.len()];
        let mut dgamma = vec![0f32; c];
        let mut dbeta = vec![0f32; c];
        for bc in 0..b * c {
            let ch = bc % c;
            let gy = &gd[bc * n..(bc + 1) * n];
            let xh = &cache.xhat[bc * n..(bc + 1) * n];
            let mut sum_g = 0f64;
            let mut sum_gx = 0f64;
            for i in 0..n {
                sum_g += gy[i] as f64;
                sum_gx += (gy[i] * xh[i]) as f64;
            }
            dgamma[ch] += sum_gx as f32;
            dbeta[ch] += sum_g as f32;
            let k = gamma[ch] as f64 * cache.inv_std[bc] as f64 / n as f64;
            for i in 0..n {
                dx[bc * n + i] =
                    (k * (n as f64 * gy[i] as f64 - sum_g - xh[i] as f64 * sum_gx)) as f32;
            }
        }
        vec![
            Some(Tensor::new(vec![b, c, d, h, w], dx)),
            Some(Tensor::new(vec![c], dgamma)),
            Some(Tensor::new(vec![c], dbeta)),
        ]
    })
}

/// Running statistics of a batch normalization layer.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Param,
    pub var: Param,
    pub momentum: f32,
}

/// Batch normalization. In training mode statistics come from the batch
/// (over batch and spatial axes) and the running estimates are updated;
/// otherwise the running estimates are used.
pub fn batch_norm(x: &Var, gamma: &Var, beta: &Var, stats: &NormStats, training: bool, eps: f32) -> Var {
    let [b, c, d, h, w] = x.value().dims5();
    let n = d * h * w;
    let count = b * n;
    let xv = x.value().data();
    let gv = gamma.value().data().to_vec();
    let bv = beta.value().data();
    let (mean, var): (Vec<f64>, Vec<f64>) = if training {
        let mut mean = vec![0f64; c];
        let mut var = vec![0f64; c];
        for bc in 0..b * c {
            mean[bc % c] += xv[bc * n..(bc + 1) * n].iter().map(|&v| v as f64).sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for bc in 0..b * c {
            let m = mean[bc % c];
            var[bc % c] += xv[bc * n..(bc + 1) * n].iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let mom = stats.momentum;
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        stats.mean.update(|rm, _| {
            for (r, &m) in rm.data_mut().iter_mut().zip(&mean) {
                *r = (1.0 - mom) * *r + mom * m as f32;
            }
        });
        stats.var.update(|rv, _| {
            for (r, &v) in rv.data_mut().iter_mut().zip(&var) {
                *r = (1.0 - mom) * *r + mom * (v * unbias) as f32;
            }
        });
        (mean, var)
    } else {
        let m = stats.mean.value().data().iter().map(|&v| v as f64).collect();
        let v = stats.var.value().data().iter().map(|&v| v as f64).collect();
        (m, v)
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps as f64).sqrt()).collect();
    let mut xhat = vec![0f32; xv.len()];
    let mut out = vec![0f32; xv.len()];
    for bc in 0..b * c {
        let ch = bc % c;
        for i in bc * n..(bc + 1) * n {
            let xh = ((xv[i] as f64 - mean[ch]) * inv_std[ch]) as f32;
            xhat[i] = xh;
            out[i] = gv[ch] * xh + bv[ch];
        }
    }
    let value = Tensor::new(vec![b, c, d, h, w], out);
    Var::from_op(value, vec![x.clone(), gamma.clone(), beta.clone()], move |g, ps| {
        let gd = g.data();
        let gamma = ps[1].value().data();
        let mut sum_g = vec![0f64; c];
        let mut sum_gx = vec![0f64; c];
        for bc in 0..b * c {
            let ch = bc % c;
            for i in bc * n..(bc + 1) * n {
                sum_g[ch] += gd[i] as f64;
                sum_gx[ch] += (gd[i] * xhat[i]) as f64;
            }
        }
        let mut dx = vec![0f32; gd.len()];
        for bc in 0..b * c {
            let ch = bc % c;
            let k = gamma[ch] as f64 * inv_std[ch];
            for i in bc * n..(bc + 1) * n {
                dx[i] = if training {
                    (k / count as f64 * (count as f64 * gd[i] as f64 - sum_g[ch] - xhat[i] as f64 * sum_gx[ch])) as f32
                } else {
                    (k * gd[i] as f64) as f32
                };
            }
        }
        vec![
            Some(Tensor::new(vec![b, c, d, h, w], dx)),
            Some(Tensor::new(vec![c], sum_gx.iter().map(|&v| v as f32).collect())),
            Some(Tensor::new(vec![c], sum_g.iter().map(|&v| v as f32).collect())),
        ]
    })
}

//! Convolution over rank-5 tensors via im2col and sgemm.

use crate::{Tensor, Var};

/// Upper bound on im2col buffer size, in elements. Larger outputs are
/// processed in bands of output rows.
const COL_BUDGET: usize = 1 << 24;

/// Kernel size, stride, zero padding, dilation and grouping per spatial
/// axis `[depth, height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
    pub groups: usize,
}

impl ConvGeometry {
    /// Stride-1 convolution with "same" padding.
    pub fn same(kernel: [usize; 3], dilation: [usize; 3]) -> Self {
        let padding = [
            dilation[0] * (kernel[0] - 1) / 2,
            dilation[1] * (kernel[1] - 1) / 2,
            dilation[2] * (kernel[2] - 1) / 2,
        ];
        Self {
            kernel,
            stride: [1; 3],
            padding,
            dilation,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_extent(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
            let padded = input[a] + 2 * self.padding[a];
            if padded < span {
                return None;
            }
            out[a] = (padded - span) / self.stride[a] + 1;
        }
        Some(out)
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.padding == [0; 3]
    }
}

/// Dimensions shared by im2col and col2im for one group of one sample.
struct Layout {
    geom: ConvGeometry,
    input: [usize; 3],
    output: [usize; 3],
    channels: usize,
}

impl Layout {
    fn rows(&self) -> usize {
        self.channels * self.geom.taps()
    }

    /// Visits every (column buffer row, input channel, kernel offset) triple.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, [usize; 3])) {
        let [kd, kh, kw] = self.geom.kernel;
        let mut r = 0;
        for c in 0..self.channels {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        f(r, c, [kz, ky, kx]);
                        r += 1;
                    }
                }
            }
        }
    }

    /// Range of output x positions whose input x lies inside the image.
    fn valid_x(&self, kx: usize) -> (usize, usize) {
        let g = &self.geom;
        let offset = (kx * g.dilation[2]) as isize - g.padding[2] as isize;
        let w = self.input[2] as isize;
        let s = g.stride[2] as isize;
        let wo = self.output[2] as isize;
        // smallest ox with ox*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        // largest ox with ox*s + offset <= w-1
        let hi = if w - 1 - offset < 0 { -1 } else { (w - 1 - offset) / s };
        let lo = lo.clamp(0, wo);
        let hi = (hi + 1).clamp(lo, wo);
        (lo as usize, hi as usize)
    }

    /// Input (z, y) for output row `(oz, oy)` and kernel offset, if inside.
    fn input_row(&self, oz: usize, oy: usize, k: [usize; 3]) -> Option<(usize, usize)> {
        let g = &self.geom;
        let iz = (oz * g.stride[0] + k[0] * g.dilation[0]) as isize - g.padding[0] as isize;
        let iy = (oy * g.stride[1] + k[1] * g.dilation[1]) as isize - g.padding[1] as isize;
        if iz < 0 || iy < 0 || iz >= self.input[0] as isize || iy >= self.input[1] as isize {
            None
        } else {
            Some((iz as usize, iy as usize))
        }
    }

    /// Fills `col` (`rows x band_len`) for output rows `[row0, row1)`, where an
    /// output row is one `(oz, oy)` pair.
    fn im2col(&self, x: &[f32], row0: usize, row1: usize, col: &mut [f32]) {
        let [_, h, w] = self.input;
        let [_, ho, wo] = self.output;
        let band = (row1 - row0) * wo;
        let sx = self.geom.stride[2];
        let dx = self.geom.dilation[2];
        let px = self.geom.padding[2];
        self.for_each_row(|r, c, k| {
            let (lo, hi) = self.valid_x(k[2]);
            let dst_row = &mut col[r * band..(r + 1) * band];
            let plane = &x[c * self.input[0] * h * w..];
            for orow in row0..row1 {
                let (oz, oy) = (orow / ho, orow % ho);
                let dst = &mut dst_row[(orow - row0) * wo..(orow - row0 + 1) * wo];
                match self.input_row(oz, oy, k) {
                    None => dst.fill(0.0),
                    Some((iz, iy)) => {
                        let src = &plane[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        if lo < hi {
                            let ix0 = lo * sx + k[2] * dx - px;
                            if sx == 1 {
                                dst[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                            } else {
                                for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                                    *d = src[ix0 + j * sx];
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    /// Adjoint of [`Layout::im2col`]: scatters `col` back into `dx`.
    fn col2im(&self, col: &[f32], row0: usize, row1: usize, dx: &mut [f32]) {
        let [_, h, w] = self.input;
        let [_, ho, wo] = self.output;
        let band = (row1 - row0) * wo;
        let sx = self.geom.stride[2];
        let dxl = self.geom.dilation[2];
        let px = self.geom.padding[2];
        let plane_len = self.input[0] * h * w;
        self.for_each_row(|r, c, k| {
            let (lo, hi) = self.valid_x(k[2]);
            if lo >= hi {
                return;
            }
            let src_row = &col[r * band..(r + 1) * band];
            let plane = &mut dx[c * plane_len..(c + 1) * plane_len];
            for orow in row0..row1 {
                let (oz, oy) = (orow / ho, orow % ho);
                if let Some((iz, iy)) = self.input_row(oz, oy, k) {
                    let src = &src_row[(orow - row0) * wo..(orow - row0 + 1) * wo];
                    let dst = &mut plane[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                    let ix0 = lo * sx + k[2] * dxl - px;
                    for (j, s) in src[lo..hi].iter().enumerate() {
                        dst[ix0 + j * sx] += s;
                    }
                }
            }
        });
    }

    fn band_rows(&self) -> usize {
        let per_row = self.rows() * self.output[2];
        (COL_BUDGET / per_row.max(1)).max(1)
    }
}

/// `C[m x n] = alpha * A[m x k] * B[k x n] + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    beta: f32,
    c: &mut [f32],
    c_strides: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // Bounds: every addressed element must lie inside its slice.
    let last = |rows: usize, cols: usize, s: (isize, isize)| {
        (rows as isize - 1) * s.0 + (cols as isize - 1) * s.1
    };
    if k > 0 {
        assert!((last(m, k, a_strides) as usize) < a.len());
        assert!((last(k, n, b_strides) as usize) < b.len());
    }
    assert!((last(m, n, c_strides) as usize) < c.len());
    // SAFETY: the asserts above bound every index reached through the given
    // strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_strides.0,
            c_strides.1,
        );
    }
}

/// N-d convolution. `x` is `[b, cin, d, h, w]`, `weight` is
/// `[cout, cin / groups, kd, kh, kw]`, `bias` is `[cout]`.
pub fn conv(x: &Var, weight: &Var, bias: Option<&Var>, geom: ConvGeometry) -> Var {
    let [b, cin, d, h, w] = x.value().dims5();
    let [cout, cin_g, kd, kh, kw] = weight.value().dims5();
    assert_eq!([kd, kh, kw], geom.kernel, "weight kernel does not match geometry");
    assert_eq!(cin % geom.groups, 0, "channels not divisible by groups");
    assert_eq!(cout % geom.groups, 0, "channels not divisible by groups");
    assert_eq!(cin / geom.groups, cin_g, "weight input channels mismatch");
    let out = geom
        .output_extent([d, h, w])
        .unwrap_or_else(|| panic!("input {:?} too small for {geom:?}", [d, h, w]));
    let layout = Layout {
        geom,
        input: [d, h, w],
        output: out,
        channels: cin_g,
    };
    let groups = geom.groups;
    let cout_g = cout / groups;
    let k = layout.rows();
    let n_out: usize = out.iter().product();
    let n_in = d * h * w;
    let n_rows = out[0] * out[1];
    let band_rows = layout.band_rows();

    let xv = x.value().data();
    let wv = weight.value().data();
    let mut y = vec![0f32; b * cout * n_out];
    let mut col = Vec::new();
    for bi in 0..b {
        for g in 0..groups {
            let xg = &xv[(bi * cin + g * cin_g) * n_in..(bi * cin + (g + 1) * cin_g) * n_in];
            let wg = &wv[g * cout_g * k..(g + 1) * cout_g * k];
            let yg = &mut y[(bi * cout + g * cout_g) * n_out..(bi * cout + (g + 1) * cout_g) * n_out];
            if geom.is_pointwise() {
                gemm(cout_g, k, n_out, wg, (k as isize, 1), xg, (n_in as isize, 1), 0.0, yg, (n_out as isize, 1));
                continue;
            }
            let mut row0 = 0;
            while row0 < n_rows {
                let row1 = (row0 + band_rows).min(n_rows);
                let band = (row1 - row0) * out[2];
                col.resize(k * band, 0.0);
                layout.im2col(xg, row0, row1, &mut col);
                let off = row0 * out[2];
                gemm(cout_g, k, band, wg, (k as isize, 1), &col, (band as isize, 1), 0.0, &mut yg[off..], (n_out as isize, 1));
                row0 = row1;
            }
        }
    }
    if let Some(bias) = bias {
        let bv = bias.value().data();
        assert_eq!(bv.len(), cout);
        for (i, chunk) in y.chunks_mut(n_out).enumerate() {
            let bc = bv[i % cout];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
    }
    let value = Tensor::new(vec![b, cout, out[0], out[1], out[2]], y);
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    Var::from_op(value, parents, move |gy, ps| {
        let gy = gy.data();
        let xv = ps[0].value().data();
        let wv = ps[1].value().data();
        let need_dx = ps[0].requires_grad();
        let need_dw = ps[1].requires_grad();
        let mut dx = need_dx.then(|| vec![0f32; b * cin * n_in]);
        let mut dw = need_dw.then(|| vec![0f32; wv.len()]);
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for bi in 0..b {
            for g in 0..groups {
                let xg = &xv[(bi * cin + g * cin_g) * n_in..(bi * cin + (g + 1) * cin_g) * n_in];
                let wg = &wv[g * cout_g * k..(g + 1) * cout_g * k];
                let gyg = &gy[(bi * cout + g * cout_g) * n_out..(bi * cout + (g + 1) * cout_g) * n_out];
                if layout.geom.is_pointwise() {
                    if let Some(dw) = dw.as_mut() {
                        let dwg = &mut dw[g * cout_g * k..(g + 1) * cout_g * k];
                        gemm(cout_g, n_out, k, gyg, (n_out as isize, 1), xg, (1, n_in as isize), 1.0, dwg, (k as isize, 1));
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxg = &mut dx[(bi * cin + g * cin_g) * n_in..(bi * cin + (g + 1) * cin_g) * n_in];
                        gemm(k, cout_g, n_out, wg, (1, k as isize), gyg, (n_out as isize, 1), 1.0, dxg, (n_in as isize, 1));
                    }
                    continue;
                }
                let mut row0 = 0;
                while row0 < n_rows {
                    let row1 = (row0 + band_rows).min(n_rows);
                    let band = (row1 - row0) * out[2];
                    let off = row0 * out[2];
                    if let Some(dw) = dw.as_mut() {
                        col.resize(k * band, 0.0);
                        layout.im2col(xg, row0, row1, &mut col);
                        let dwg = &mut dw[g * cout_g * k..(g + 1) * cout_g * k];
                        gemm(cout_g, band, k, &gyg[off..], (n_out as isize, 1), &col, (1, band as isize), 1.0, dwg, (k as isize, 1));
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcol.resize(k * band, 0.0);
                        gemm(k, cout_g, band, wg, (1, k as isize), &gyg[off..], (n_out as isize, 1), 0.0, &mut dcol, (band as isize, 1));
                        let dxg = &mut dx[(bi * cin + g * cin_g) * n_in..(bi * cin + (g + 1) * cin_g) * n_in];
                        layout.col2im(&dcol, row0, row1, dxg);
                    }
                    row0 = row1;
                }
            }
        }
        let mut grads = vec![
            dx.map(|v| Tensor::new(vec![b, cin, d, h, w], v)),
            dw.map(|d| Tensor::new(vec![cout, cin_g, kd, kh, kw], d)),
        ];
        if ps.len() == 3 {
            let mut db = vec![0f32; cout];
            for (i, chunk) in gy.chunks(n_out).enumerate() {
                db[i % cout] += chunk.iter().sum::<f32>();
            }
            grads.push(Some(Tensor::new(vec![cout], db)));
        }
        grads
    })
}

/// Transposed convolution with kernel equal to stride (non-overlapping
/// upsampling). `weight` is `[cin, cout, fd, fh, fw]`, `bias` is `[cout]`.
pub fn conv_transpose_up(x: &Var, weight: &Var, bias: Option<&Var>, factor: [usize; 3]) -> Var {
    let [b, cin, d, h, w] = x.value().dims5();
    let [wcin, cout, fd, fh, fw] = weight.value().dims5();
    assert_eq!(wcin, cin, "transposed conv input channels mismatch");
    assert_eq!([fd, fh, fw], factor, "transposed conv kernel must equal factor");
    let taps = fd * fh * fw;
    let m = cout * taps;
    let n = d * h * w;
    let (od, oh, ow) = (d * fd, h * fh, w * fw);
    let n_out = od * oh * ow;
    let xv = x.value().data();
    let wv = weight.value().data();
    let mut y = vec![0f32; b * cout * n_out];
    let mut cols = vec![0f32; m * n];
    for bi in 0..b {
        let xb = &xv[bi * cin * n..(bi + 1) * cin * n];
        gemm(m, cin, n, wv, (1, m as isize), xb, (n as isize, 1), 0.0, &mut cols, (n as isize, 1));
        let yb = &mut y[bi * cout * n_out..(bi + 1) * cout * n_out];
        scatter_up(&cols, yb, cout, [d, h, w], factor, |dst, src| *dst = src);
    }
    if let Some(bias) = bias {
        let bv = bias.value().data();
        for (i, chunk) in y.chunks_mut(n_out).enumerate() {
            let bc = bv[i % cout];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
    }
    let value = Tensor::new(vec![b, cout, od, oh, ow], y);
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    Var::from_op(value, parents, move |gy, ps| {
        let gy = gy.data();
        let xv = ps[0].value().data();
        let wv = ps[1].value().data();
        let mut dx = ps[0].requires_grad().then(|| vec![0f32; b * cin * n]);
        let mut dw = ps[1].requires_grad().then(|| vec![0f32; wv.len()]);
        let mut gcols = vec![0f32; m * n];
        for bi in 0..b {
            let gyb = &gy[bi * cout * n_out..(bi + 1) * cout * n_out];
            gather_up(gyb, &mut gcols, cout, [d, h, w], factor);
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[bi * cin * n..(bi + 1) * cin * n];
                gemm(cin, m, n, wv, (m as isize, 1), &gcols, (n as isize, 1), 0.0, dxb, (n as isize, 1));
            }
            if let Some(dw) = dw.as_mut() {
                let xb = &xv[bi * cin * n..(bi + 1) * cin * n];
                gemm(cin, n, m, xb, (n as isize, 1), &gcols, (1, n as isize), 1.0, dw, (m as isize, 1));
            }
        }
        let mut grads = vec![
            dx.map(|v| Tensor::new(vec![b, cin, d, h, w], v)),
            dw.map(|v| Tensor::new(vec![cin, cout, fd, fh, fw], v)),
        ];
        if ps.len() == 3 {
            let mut db = vec![0f32; cout];
            for (i, chunk) in gy.chunks(n_out).enumerate() {
                db[i % cout] += chunk.iter().sum::<f32>();
            }
            grads.push(Some(Tensor::new(vec![cout], db)));
        }
        grads
    })
}

/// Writes `cols[(c*taps + tap) x n]` into the upsampled `[c, D, H, W]` block.
fn scatter_up(
    cols: &[f32],
    out: &mut [f32],
    channels: usize,
    input: [usize; 3],
    f: [usize; 3],
    op: impl Fn(&mut f32, f32),
) {
    let [d, h, w] = input;
    let (oh, ow) = (h * f[1], w * f[2]);
    let od = d * f[0];
    let n = d * h * w;
    let taps = f[0] * f[1] * f[2];
    for c in 0..channels {
        for a in 0..f[0] {
            for bb in 0..f[1] {
                for cc in 0..f[2] {
                    let tap = (a * f[1] + bb) * f[2] + cc;
                    let src = &cols[(c * taps + tap) * n..(c * taps + tap + 1) * n];
                    let dst = &mut out[c * od * oh * ow..(c + 1) * od * oh * ow];
                    for z in 0..d {
                        for y in 0..h {
                            let row = ((z * f[0] + a) * oh + y * f[1] + bb) * ow + cc;
                            let s = &src[(z * h + y) * w..(z * h + y + 1) * w];
                            for (x, &v) in s.iter().enumerate() {
                                op(&mut dst[row + x * f[2]], v);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`scatter_up`].
fn gather_up(up: &[f32], cols: &mut [f32], channels: usize, input: [usize; 3], f: [usize; 3]) {
    let [d, h, w] = input;
    let (oh, ow) = (h * f[1], w * f[2]);
    let od = d * f[0];
    let n = d * h * w;
    let taps = f[0] * f[1] * f[2];
    for c in 0..channels {
        for a in 0..f[0] {
            for bb in 0..f[1] {
                for cc in 0..f[2] {
                    let tap = (a * f[1] + bb) * f[2] + cc;
                    let dst = &mut cols[(c * taps + tap) * n..(c * taps + tap + 1) * n];
                    let src = &up[c * od * oh * ow..(c + 1) * od * oh * ow];
                    for z in 0..d {
                        for y in 0..h {
                            let row = ((z * f[0] + a) * oh + y * f[1] + bb) * ow + cc;
                            let dr = &mut dst[(z * h + y) * w..(z * h + y + 1) * w];
                            for (x, v) in dr.iter_mut().enumerate() {
                                *v = src[row + x * f[2]];
                            }
                        }
                    }
                }
            }
        }
    }
}

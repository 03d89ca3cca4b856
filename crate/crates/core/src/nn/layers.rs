//! Batched layer kernels over row-major `[batch, ...]` buffers.
//!
//! Convolutions lower each sample to an im2col matrix of shape
//! `[c*k*k, oh*ow]` and multiply it with `dgemm`.

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// `c = beta * c + op(a) * op(b)` with `op(a)` of shape `m x k` and `op(b)` of
/// shape `k x n`. A transposed operand is stored in its untransposed
/// row-major layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices cover the m*k, k*n and m*n extents addressed by the
    // strides above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub filters: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.filters * self.oh * self.ow
    }
}

/// Output columns `[lo, hi)` of a kernel offset whose input index lies in
/// `0..w`, for stride 1.
fn valid_span(out: usize, len: usize, off: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(off).min(out);
    let hi = (len + pad).saturating_sub(off).min(out).max(lo);
    (lo, hi)
}

/// Writes the `[c*k*k, oh*ow]` columns of one sample into `col`, overwriting
/// every entry.
fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let ohw = g.col_cols();
    let mut row = 0;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(g.ow, g.w, kj, g.pad);
                        line[..lo].fill(0.0);
                        line[lo..hi].copy_from_slice(&src[lo + kj - g.pad..hi + kj - g.pad]);
                        line[hi..].fill(0.0);
                        continue;
                    }
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adds the columns of one sample back onto the input positions they came from.
fn col2im(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    let ohw = g.col_cols();
    let mut row = 0;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let src = &col[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(g.ow, g.w, kj, g.pad);
                        for (d, &v) in dst[lo + kj - g.pad..hi + kj - g.pad]
                            .iter_mut()
                            .zip(&line[lo..hi])
                        {
                            *d += v;
                        }
                        continue;
                    }
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let ohw = g.col_cols();
    let mut col = vec![0.0; g.col_rows() * ohw];
    let mut out = vec![0.0; batch * g.out_len()];
    for (xs, ys) in x
        .chunks_exact(g.in_len())
        .zip(out.chunks_exact_mut(g.out_len()))
    {
        im2col(g, xs, &mut col);
        gemm(
            g.filters,
            g.col_rows(),
            ohw,
            weight,
            false,
            &col,
            false,
            0.0,
            ys,
        );
        if let Some(bias) = bias {
            for (plane, &bv) in ys.chunks_exact_mut(ohw).zip(bias) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Returns `(dx, dweight, dbias)`; gradients that were not requested are empty.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    need_params: bool,
    need_input: bool,
    has_bias: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ohw = g.col_cols();
    let rows = g.col_rows();
    let mut dx = Vec::new();
    let mut dw = Vec::new();
    let mut db = Vec::new();
    let mut col = vec![0.0; rows * ohw];
    if need_params {
        dw = vec![0.0; g.filters * rows];
        if has_bias {
            db = vec![0.0; g.filters];
        }
        for (xs, dys) in x
            .chunks_exact(g.in_len())
            .zip(dout.chunks_exact(g.out_len()))
            .take(batch)
        {
            im2col(g, xs, &mut col);
            gemm(g.filters, ohw, rows, dys, false, &col, true, 1.0, &mut dw);
            if has_bias {
                for (d, plane) in db.iter_mut().zip(dys.chunks_exact(ohw)) {
                    *d += plane.iter().sum::<f64>();
                }
            }
        }
    }
    if need_input {
        dx = vec![0.0; batch * g.in_len()];
        for (dxs, dys) in dx
            .chunks_exact_mut(g.in_len())
            .zip(dout.chunks_exact(g.out_len()))
        {
            gemm(
                rows, g.filters, ohw, weight, true, dys, false, 0.0, &mut col,
            );
            col2im(g, &col, dxs);
        }
    }
    (dx, dw, db)
}

pub(crate) fn fc_forward(
    batch: usize,
    inp: usize,
    out: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(bias);
    }
    gemm(batch, inp, out, x, false, weight, true, 1.0, &mut y);
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fc_backward(
    batch: usize,
    inp: usize,
    out: usize,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    need_params: bool,
    need_input: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = Vec::new();
    let mut dw = Vec::new();
    let mut db = Vec::new();
    if need_params {
        dw = vec![0.0; out * inp];
        gemm(out, batch, inp, dy, true, x, false, 0.0, &mut dw);
        db = vec![0.0; out];
        for row in dy.chunks_exact(out) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
    }
    if need_input {
        dx = vec![0.0; batch * inp];
        gemm(batch, out, inp, dy, false, weight, false, 0.0, &mut dx);
    }
    (dx, dw, db)
}

/// Max pooling with a `size` window and stride; returns output and the flat
/// input index of each selected maximum.
pub(crate) fn maxpool_forward(
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
    x: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * w + ox * size + dx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub(crate) fn avgpool_forward(
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
    x: &[f64],
) -> Vec<f64> {
    let (oh, ow) = (h / size, w / size);
    let norm = 1.0 / (size * size) as f64;
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..size {
                    let start = base + (oy * size + dy) * w + ox * size;
                    s += x[start..start + size].iter().sum::<f64>();
                }
                out.push(s * norm);
            }
        }
    }
    out
}

pub(crate) fn avgpool_backward(
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
    dy: &[f64],
) -> Vec<f64> {
    let (oh, ow) = (h / size, w / size);
    let norm = 1.0 / (size * size) as f64;
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy[(p * oh + oy) * ow + ox] * norm;
                for ddy in 0..size {
                    let start = base + (oy * size + ddy) * w + ox * size;
                    dx[start..start + size].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}

/// Per-channel batch normalization over `[batch, channels, spatial]`.
pub(crate) struct BnForward {
    pub y: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Batch mean and unbiased variance, present in training mode.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_forward(
    batch: usize,
    channels: usize,
    spatial: usize,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
) -> BnForward {
    let m = (batch * spatial) as f64;
    let (mean, var, stats) = match running {
        Some((rm, rv)) => (rm.to_vec(), rv.to_vec(), None),
        None => {
            let mut mean = vec![0.0; channels];
            let mut var = vec![0.0; channels];
            for b in 0..batch {
                for c in 0..channels {
                    let s = &x[(b * channels + c) * spatial..(b * channels + c + 1) * spatial];
                    mean[c] += s.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for b in 0..batch {
                for c in 0..channels {
                    let s = &x[(b * channels + c) * spatial..(b * channels + c + 1) * spatial];
                    var[c] += s.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            let unbiased: Vec<f64> = if m > 1.0 {
                var.iter().map(|v| v * m / (m - 1.0)).collect()
            } else {
                var.clone()
            };
            (mean.clone(), var, Some((mean, unbiased)))
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            for i in off..off + spatial {
                xhat[i] = (x[i] - mean[c]) * inv_std[c];
                y[i] = gamma[c] * xhat[i] + beta[c];
            }
        }
    }
    BnForward {
        y,
        xhat,
        inv_std,
        batch_stats: stats,
    }
}

/// Returns `(dx, dgamma, dbeta)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_backward(
    batch: usize,
    channels: usize,
    spatial: usize,
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    dy: &[f64],
    used_batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (batch * spatial) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            for i in off..off + spatial {
                dgamma[c] += dy[i] * xhat[i];
                dbeta[c] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            let k = gamma[c] * inv_std[c];
            for i in off..off + spatial {
                dx[i] = if used_batch_stats {
                    k * (dy[i] - dbeta[c] / m - xhat[i] * dgamma[c] / m)
                } else {
                    k * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let expect = naive_matmul(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_matches_direct_loop() {
        let g = ConvGeom {
            c: 2,
            h: 5,
            w: 4,
            filters: 3,
            k: 3,
            stride: 2,
            pad: 1,
            oh: 3,
            ow: 2,
        };
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64 * 0.37).cos()).collect();
        let wt: Vec<f64> = (0..g.filters * g.col_rows())
            .map(|i| (i as f64 * 0.11).sin())
            .collect();
        let out = conv_forward(&g, 1, &x, &wt, Some(&[0.1, 0.2, 0.3]));
        for f in 0..3 {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut s = [0.1, 0.2, 0.3][f];
                    for ci in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if (0..5).contains(&iy) && (0..4).contains(&ix) {
                                    s += wt[((f * 2 + ci) * 3 + ki) * 3 + kj]
                                        * x[(ci * 5 + iy as usize) * 4 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((out[(f * g.oh + oy) * g.ow + ox] - s).abs() < 1e-12);
                }
            }
        }
    }
}

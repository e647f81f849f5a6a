//! Forward and backward kernels on raw row-major buffers.
//!
//! Batched kernels split the batch into `BATCH_CHUNK`-sized chunks; see
//! [`crate::par`] for why the chunk size is fixed.

use crate::par;

pub(crate) const BATCH_CHUNK: usize = 8;
const ROW_CHUNK: usize = 32;

/// `c = a * b + beta * c` for strided `m x k` and `k x n` operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index dgemm can touch.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of a strided, zero-padded 1-D window sweep.
///
/// Position `t` of the window output reads input index `t * stride + tap - padding`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub len_in: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub len_out: usize,
}

impl Window {
    #[inline]
    fn source(&self, t: usize, tap: usize) -> Option<usize> {
        let idx = (t * self.stride + tap) as isize - self.padding as isize;
        (idx >= 0 && (idx as usize) < self.len_in).then_some(idx as usize)
    }
}

/// Unfolds `x` (`channels x len_in`) into `cols` (`channels*kernel x len_out`).
pub(crate) fn im2col(x: &[f64], win: &Window, cols: &mut [f64]) {
    for c in 0..win.channels {
        for tap in 0..win.kernel {
            let row = &mut cols[(c * win.kernel + tap) * win.len_out..][..win.len_out];
            for (t, v) in row.iter_mut().enumerate() {
                *v = match win.source(t, tap) {
                    Some(i) => x[c * win.len_in + i],
                    None => 0.0,
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back onto `x`, accumulating.
pub(crate) fn col2im(cols: &[f64], win: &Window, x: &mut [f64]) {
    for c in 0..win.channels {
        for tap in 0..win.kernel {
            let row = &cols[(c * win.kernel + tap) * win.len_out..][..win.len_out];
            for (t, v) in row.iter().enumerate() {
                if let Some(i) = win.source(t, tap) {
                    x[c * win.len_in + i] += v;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub len_in: usize,
    pub len_out: usize,
}

impl ConvDims {
    /// Window over the input of a forward convolution.
    fn conv_window(&self) -> Window {
        Window {
            channels: self.c_in,
            len_in: self.len_in,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            len_out: self.len_out,
        }
    }

    /// Window over the output of a transposed convolution.
    fn transpose_window(&self) -> Window {
        Window {
            channels: self.c_out,
            len_in: self.len_out,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            len_out: self.len_in,
        }
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], len: usize) {
    for (row, b) in out.chunks_mut(len).zip(bias.iter().cycle()) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_bias_grad(g: &[f64], c: usize, len: usize) -> Vec<f64> {
    let mut db = vec![0.0; c];
    for (i, row) in g.chunks(len).enumerate() {
        db[i % c] += row.iter().sum::<f64>();
    }
    db
}

/// Cross-correlation; `w` is `c_out x c_in x kernel`.
pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let win = d.conv_window();
    let ck = d.c_in * d.kernel;
    let per_in = d.c_in * d.len_in;
    let per_out = d.c_out * d.len_out;
    let mut out = vec![0.0; d.batch * per_out];
    par::for_each_chunk_mut(&mut out, BATCH_CHUNK * per_out, |ci, chunk| {
        let mut cols = vec![0.0; ck * d.len_out];
        for (j, out_s) in chunk.chunks_mut(per_out).enumerate() {
            let s = ci * BATCH_CHUNK + j;
            im2col(&x[s * per_in..][..per_in], &win, &mut cols);
            gemm(d.c_out, ck, d.len_out, w, (ck, 1), &cols, (d.len_out, 1), 0.0, out_s, (d.len_out, 1));
        }
    });
    if let Some(b) = bias {
        add_channel_bias(&mut out, b, d.len_out);
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

fn sum_partials(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads {
    let win = d.conv_window();
    let ck = d.c_in * d.kernel;
    let per_in = d.c_in * d.len_in;
    let per_out = d.c_out * d.len_out;

    let dx = need.0.then(|| {
        let mut dx = vec![0.0; d.batch * per_in];
        par::for_each_chunk_mut(&mut dx, BATCH_CHUNK * per_in, |ci, chunk| {
            let mut dcols = vec![0.0; ck * d.len_out];
            for (j, dx_s) in chunk.chunks_mut(per_in).enumerate() {
                let s = ci * BATCH_CHUNK + j;
                gemm(ck, d.c_out, d.len_out, w, (1, ck), &g[s * per_out..][..per_out], (d.len_out, 1), 0.0, &mut dcols, (d.len_out, 1));
                col2im(&dcols, &win, dx_s);
            }
        });
        dx
    });

    let dw = need.1.then(|| {
        let n_chunks = d.batch.div_ceil(BATCH_CHUNK);
        let parts = par::map_indexed(n_chunks, |ci| {
            let mut part = vec![0.0; d.c_out * ck];
            let mut cols = vec![0.0; ck * d.len_out];
            let end = ((ci + 1) * BATCH_CHUNK).min(d.batch);
            for s in ci * BATCH_CHUNK..end {
                im2col(&x[s * per_in..][..per_in], &win, &mut cols);
                gemm(d.c_out, d.len_out, ck, &g[s * per_out..][..per_out], (d.len_out, 1), &cols, (1, d.len_out), 1.0, &mut part, (ck, 1));
            }
            part
        });
        sum_partials(parts, d.c_out * ck)
    });

    let db = need.2.then(|| channel_bias_grad(g, d.c_out, d.len_out));
    ConvGrads { dx, dw, db }
}

/// Transposed convolution; `w` is `c_in x c_out x kernel`. Linear adjoint of
/// [`conv1d_forward`] with the same weights and geometry.
pub(crate) fn conv_transpose1d_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    d: &ConvDims,
) -> Vec<f64> {
    let win = d.transpose_window();
    let ok = d.c_out * d.kernel;
    let per_in = d.c_in * d.len_in;
    let per_out = d.c_out * d.len_out;
    let mut out = vec![0.0; d.batch * per_out];
    par::for_each_chunk_mut(&mut out, BATCH_CHUNK * per_out, |ci, chunk| {
        let mut cols = vec![0.0; ok * d.len_in];
        for (j, out_s) in chunk.chunks_mut(per_out).enumerate() {
            let s = ci * BATCH_CHUNK + j;
            gemm(ok, d.c_in, d.len_in, w, (1, ok), &x[s * per_in..][..per_in], (d.len_in, 1), 0.0, &mut cols, (d.len_in, 1));
            col2im(&cols, &win, out_s);
        }
    });
    if let Some(b) = bias {
        add_channel_bias(&mut out, b, d.len_out);
    }
    out
}

pub(crate) fn conv_transpose1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads {
    let win = d.transpose_window();
    let ok = d.c_out * d.kernel;
    let per_in = d.c_in * d.len_in;
    let per_out = d.c_out * d.len_out;

    let dx = need.0.then(|| {
        let mut dx = vec![0.0; d.batch * per_in];
        par::for_each_chunk_mut(&mut dx, BATCH_CHUNK * per_in, |ci, chunk| {
            let mut gcols = vec![0.0; ok * d.len_in];
            for (j, dx_s) in chunk.chunks_mut(per_in).enumerate() {
                let s = ci * BATCH_CHUNK + j;
                im2col(&g[s * per_out..][..per_out], &win, &mut gcols);
                gemm(d.c_in, ok, d.len_in, w, (ok, 1), &gcols, (d.len_in, 1), 0.0, dx_s, (d.len_in, 1));
            }
        });
        dx
    });

    let dw = need.1.then(|| {
        let n_chunks = d.batch.div_ceil(BATCH_CHUNK);
        let parts = par::map_indexed(n_chunks, |ci| {
            let mut part = vec![0.0; d.c_in * ok];
            let mut gcols = vec![0.0; ok * d.len_in];
            let end = ((ci + 1) * BATCH_CHUNK).min(d.batch);
            for s in ci * BATCH_CHUNK..end {
                im2col(&g[s * per_out..][..per_out], &win, &mut gcols);
                gemm(d.c_in, d.len_in, ok, &x[s * per_in..][..per_in], (d.len_in, 1), &gcols, (1, d.len_in), 1.0, &mut part, (ok, 1));
            }
            part
        });
        sum_partials(parts, d.c_in * ok)
    });

    let db = need.2.then(|| channel_bias_grad(g, d.c_out, d.len_out));
    ConvGrads { dx, dw, db }
}

/// `out[b, m] = sum_n x[b, n] * w[m, n] + bias[m]`.
pub(crate) fn linear_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * n_out];
    par::for_each_chunk_mut(&mut out, ROW_CHUNK * n_out, |ci, chunk| {
        let rows = chunk.len() / n_out;
        let xs = &x[ci * ROW_CHUNK * n_in..][..rows * n_in];
        if let Some(b) = bias {
            for row in chunk.chunks_mut(n_out) {
                row.copy_from_slice(b);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(rows, n_in, n_out, xs, (n_in, 1), w, (1, n_in), beta, chunk, (n_out, 1));
    });
    out
}

pub(crate) struct LinearGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    (batch, n_in, n_out): (usize, usize, usize),
    need: (bool, bool, bool),
) -> LinearGrads {
    let dx = need.0.then(|| {
        let mut dx = vec![0.0; batch * n_in];
        par::for_each_chunk_mut(&mut dx, ROW_CHUNK * n_in, |ci, chunk| {
            let rows = chunk.len() / n_in;
            let gs = &g[ci * ROW_CHUNK * n_out..][..rows * n_out];
            gemm(rows, n_out, n_in, gs, (n_out, 1), w, (n_in, 1), 0.0, chunk, (n_in, 1));
        });
        dx
    });
    let dw = need.1.then(|| {
        let mut dw = vec![0.0; n_out * n_in];
        par::for_each_chunk_mut(&mut dw, ROW_CHUNK * n_in, |ci, chunk| {
            let rows = chunk.len() / n_in;
            let m0 = ci * ROW_CHUNK;
            gemm(rows, batch, n_in, &g[m0..], (1, n_out), x, (n_in, 1), 0.0, chunk, (n_in, 1));
        });
        dw
    });
    let db = need.2.then(|| {
        let mut db = vec![0.0; n_out];
        for row in g.chunks(n_out) {
            for (a, v) in db.iter_mut().zip(row) {
                *a += v;
            }
        }
        db
    });
    LinearGrads { dx, dw, db }
}

/// Non-overlapping window means over the last axis; the tail is dropped.
pub(crate) fn avg_pool_forward(x: &[f64], len: usize, window: usize) -> Vec<f64> {
    let len_out = len / window;
    let inv = 1.0 / window as f64;
    let mut out = Vec::with_capacity(x.len() / len * len_out);
    for row in x.chunks(len) {
        for j in 0..len_out {
            out.push(row[j * window..(j + 1) * window].iter().sum::<f64>() * inv);
        }
    }
    out
}

pub(crate) fn avg_pool_backward(g: &[f64], len: usize, window: usize) -> Vec<f64> {
    let len_out = len / window;
    let inv = 1.0 / window as f64;
    let rows = g.len() / len_out.max(1);
    let mut dx = vec![0.0; rows * len];
    for (r, grow) in g.chunks(len_out).enumerate() {
        for (j, gv) in grow.iter().enumerate() {
            for v in &mut dx[r * len + j * window..r * len + (j + 1) * window] {
                *v = gv * inv;
            }
        }
    }
    dx
}

/// Max-shifted softmax over consecutive rows of length `len`.
pub(crate) fn softmax_rows(x: &[f64], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(len) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|v| *v /= total);
    }
    out
}

pub(crate) fn softmax_rows_backward(y: &[f64], g: &[f64], len: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(y.len());
    for (yr, gr) in y.chunks(len).zip(g.chunks(len)) {
        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        dx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - inner)));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
        let mut out = vec![0.0; d.batch * d.c_out * d.len_out];
        for b in 0..d.batch {
            for o in 0..d.c_out {
                for t in 0..d.len_out {
                    let mut acc = 0.0;
                    for c in 0..d.c_in {
                        for k in 0..d.kernel {
                            let i = (t * d.stride + k) as isize - d.padding as isize;
                            if i >= 0 && (i as usize) < d.len_in {
                                acc += w[(o * d.c_in + c) * d.kernel + k]
                                    * x[(b * d.c_in + c) * d.len_in + i as usize];
                            }
                        }
                    }
                    out[(b * d.c_out + o) * d.len_out + t] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn gemm_matches_loops() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, &a, (3, 1), &b, (4, 1), 0.0, &mut c, (4, 1));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn batched_conv_matches_naive() {
        let d = ConvDims {
            batch: 11,
            c_in: 3,
            c_out: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
            len_in: 13,
            len_out: (13 + 2 - 3) / 2 + 1,
        };
        let x: Vec<f64> = (0..d.batch * d.c_in * d.len_in)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0)
            .collect();
        let w: Vec<f64> = (0..d.c_out * d.c_in * d.kernel)
            .map(|i| ((i * 11 % 7) as f64 - 3.0) / 3.0)
            .collect();
        let got = conv1d_forward(&x, &w, None, &d);
        let want = naive_conv(&x, &w, &d);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_drops_tail() {
        let out = avg_pool_forward(&[1.0, 3.0, 5.0, 7.0, 100.0], 5, 2);
        assert_eq!(out, vec![2.0, 6.0]);
        let g = avg_pool_backward(&[1.0, 1.0], 5, 2);
        assert_eq!(g, vec![0.5, 0.5, 0.5, 0.5, 0.0]);
    }
}

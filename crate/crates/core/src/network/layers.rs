//! Dense kernels with explicit backward passes.
//!
//! Convolution activations use a channel-major `C×N×H×W` layout so that a
//! whole batch becomes one GEMM after `im2col`.

use alloc::vec;
use alloc::vec::Vec;

/// `C = alpha·A·B + beta·C` with arbitrary strides, `A: m×k`, `B: k×n`,
/// `C: m×n` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (a.len() > (m - 1) * rsa + (k - 1) * csa), "gemm: A too small");
    assert!(k == 0 || (b.len() > (k - 1) * rsb + (n - 1) * csb), "gemm: B too small");
    assert!(c.len() >= m * n, "gemm: C too small");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
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
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 - 3) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 - 3) / self.stride + 1
    }

    pub fn k(&self) -> usize {
        self.cin * 9
    }

    pub fn n(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }
}

/// 3×3, padding 1. Input is `cin×B×H×W`; returns the `k×n` column matrix.
pub(crate) fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = g.n();
    let mut cols = vec![0.0f32; g.k() * n];
    for ci in 0..g.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * n..][..n];
                for b in 0..g.batch {
                    let plane = &x[(ci * g.batch + b) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - 1;
                        if iy < 0 || iy as usize >= g.h {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        let dst = &mut row[(b * oh + oy) * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - 1;
                            if ix >= 0 && (ix as usize) < g.w {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom) -> Vec<f32> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = g.n();
    let mut x = vec![0.0f32; g.cin * g.batch * g.h * g.w];
    for ci in 0..g.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * n..][..n];
                for b in 0..g.batch {
                    let plane = &mut x[(ci * g.batch + b) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - 1;
                        if iy < 0 || iy as usize >= g.h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        let src = &row[(b * oh + oy) * ow..][..ow];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - 1;
                            if ix >= 0 && (ix as usize) < g.w {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Convolution + bias + ReLU. Returns `(cols, activation)`, both needed by
/// the backward pass.
pub(crate) fn conv_relu_forward(x: &[f32], weight: &[f32], bias: &[f32], g: &ConvGeom) -> (Vec<f32>, Vec<f32>) {
    let cols = im2col(x, g);
    let n = g.n();
    let mut out = vec![0.0f32; g.cout * n];
    for (co, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias[co]);
    }
    gemm(g.cout, g.k(), n, weight, (g.k(), 1), &cols, (n, 1), &mut out, 1.0);
    for v in &mut out {
        *v = v.max(0.0);
    }
    (cols, out)
}

/// Backward of [`conv_relu_forward`]. `grad_out` is overwritten with the
/// pre-activation gradient. Accumulates into `grad_w`/`grad_b` when given and
/// returns the input gradient when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_relu_backward(
    cols: &[f32],
    activation: &[f32],
    weight: &[f32],
    grad_out: &mut [f32],
    g: &ConvGeom,
    grad_w: Option<&mut [f32]>,
    grad_b: Option<&mut [f32]>,
    want_input: bool,
) -> Option<Vec<f32>> {
    let n = g.n();
    let k = g.k();
    for (d, &a) in grad_out.iter_mut().zip(activation) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    if let Some(gw) = grad_w {
        // gw[cout,k] += dz[cout,n] · colsᵀ[n,k]
        gemm(g.cout, n, k, grad_out, (n, 1), cols, (1, n), gw, 1.0);
    }
    if let Some(gb) = grad_b {
        for (b, row) in gb.iter_mut().zip(grad_out.chunks_exact(n)) {
            *b += row.iter().sum::<f32>();
        }
    }
    if !want_input {
        return None;
    }
    let mut dcols = vec![0.0f32; k * n];
    // dcols[k,n] = Wᵀ[k,cout] · dz[cout,n]
    gemm(k, g.cout, n, weight, (1, k), grad_out, (n, 1), &mut dcols, 0.0);
    Some(col2im(&dcols, g))
}

/// `y[b,o] = Σ_i x[b,i]·W[o,i] + bias[o]`.
pub(crate) fn linear_forward(x: &[f32], batch: usize, inp: usize, weight: &[f32], bias: Option<&[f32]>, out: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; batch * out];
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(out) {
            row.copy_from_slice(b);
        }
    }
    gemm(batch, inp, out, x, (inp, 1), weight, (1, inp), &mut y, 1.0);
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f32],
    batch: usize,
    inp: usize,
    weight: &[f32],
    out: usize,
    grad_y: &[f32],
    grad_w: Option<&mut [f32]>,
    grad_b: Option<&mut [f32]>,
    want_input: bool,
) -> Option<Vec<f32>> {
    if let Some(gw) = grad_w {
        gemm(out, batch, inp, grad_y, (1, out), x, (inp, 1), gw, 1.0);
    }
    if let Some(gb) = grad_b {
        for row in grad_y.chunks_exact(out) {
            for (b, g) in gb.iter_mut().zip(row) {
                *b += g;
            }
        }
    }
    if !want_input {
        return None;
    }
    let mut gx = vec![0.0f32; batch * inp];
    gemm(batch, out, inp, grad_y, (out, 1), weight, (inp, 1), &mut gx, 0.0);
    Some(gx)
}

/// Rows with norm below this are mapped to the first basis vector.
pub const NORMALIZE_EPS: f32 = 1e-12;

/// Row-wise L2 normalization; returns `(y, norms)`.
pub(crate) fn l2_normalize_rows(z: &[f32], dim: usize) -> (Vec<f32>, Vec<f32>) {
    let mut y = z.to_vec();
    let mut norms = Vec::with_capacity(z.len() / dim.max(1));
    for row in y.chunks_exact_mut(dim) {
        let n = libm::sqrtf(row.iter().map(|v| v * v).sum::<f32>());
        norms.push(n);
        if n < NORMALIZE_EPS || !n.is_finite() {
            row.fill(0.0);
            row[0] = 1.0;
        } else {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
    }
    (y, norms)
}

/// `dz = (dy − y·(yᵀdy)) / ‖z‖`; zero for guarded rows.
pub(crate) fn l2_normalize_backward(y: &[f32], norms: &[f32], grad_y: &[f32], dim: usize) -> Vec<f32> {
    let mut gz = vec![0.0f32; y.len()];
    for (((gzr, yr), gyr), &n) in gz.chunks_exact_mut(dim).zip(y.chunks_exact(dim)).zip(grad_y.chunks_exact(dim)).zip(norms) {
        if n < NORMALIZE_EPS || !n.is_finite() {
            continue;
        }
        let d: f32 = yr.iter().zip(gyr).map(|(a, b)| a * b).sum();
        for ((g, &yv), &gy) in gzr.iter_mut().zip(yr).zip(gyr) {
            *g = (gy - yv * d) / n;
        }
    }
    gz
}

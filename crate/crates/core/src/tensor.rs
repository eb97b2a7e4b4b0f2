//! Dense row-major `f32` matrices and the handful of kernels the encoder needs.
//!
//! Storage is 32-bit; every reduction (dot products, row means, variances,
//! softmax normalizers) accumulates in 64-bit and rounds once on store. The
//! dot-product kernel fixes its accumulation order (eight interleaved lanes,
//! pairwise lane reduction, then the tail), so results do not depend on how
//! the compiler vectorizes it.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows below this norm are rejected by [`l2_normalize_rows`].
pub const MIN_ROW_NORM: f64 = 1e-12;
/// Output columns per f64 panel; one panel of a 3072-wide operand fits in L2.
const COL_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape { op: "from_vec", left: vec![rows, cols], right: vec![data.len()] });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape { op: "from_rows", left: vec![rows.len(), cols], right: vec![row.len()] });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Copies columns `start..start + width` into a new matrix.
    pub fn column_slice(&self, start: usize, width: usize) -> Result<Matrix> {
        if start + width > self.cols {
            return Err(Error::Shape {
                op: "column_slice",
                left: vec![self.rows, self.cols],
                right: vec![start, width],
            });
        }
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Ok(Matrix { rows: self.rows, cols: width, data })
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f32]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Shape {
                op: "add_row_vector",
                left: vec![self.rows, self.cols],
                right: vec![bias.len()],
            });
        }
        for row in self.data.chunks_exact_mut(self.cols) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += *b;
            }
        }
        Ok(())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "add_assign",
                left: vec![self.rows, self.cols],
                right: vec![other.rows, other.cols],
            });
        }
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += *y;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        for x in &mut self.data {
            *x *= factor;
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f32) -> f32) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `Σ a[t]·b[t]` in 64-bit with a fixed eight-lane accumulation order.
#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for lane in 0..8 {
            acc[lane] += f64::from(x[lane]) * f64::from(y[lane]);
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += f64::from(*x) * f64::from(*y);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `a × b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape { op: "matmul", left: vec![a.rows, a.cols], right: vec![b.rows, b.cols] });
    }
    matmul_transposed(a, &b.transpose())
}

/// `a × bᵀ`, where `b_t` holds one output column per row. This is the native
/// layout of linear-layer weights (`[out, in]`) and the fast path of [`matmul`].
pub fn matmul_transposed(a: &Matrix, b_t: &Matrix) -> Result<Matrix> {
    if a.cols != b_t.cols {
        return Err(Error::Shape {
            op: "matmul_transposed",
            left: vec![a.rows, a.cols],
            right: vec![b_t.rows, b_t.cols],
        });
    }
    Ok(Matrix { rows: a.rows, cols: b_t.rows, data: gemm_nt(&a.data, a.rows, a.cols, &b_t.data, b_t.rows) })
}

/// Fully connected layer `x·Wᵀ + b` with `weight` laid out `[out_features, in]`.
pub fn linear(x: &Matrix, weight: &[f32], out_features: usize, bias: &[f32]) -> Result<Matrix> {
    if weight.len() != out_features * x.cols || bias.len() != out_features {
        return Err(Error::Shape {
            op: "linear",
            left: vec![x.rows, x.cols],
            right: vec![out_features, weight.len(), bias.len()],
        });
    }
    let mut out =
        Matrix { rows: x.rows, cols: out_features, data: gemm_nt(&x.data, x.rows, x.cols, weight, out_features) };
    out.add_row_vector(bias)?;
    Ok(out)
}

/// Row-major `a[m×k] · b[n×k]ᵀ`.
///
/// Operands are widened to f64 panels once, then a 2×2 register-blocked
/// kernel runs over them. Every output element is accumulated in exactly the
/// lane order of [`dot_f64`], so the result is bit-identical to calling it per
/// element, independent of blocking, instruction set or thread count.
fn gemm_nt(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    if m == 0 || n == 0 {
        return out;
    }
    let a64: Vec<f64> = a.iter().map(|&x| f64::from(x)).collect();
    let blocks: Vec<Vec<f32>> = (0..n.div_ceil(COL_BLOCK))
        .into_par_iter()
        .map(|block| {
            let j0 = block * COL_BLOCK;
            let width = COL_BLOCK.min(n - j0);
            let panel: Vec<f64> = b[j0 * k..(j0 + width) * k].iter().map(|&x| f64::from(x)).collect();
            let mut tile = vec![0.0f32; m * width];
            gemm_tile(&a64, m, k, &panel, width, &mut tile);
            tile
        })
        .collect();
    for (block, tile) in blocks.iter().enumerate() {
        let j0 = block * COL_BLOCK;
        let width = tile.len() / m;
        for (dst, src) in out.chunks_exact_mut(n).zip(tile.chunks_exact(width)) {
            dst[j0..j0 + width].copy_from_slice(src);
        }
    }
    out
}

/// `tile[m×w] = a[m×k] · panel[w×k]ᵀ`, dispatching to an AVX2 build of the
/// same code when available. No fused multiply-add is enabled, so both builds
/// round identically.
fn gemm_tile(a: &[f64], m: usize, k: usize, panel: &[f64], w: usize, tile: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { gemm_tile_avx2(a, m, k, panel, w, tile) };
        return;
    }
    gemm_tile_generic(a, m, k, panel, w, tile);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_tile_avx2(a: &[f64], m: usize, k: usize, panel: &[f64], w: usize, tile: &mut [f32]) {
    gemm_tile_generic(a, m, k, panel, w, tile);
}

#[inline(always)]
fn gemm_tile_generic(a: &[f64], m: usize, k: usize, panel: &[f64], w: usize, tile: &mut [f32]) {
    let a_row = |r: usize| &a[r * k..(r + 1) * k];
    let b_row = |j: usize| &panel[j * k..(j + 1) * k];
    let mut r = 0;
    while r + 1 < m {
        let mut j = 0;
        while j + 1 < w {
            let [c00, c01, c10, c11] = dot8_2x2(a_row(r), a_row(r + 1), b_row(j), b_row(j + 1));
            tile[r * w + j] = c00 as f32;
            tile[r * w + j + 1] = c01 as f32;
            tile[(r + 1) * w + j] = c10 as f32;
            tile[(r + 1) * w + j + 1] = c11 as f32;
            j += 2;
        }
        if j < w {
            tile[r * w + j] = dot8(a_row(r), b_row(j)) as f32;
            tile[(r + 1) * w + j] = dot8(a_row(r + 1), b_row(j)) as f32;
        }
        r += 2;
    }
    if r < m {
        for j in 0..w {
            tile[r * w + j] = dot8(a_row(r), b_row(j)) as f32;
        }
    }
}

#[inline(always)]
fn reduce8(acc: &[f64; 8], tail: f64) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline(always)]
fn dot8(a: &[f64], b: &[f64]) -> f64 {
    let body = a.len() & !7;
    let mut acc = [0.0f64; 8];
    for (x, y) in a[..body].chunks_exact(8).zip(b[..body].chunks_exact(8)) {
        for lane in 0..8 {
            acc[lane] += x[lane] * y[lane];
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in a[body..].iter().zip(&b[body..]) {
        tail += x * y;
    }
    reduce8(&acc, tail)
}

/// [`dot8`] of two rows against two rows, sharing loads.
#[inline(always)]
fn dot8_2x2(a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64]) -> [f64; 4] {
    let body = a0.len() & !7;
    let mut acc = [[0.0f64; 8]; 4];
    let chunks = a0[..body]
        .chunks_exact(8)
        .zip(a1[..body].chunks_exact(8))
        .zip(b0[..body].chunks_exact(8).zip(b1[..body].chunks_exact(8)));
    for ((x0, x1), (y0, y1)) in chunks {
        for lane in 0..8 {
            acc[0][lane] += x0[lane] * y0[lane];
            acc[1][lane] += x0[lane] * y1[lane];
            acc[2][lane] += x1[lane] * y0[lane];
            acc[3][lane] += x1[lane] * y1[lane];
        }
    }
    let pairs = [(a0, b0), (a0, b1), (a1, b0), (a1, b1)];
    let mut out = [0.0f64; 4];
    for (o, (acc, (x, y))) in out.iter_mut().zip(acc.iter().zip(pairs)) {
        let mut tail = 0.0f64;
        for (p, q) in x[body..].iter().zip(&y[body..]) {
            tail += p * q;
        }
        *o = reduce8(acc, tail);
    }
    out
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    softmax_rows_inplace(&mut out);
    out
}

pub fn softmax_rows_inplace(m: &mut Matrix) {
    if m.cols == 0 {
        return;
    }
    let cols = m.cols;
    for row in m.data.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut exps = Vec::with_capacity(cols);
        let mut sum = 0.0f64;
        for x in row.iter() {
            let e = (f64::from(*x) - f64::from(max)).exp();
            sum += e;
            exps.push(e);
        }
        for (x, e) in row.iter_mut().zip(exps) {
            *x = (e / sum) as f32;
        }
    }
}

/// Per-row `gamma ⊙ (x − mean) / sqrt(var + eps) + beta` with biased variance.
pub fn layer_norm(m: &Matrix, gamma: &[f32], beta: &[f32], eps: f64) -> Result<Matrix> {
    if gamma.len() != m.cols || beta.len() != m.cols {
        return Err(Error::Shape {
            op: "layer_norm",
            left: vec![m.rows, m.cols],
            right: vec![gamma.len(), beta.len()],
        });
    }
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let mut out = Matrix::zeros(m.rows, m.cols);
    if m.cols == 0 {
        return Ok(out);
    }
    let inv_n = 1.0 / m.cols as f64;
    for (src, dst) in m.data.chunks_exact(m.cols).zip(out.data.chunks_exact_mut(m.cols)) {
        let mean = src.iter().map(|&x| f64::from(x)).sum::<f64>() * inv_n;
        let var = src
            .iter()
            .map(|&x| {
                let d = f64::from(x) - mean;
                d * d
            })
            .sum::<f64>()
            * inv_n;
        let inv_std = 1.0 / (var + eps).sqrt();
        for (((y, &x), &g), &b) in dst.iter_mut().zip(src).zip(gamma).zip(beta) {
            *y = (f64::from(g) * (f64::from(x) - mean) * inv_std + f64::from(b)) as f32;
        }
    }
    Ok(out)
}

/// Exact-erf GELU, `x·Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_inplace(m: &mut Matrix) {
    m.map_inplace(|x| gelu(f64::from(x)) as f32);
}

/// Scales every row to unit ℓ2 norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    if m.cols == 0 {
        return Ok(out);
    }
    for (i, row) in out.data.chunks_exact_mut(m.cols).enumerate() {
        let norm = dot_f64(row, row).sqrt();
        if !(norm >= MIN_ROW_NORM) {
            return Err(Error::DegenerateFeature { row: i });
        }
        for x in row.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
    Ok(out)
}

//! Dense matrices, "same" convolution, activations and a counter-based
//! random stream. Everything here is deterministic and 64-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct MatRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatRepr> for Mat {
    type Error = Error;

    fn try_from(r: MatRepr) -> Result<Self> {
        Mat::new(r.rows, r.cols, r.data)
    }
}

impl Mat {
    /// Builds a matrix, rejecting length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite entry at index {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Single-row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    /// Stacks equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {cols}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Mat::new(rows.len(), cols, data)
    }

    pub fn identity_kernel(size: usize) -> Self {
        let mut k = Mat::zeros(size, size);
        k.set(size / 2, size / 2, 1.0);
        k
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {}x{} into {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(Self { rows, cols, data: self.data })
    }

    pub fn transpose(&self) -> Self {
        Mat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|x| alpha * x)
    }

    pub fn add(&self, other: &Mat) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Mat) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Mat) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Mat) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.cols, other.cols);
        for n in 0..self.rows {
            let b_row = other.row(n);
            for (i, &a) in self.row(n).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Mat) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Mat::from_fn(self.rows, other.rows, |r, c| dot(self.row(r), other.row(c))))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Column-wise mean over rows.
    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, &x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        if self.rows > 0 {
            let n = self.rows as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    /// Horizontal concatenation.
    pub fn hstack(parts: &[&Mat]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::Shape("hstack needs equal row counts".into()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }

    fn check_same_shape(&self, other: &Mat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks that a kernel is odd-sized and fits inside the image.
pub(crate) fn validate_kernel(image: (usize, usize), kernel: &Mat) -> Result<()> {
    let (kh, kw) = kernel.shape();
    if kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidKernel(format!("kernel dims must be odd, got {kh}x{kw}")));
    }
    if kh > image.0 || kw > image.1 {
        return Err(Error::InvalidKernel(format!(
            "kernel {kh}x{kw} larger than image {}x{}",
            image.0, image.1
        )));
    }
    Ok(())
}

/// 2-D convolution (kernel flipped) with zero padding; output has the
/// image's dimensions.
///
/// `out[r][c] = Σ_{p,q} k[p][q] · img[r + kh/2 − p][c + kw/2 − q]`
pub fn conv2d_same(image: &Mat, kernel: &Mat) -> Result<Mat> {
    validate_kernel(image.shape(), kernel)?;
    let (rows, cols) = image.shape();
    let (kh, kw) = kernel.shape();
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Mat::zeros(rows, cols);
    for p in 0..kh {
        for q in 0..kw {
            let k = kernel.get(p, q);
            if k == 0.0 {
                continue;
            }
            let dr = ch - p as isize;
            let dc = cw - q as isize;
            for r in 0..rows {
                let sr = r as isize + dr;
                if sr < 0 || sr >= rows as isize {
                    continue;
                }
                let src = image.row(sr as usize);
                let dst = out.row_mut(r);
                let c_lo = (-dc).max(0) as usize;
                let c_hi = ((cols as isize) - dc).min(cols as isize).max(0) as usize;
                for c in c_lo..c_hi {
                    dst[c] += k * src[(c as isize + dc) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `Σ upstream ⊙ conv2d_same(image, k)` with respect to `k`.
pub fn conv2d_same_kernel_grad(image: &Mat, upstream: &Mat, kh: usize, kw: usize) -> Result<Mat> {
    if image.shape() != upstream.shape() {
        return Err(Error::Shape("upstream gradient must match image dims".into()));
    }
    let (rows, cols) = image.shape();
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut grad = Mat::zeros(kh, kw);
    for p in 0..kh {
        for q in 0..kw {
            let dr = ch - p as isize;
            let dc = cw - q as isize;
            let mut acc = 0.0;
            for r in 0..rows {
                let sr = r as isize + dr;
                if sr < 0 || sr >= rows as isize {
                    continue;
                }
                let src = image.row(sr as usize);
                let g = upstream.row(r);
                let c_lo = (-dc).max(0) as usize;
                let c_hi = ((cols as isize) - dc).min(cols as isize).max(0) as usize;
                for c in c_lo..c_hi {
                    acc += g[c] * src[(c as isize + dc) as usize];
                }
            }
            grad.set(p, q, acc);
        }
    }
    Ok(grad)
}

const SIGMOID_CLAMP: f64 = 500.0;

/// Largest `f64` below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function. Inputs are clamped to ±500 before exponentiation and
/// the upper tail is held at the largest double below one, so the output
/// stays strictly inside `(0, 1)` and is never NaN.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP) };
    if x >= 0.0 {
        (1.0 / (1.0 + (-x).exp())).min(ONE_MINUS_ULP)
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Mat) -> Mat {
    x.map(sigmoid_scalar)
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Distributions accepted by [`RngStream::draw`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform01,
    Gaussian { mean: f64, std: f64 },
    Bernoulli(f64),
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based random stream.
///
/// Draw number `i` (counting from the current `counter`) is the SplitMix64
/// finalizer applied to `seed + (counter + 1) · 0x9E3779B97F4A7C15`
/// (wrapping). This is exactly the SplitMix64 sequence seeded with `seed`,
/// so any language can reproduce it. Counter advances:
///
/// * uniform01: 1 per value, `(x >> 11) · 2⁻⁵³`, in `[0, 1)`
/// * bernoulli(p): 1 per value, `uniform < p`
/// * gaussian: 2 per value, Box–Muller cosine branch with
///   `u1 = 1 − uniform`, `u2 = uniform`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent child stream keyed by `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        let mixed = splitmix_finalize(self.seed ^ splitmix_finalize(tag.wrapping_add(GOLDEN_GAMMA)));
        Self::new(mixed)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix_finalize(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        mean + std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n` (`n > 0`).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `n` draws as a `1 × n` matrix.
    pub fn draw(&mut self, dist: Dist, n: usize) -> Result<Mat> {
        let data = match dist {
            Dist::Uniform01 => (0..n).map(|_| self.uniform()).collect(),
            Dist::Gaussian { mean, std } => {
                if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(Error::InvalidParameter(format!("gaussian({mean}, {std})")));
                }
                (0..n).map(|_| self.gaussian(mean, std)).collect()
            }
            Dist::Bernoulli(p) => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidParameter(format!("bernoulli p = {p} outside [0, 1]")));
                }
                (0..n).map(|_| if self.bernoulli(p) { 1.0 } else { 0.0 }).collect()
            }
        };
        Ok(Mat { rows: 1, cols: n, data })
    }
}

#[inline]
fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(image: &Mat, kernel: &Mat) -> Mat {
        let (rows, cols) = image.shape();
        let (kh, kw) = kernel.shape();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                let mut acc = 0.0;
                for p in 0..kh as isize {
                    for q in 0..kw as isize {
                        let sr = r + kh as isize / 2 - p;
                        let sc = c + kw as isize / 2 - q;
                        if sr >= 0 && sc >= 0 && sr < rows as isize && sc < cols as isize {
                            acc += kernel.get(p as usize, q as usize) * image.get(sr as usize, sc as usize);
                        }
                    }
                }
                out.set(r as usize, c as usize, acc);
            }
        }
        out
    }

    fn random_mat(rng: &mut RngStream, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.gaussian(0.0, 1.0))
    }

    #[test]
    fn identity_kernel_is_noop() {
        let mut rng = RngStream::new(3);
        let img = random_mat(&mut rng, 5, 7);
        assert_eq!(conv2d_same(&img, &Mat::filled(1, 1, 1.0)).unwrap(), img);
        assert_eq!(conv2d_same(&img, &Mat::identity_kernel(3)).unwrap(), img);
    }

    #[test]
    fn averaging_constant_image_keeps_interior() {
        let img = Mat::filled(6, 6, 2.5);
        let out = conv2d_same(&img, &Mat::filled(3, 3, 1.0 / 9.0)).unwrap();
        for r in 1..5 {
            for c in 1..5 {
                assert!((out.get(r, c) - 2.5).abs() < 1e-12);
            }
        }
        // zero padding shows up on the corner
        assert!((out.get(0, 0) - 2.5 * 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_quadruple_loop() {
        let mut rng = RngStream::new(11);
        for _ in 0..5 {
            let img = random_mat(&mut rng, 4, 4);
            let k = random_mat(&mut rng, 3, 3);
            let fast = conv2d_same(&img, &k).unwrap();
            let slow = naive_conv(&img, &k);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let img = random_mat(&mut rng, 5, 9);
        let k = random_mat(&mut rng, 3, 5);
        let fast = conv2d_same(&img, &k).unwrap();
        let slow = naive_conv(&img, &k);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn even_or_oversized_kernel_rejected() {
        let img = Mat::zeros(4, 4);
        assert!(matches!(conv2d_same(&img, &Mat::zeros(2, 3)), Err(Error::InvalidKernel(_))));
        assert!(matches!(conv2d_same(&img, &Mat::zeros(5, 5)), Err(Error::InvalidKernel(_))));
    }

    #[test]
    fn kernel_grad_matches_finite_difference() {
        let mut rng = RngStream::new(5);
        let img = random_mat(&mut rng, 6, 5);
        let up = random_mat(&mut rng, 6, 5);
        let k = random_mat(&mut rng, 3, 3);
        let grad = conv2d_same_kernel_grad(&img, &up, 3, 3).unwrap();
        let f = |k: &Mat| dot(conv2d_same(&img, k).unwrap().data(), up.data());
        for p in 0..3 {
            for q in 0..3 {
                let mut kp = k.clone();
                kp.set(p, q, k.get(p, q) + 1e-5);
                let mut km = k.clone();
                km.set(p, q, k.get(p, q) - 1e-5);
                let fd = (f(&kp) - f(&km)) / 2e-5;
                assert!((fd - grad.get(p, q)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        for &x in &[-30.0, -2.0, 0.3, 7.0, 1e6, -1e6] {
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert!((s - 1.0).abs() < 1e-15);
            assert!(!sigmoid_scalar(x).is_nan());
        }
        for &x in &[-2.0, 0.0, 3.0] {
            let eps = 1e-5;
            let fd = (sigmoid_scalar(x + eps) - sigmoid_scalar(x - eps)) / (2.0 * eps);
            let s = sigmoid_scalar(x);
            assert!((fd - s * (1.0 - s)).abs() < 1e-8);
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for dist in [Dist::Uniform01, Dist::Gaussian { mean: 1.0, std: 2.0 }, Dist::Bernoulli(0.3)] {
            assert_eq!(a.draw(dist, 10).unwrap(), b.draw(dist, 10).unwrap());
        }
        assert_eq!(a.counter, 10 + 20 + 10);
    }

    #[test]
    fn splitmix_reference_values() {
        // first outputs of SplitMix64 seeded with 0
        let mut rng = RngStream::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = RngStream::new(1);
        assert!(rng.draw(Dist::Bernoulli(0.0), 100).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(rng.draw(Dist::Bernoulli(1.0), 100).unwrap().data().iter().all(|&x| x == 1.0));
        assert!(matches!(rng.draw(Dist::Bernoulli(1.5), 3), Err(Error::InvalidParameter(_))));
        assert!(rng.draw(Dist::Gaussian { mean: 0.0, std: -1.0 }, 3).is_err());
    }

    #[test]
    fn uniform_mean_law_of_large_numbers() {
        let mut rng = RngStream::new(2024);
        let m = rng.draw(Dist::Uniform01, 100_000).unwrap().mean();
        assert!((m - 0.5).abs() < 0.01, "{m}");
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = RngStream::new(9);
        let a = random_mat(&mut rng, 3, 4);
        let b = random_mat(&mut rng, 4, 2);
        let ab = a.matmul(&b).unwrap();
        let via_t = a.transpose().t_matmul(&b).unwrap();
        let via_mt = a.matmul_t(&b.transpose()).unwrap();
        for ((x, y), z) in ab.data().iter().zip(via_t.data()).zip(via_mt.data()) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn conv_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
                let mut rng = RngStream::new(seed);
                let a = random_mat(&mut rng, 5, 6);
                let b = random_mat(&mut rng, 5, 6);
                let k = random_mat(&mut rng, 3, 3);
                let combo = a.scale(alpha).add(&b.scale(beta)).unwrap();
                let lhs = conv2d_same(&combo, &k).unwrap();
                let rhs = conv2d_same(&a, &k).unwrap().scale(alpha)
                    .add(&conv2d_same(&b, &k).unwrap().scale(beta)).unwrap();
                for (x, y) in lhs.data().iter().zip(rhs.data()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn sigmoid_strictly_inside_unit_interval(x in -1e6f64..1e6) {
                let s = sigmoid_scalar(x);
                prop_assert!(s > 0.0 && s < 1.0);
            }

            #[test]
            fn sigmoid_monotone(x in -50.0f64..50.0, d in 0.001f64..5.0) {
                prop_assert!(sigmoid_scalar(x + d) >= sigmoid_scalar(x));
            }
        }
    }
}

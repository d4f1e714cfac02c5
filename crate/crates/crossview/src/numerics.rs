//! Minimal dense linear algebra in f64, plus a seeded deterministic RNG.
//!
//! Everything here is pure and allocation-simple on purpose: the model is
//! desk-scale and the gradient checker needs ~1e-8 headroom, so all
//! arithmetic stays in 64-bit floats.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector.
pub type Vector = Vec<f64>;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Shape("ragged rows in matrix literal".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Checks internal consistency after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix contains NaN/Inf".into()));
        }
        Ok(())
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// y = A^T x
    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.rows {
            return Err(Error::Shape(format!(
                "matvec_transpose: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let xi = x[i];
            for (yj, a) in y.iter_mut().zip(row) {
                *yj += xi * a;
            }
        }
        Ok(y)
    }

    /// self += scale * u v^T (gradient accumulation for bilinear terms).
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::Shape(format!(
                "add_outer: matrix is {}x{}, outer product is {}x{}",
                self.rows,
                self.cols,
                u.len(),
                v.len()
            )));
        }
        for i in 0..self.rows {
            let su = scale * u[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, vj) in row.iter_mut().zip(v) {
                *r += su * vj;
            }
        }
        Ok(())
    }
}

/// Inner product.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "dot: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// max(0, x).
#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// y += scale * x
pub fn axpy(y: &mut [f64], scale: f64, x: &[f64]) -> Result<()> {
    if y.len() != x.len() {
        return Err(Error::Shape(format!(
            "axpy: lengths {} and {}",
            y.len(),
            x.len()
        )));
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
    Ok(())
}

/// Seeded deterministic random source.
///
/// ChaCha8 keyed from the 64-bit seed: identical seed and call sequence give
/// bit-identical output on every platform, which the reproducibility
/// contract relies on.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, stable under the order the parent is used in.
    pub fn derive(&self, index: u64) -> Rng {
        Rng::from_seed(splitmix64(self.seed ^ splitmix64(index)))
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Gaussian draw with mean 0 and the given standard deviation.
    pub fn normal(&mut self, sigma: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        sigma * z
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// Matrix with i.i.d. entries uniform in [-scale, +scale].
pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Result<Matrix> {
    if scale <= 0.0 {
        return Err(Error::Domain(format!(
            "random_matrix: scale must be positive, got {scale}"
        )));
    }
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.uniform(-scale, scale);
    }
    Ok(m)
}

/// Vector with i.i.d. entries uniform in [-scale, +scale].
pub fn random_vector(rng: &mut Rng, len: usize, scale: f64) -> Result<Vector> {
    if scale <= 0.0 {
        return Err(Error::Domain(format!(
            "random_vector: scale must be positive, got {scale}"
        )));
    }
    Ok((0..len).map(|_| rng.uniform(-scale, scale)).collect())
}

//! Vector math, similarity/softmax kernels and the seeded random stream.
//!
//! Stored embeddings are `f32`; every accumulation (dot products, norms,
//! loss sums) is carried out in `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DeftError, Result};

/// Tolerance on the Euclidean norm of a vector flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-5;

/// Deterministic random stream. ChaCha8 is fixed as the generator algorithm
/// so streams are stable across platforms and releases.
pub type DeftRng = ChaCha8Rng;

/// Returns the random stream for `seed`.
pub fn seeded_rng(seed: u64) -> DeftRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-stream `stream` of the generator seeded by `seed`.
pub fn substream(seed: u64, stream: u64) -> DeftRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Unit or raw feature vector in the shared image/text space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() < 2 {
            return Err(DeftError::DataValidation(format!(
                "embedding dimension must be at least 2, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DeftError::DataValidation("embedding contains non-finite values".into()));
        }
        Ok(Self { values, normalized: false })
    }

    /// Builds a unit-norm embedding, rejecting zero vectors.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        let unit = normalize(values)?;
        let mut e = Self::new(unit.iter().map(|&v| v as f32).collect())?;
        e.normalized = true;
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.to_f64())
    }

    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        cosine_sim(&self.to_f64(), &other.to_f64())
    }
}

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const DEFAULT: f64 = 0.01;

    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 {
            Ok(Self(tau))
        } else {
            Err(DeftError::Config(format!("temperature must be positive and finite, got {tau}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = DeftError;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return Err(DeftError::DegenerateInput("cannot normalize a zero or non-finite vector".into()));
    }
    Ok(a.iter().map(|v| v / n).collect())
}

/// Cosine similarity `dot(a, b) / (|a| |b|)`.
///
/// The product of norms is formed symmetrically so that swapping the
/// arguments yields a bit-identical result.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DeftError::dim(a.len(), b.len()));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(DeftError::DegenerateInput("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Cosine similarity together with its gradient with respect to `a`.
///
/// d cos(a, b) / da = b / (|a||b|) - cos * a / |a|^2
pub(crate) fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    let inv = 1.0 / (na * nb);
    let cos = dot(a, b) * inv;
    let scale_a = cos / (na * na);
    let grad = a.iter().zip(b).map(|(&x, &y)| y * inv - scale_a * x).collect();
    (cos, grad)
}

/// Softmax of `sims / tau` with max-subtraction.
pub fn softmax_over_sims(sims: &[f64], tau: Temperature) -> Result<Vec<f64>> {
    if sims.is_empty() {
        return Err(DeftError::EmptyInput("softmax over an empty vector".into()));
    }
    Ok(softmax_scaled(sims, 1.0 / tau.get()))
}

pub(crate) fn softmax_scaled(values: &[f64], scale: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|&v| ((v - max) * scale).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// `log(sum(exp(v * scale)))` evaluated stably.
pub(crate) fn log_sum_exp_scaled(values: &[f64], scale: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = values.iter().map(|&v| ((v - max) * scale).exp()).sum();
    max * scale + total.ln()
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `ln(1 + e^x)` without overflow or loss of precision in either tail.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DeftError::dim(rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(DeftError::dim(cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Rescales every row to unit norm.
    pub fn normalize_rows(&mut self) -> Result<()> {
        for i in 0..self.rows {
            let unit = normalize(self.row(i))?;
            self.row_mut(i).copy_from_slice(&unit);
        }
        Ok(())
    }

    /// Row-vector times matrix: `x · self`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += xi * m;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tau(t: f64) -> Temperature {
        Temperature::new(t).unwrap()
    }

    #[test]
    fn cosine_basic_cases() {
        let u = normalize(&[0.3, -0.4, 0.5]).unwrap();
        assert!((cosine_sim(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_sim(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(DeftError::Dimension { .. })
        ));
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(DeftError::DegenerateInput(_))));
    }

    #[test]
    fn cosine_fuzz_bounded_and_symmetric() {
        let mut rng = seeded_rng(7);
        for _ in 0..100_000 {
            let d = rng.random_range(2..16);
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1e3..1e3)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1e3..1e3)).collect();
            let c = cosine_sim(&a, &b).unwrap();
            assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&c));
            assert_eq!(c.to_bits(), cosine_sim(&b, &a).unwrap().to_bits());
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_over_sims(&[0.2; 5], tau(0.01)).unwrap();
        for v in &p {
            assert!((v - 0.2).abs() < 1e-12);
        }
        let p = softmax_over_sims(&[0.5, 0.3], tau(0.1)).unwrap();
        assert!((p[0] - 0.8808).abs() < 1e-4);
        assert!((p[1] - 0.1192).abs() < 1e-4);
        let shifted = softmax_over_sims(&[7.5, 7.3], tau(0.1)).unwrap();
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(matches!(softmax_over_sims(&[], tau(1.0)), Err(DeftError::EmptyInput(_))));
    }

    #[test]
    fn softmax_extreme_magnitudes_stay_on_simplex() {
        let mut rng = seeded_rng(3);
        for _ in 0..2000 {
            let k = rng.random_range(1..20);
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-1e4..1e4)).collect();
            let p = softmax_over_sims(&v, tau(rng.random_range(0.001..10.0))).unwrap();
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(argmax(&p), argmax(&v));
        }
    }

    #[test]
    fn temperature_rejects_non_positive() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
        assert_eq!(Temperature::default().get(), 0.01);
    }

    #[test]
    fn rng_is_deterministic() {
        let mut a = seeded_rng(0);
        let mut b = seeded_rng(0);
        let xs: Vec<u64> = (0..1000).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..1000).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
        let mut c = seeded_rng(1);
        let zs: Vec<u64> = (0..1000).map(|_| c.random()).collect();
        assert_ne!(xs, zs);
    }

    #[test]
    fn rng_uniform_buckets() {
        let mut rng = seeded_rng(42);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            counts[rng.random_range(0..10)] += 1;
        }
        for c in counts {
            assert!((950..=1050).contains(&c), "bucket {c}");
        }
    }

    #[test]
    fn cosine_gradient_matches_central_differences() {
        let mut rng = seeded_rng(11);
        for _ in 0..50 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = cosine_with_grad(&a, &b);
            for j in 0..5 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[j] += 1e-6;
                am[j] -= 1e-6;
                let fd = (cosine_sim(&ap, &b).unwrap() - cosine_sim(&am, &b).unwrap()) / 2e-6;
                assert!((fd - g[j]).abs() < 1e-6);
            }
        }
    }
}

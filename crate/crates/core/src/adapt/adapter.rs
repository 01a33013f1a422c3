//! Image-space adapters: identity, low-rank residual (PEFT surrogate) and a
//! full `d x d` linear map (FFT surrogate).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DeftError, Result};
use crate::kernels::{dot, norm, seeded_rng, Embedding, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    Identity,
    LowRank,
    Full,
}

/// Adapter parameters. Unused blocks are `0 x 0`.
///
/// * `LowRank`: `out = normalize(x + residual_scale * (x A) B)`, `A: d x rank`, `B: rank x d`.
/// * `Full`: `out = x W`, `W: d x d`, initialized at the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub mode: AdapterMode,
    pub dim: usize,
    pub rank: usize,
    pub residual_scale: f64,
    pub a: Matrix,
    pub b: Matrix,
    pub w: Matrix,
}

/// Gradients with the same block layout as [`AdapterParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub a: Matrix,
    pub b: Matrix,
    pub w: Matrix,
}

impl AdapterGrads {
    pub fn zeros_like(p: &AdapterParams) -> Self {
        Self {
            a: Matrix::zeros(p.a.rows, p.a.cols),
            b: Matrix::zeros(p.b.rows, p.b.cols),
            w: Matrix::zeros(p.w.rows, p.w.cols),
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for v in self.a.data.iter_mut().chain(&mut self.b.data).chain(&mut self.w.data) {
            *v *= s;
        }
    }
}

/// Intermediates kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AdapterCache {
    /// `x A` (low-rank only).
    projected: Vec<f64>,
    /// Pre-normalization output (low-rank only).
    hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl AdapterParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            mode: AdapterMode::Identity,
            dim,
            rank: 0,
            residual_scale: 0.0,
            a: Matrix::zeros(0, 0),
            b: Matrix::zeros(0, 0),
            w: Matrix::zeros(0, 0),
        }
    }

    /// Low-rank adapter at zero residual: `A` is drawn with entries of
    /// standard deviation `1/sqrt(d)`, `B` starts at zero, so the initial
    /// output equals the normalized input while `B` still receives gradient.
    pub fn low_rank(dim: usize, rank: usize, residual_scale: f64, seed: u64) -> Result<Self> {
        if rank == 0 || rank > dim {
            return Err(DeftError::Config(format!("adapter rank must be in [1, {dim}], got {rank}")));
        }
        let mut rng = seeded_rng(seed);
        let std = 1.0 / (dim as f64).sqrt();
        let a = (0..dim * rank).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(Self {
            mode: AdapterMode::LowRank,
            dim,
            rank,
            residual_scale,
            a: Matrix::from_vec(dim, rank, a)?,
            b: Matrix::zeros(rank, dim),
            w: Matrix::zeros(0, 0),
        })
    }

    pub fn full(dim: usize) -> Self {
        Self {
            mode: AdapterMode::Full,
            dim,
            rank: 0,
            residual_scale: 0.0,
            a: Matrix::zeros(0, 0),
            b: Matrix::zeros(0, 0),
            w: Matrix::identity(dim),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.a.data.len() + self.b.data.len() + self.w.data.len()
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> Result<AdapterCache> {
        if x.len() != self.dim {
            return Err(DeftError::dim(self.dim, x.len()));
        }
        match self.mode {
            AdapterMode::Identity => Ok(AdapterCache {
                projected: Vec::new(),
                hidden: Vec::new(),
                out: x.to_vec(),
            }),
            AdapterMode::LowRank => {
                let projected = self.a.left_mul(x);
                let residual = self.b.left_mul(&projected);
                let hidden: Vec<f64> = x.iter().zip(&residual).map(|(xi, ri)| xi + self.residual_scale * ri).collect();
                let n = norm(&hidden);
                if n == 0.0 || !n.is_finite() {
                    return Err(DeftError::DegenerateInput("adapter output has zero or non-finite norm".into()));
                }
                let out = hidden.iter().map(|v| v / n).collect();
                Ok(AdapterCache { projected, hidden, out })
            }
            AdapterMode::Full => Ok(AdapterCache {
                projected: Vec::new(),
                hidden: Vec::new(),
                out: self.w.left_mul(x),
            }),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.out)
    }

    /// Accumulates into `grads` the gradient of a scalar loss with respect to
    /// the adapter parameters, given `grad_out = dL/d out`.
    pub(crate) fn backward(&self, x: &[f64], cache: &AdapterCache, grad_out: &[f64], grads: &mut AdapterGrads) {
        match self.mode {
            AdapterMode::Identity => {}
            AdapterMode::LowRank => {
                // out = h / |h|  =>  dL/dh = (g - (g . out) out) / |h|
                let n = norm(&cache.hidden);
                let g_dot_out = dot(grad_out, &cache.out);
                let grad_hidden: Vec<f64> = grad_out.iter().zip(&cache.out).map(|(g, o)| (g - g_dot_out * o) / n).collect();
                let s = self.residual_scale;
                let d = self.dim;
                let r = self.rank;
                // h = x + s (x A) B
                let grad_proj: Vec<f64> = (0..r).map(|j| s * dot(self.b.row(j), &grad_hidden)).collect();
                for (j, &u) in cache.projected.iter().enumerate() {
                    for (gb, &gh) in grads.b.row_mut(j).iter_mut().zip(&grad_hidden) {
                        *gb += s * u * gh;
                    }
                }
                for (m, &xm) in x.iter().enumerate().take(d) {
                    for (ga, &gp) in grads.a.row_mut(m).iter_mut().zip(&grad_proj) {
                        *ga += xm * gp;
                    }
                }
            }
            AdapterMode::Full => {
                for (m, &xm) in x.iter().enumerate() {
                    if xm == 0.0 {
                        continue;
                    }
                    let gw = grads.w.row_mut(m);
                    for (g, &go) in gw.iter_mut().zip(grad_out) {
                        *g += xm * go;
                    }
                }
            }
        }
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.a.data, &mut self.b.data, &mut self.w.data]
    }
}

/// Applies the adapter to one embedding. Identity mode returns the input
/// unchanged, bit for bit.
pub fn apply_adapter(input: &Embedding, params: &AdapterParams) -> Result<Embedding> {
    if input.dim() != params.dim {
        return Err(DeftError::dim(params.dim, input.dim()));
    }
    if params.mode == AdapterMode::Identity {
        return Ok(input.clone());
    }
    let out = params.forward(&input.to_f64())?;
    Ok(Embedding {
        values: out.iter().map(|&v| v as f32).collect(),
        normalized: params.mode == AdapterMode::LowRank,
    })
}

//! Label corruption: symmetric and instance-dependent noise.
//!
//! Both injectors always start from the true labels, so repeated injection
//! never compounds corruption.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{DeftError, Result};
use crate::kernels::{dot, normalize, seeded_rng, softmax_scaled, substream, Matrix};

const CALIBRATION_STEPS: usize = 100;
const CALIBRATION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Symmetric,
    InstanceDependent,
}

impl std::str::FromStr for NoiseFamily {
    type Err = DeftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(Self::Symmetric),
            "instance_dependent" | "instance" | "idn" => Ok(Self::InstanceDependent),
            other => Err(DeftError::Config(format!("unknown noise family '{other}'"))),
        }
    }
}

impl std::fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Symmetric => "symmetric",
            Self::InstanceDependent => "instance_dependent",
        })
    }
}

/// Record of one noise injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub target_ratio: f64,
    pub realized_ratio: f64,
    /// `K x K` row-stochastic; row = true class, column = given class.
    pub transition_matrix: Matrix,
    pub seed: u64,
}

fn check_ratio(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(DeftError::Config(format!("noise ratio must lie in [0, 1), got {r}")));
    }
    Ok(())
}

fn true_labels(ds: &LabeledDataset) -> Result<&[usize]> {
    ds.true_labels
        .as_deref()
        .ok_or_else(|| DeftError::DataValidation("noise injection requires ground-truth labels".into()))
}

fn empirical_transition(k: usize, truth: &[usize], given: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(k, k);
    let mut totals = vec![0usize; k];
    for (&t, &g) in truth.iter().zip(given) {
        m.data[t * k + g] += 1.0;
        totals[t] += 1;
    }
    for (row, &total) in totals.iter().enumerate() {
        if total == 0 {
            m.data[row * k + row] = 1.0;
        } else {
            for v in m.row_mut(row) {
                *v /= total as f64;
            }
        }
    }
    m
}

/// Flips exactly `floor(N * r)` uniformly chosen samples to a uniformly
/// drawn wrong class.
pub fn inject_symmetric_noise(ds: &LabeledDataset, r: f64, seed: u64) -> Result<(LabeledDataset, NoiseSpec)> {
    check_ratio(r)?;
    let truth = true_labels(ds)?.to_vec();
    let n = ds.len();
    let k = ds.num_classes;
    let n_flip = (n as f64 * r).floor() as usize;
    if n_flip > 0 && k < 2 {
        return Err(DeftError::Config("symmetric noise needs at least two classes".into()));
    }

    let mut rng = seeded_rng(seed);
    let mut chosen = index::sample(&mut rng, n, n_flip).into_vec();
    chosen.sort_unstable();
    let mut given = truth.clone();
    for i in chosen {
        let offset = rng.random_range(1..k);
        given[i] = (truth[i] + offset) % k;
    }

    let mut transition = Matrix::identity(k);
    if k > 1 {
        let off = r / (k as f64 - 1.0);
        for a in 0..k {
            for b in 0..k {
                transition.data[a * k + b] = if a == b { 1.0 - r } else { off };
            }
        }
    }

    let out = LabeledDataset {
        given_labels: given,
        ..ds.clone()
    };
    let spec = NoiseSpec {
        family: NoiseFamily::Symmetric,
        target_ratio: r,
        realized_ratio: if n == 0 { 0.0 } else { n_flip as f64 / n as f64 },
        transition_matrix: transition,
        seed,
    };
    Ok((out, spec))
}

/// Per-sample quantities of the instance-dependent generator.
#[derive(Debug, Clone)]
pub(crate) struct InstanceDraw {
    /// Probability mass the projection softmax puts on wrong classes.
    pub flip_score: f64,
    pub uniform: f64,
    pub destination: usize,
}

/// Projection softmax `softmax(sqrt(d) * <x, w_k>)` of one sample, the draw
/// deciding whether it flips, and the class it would flip to (sampled from
/// the softmax with the true class removed).
pub(crate) fn instance_draw(x: &[f64], true_label: usize, directions: &[Vec<f64>], seed: u64, stream: u64) -> InstanceDraw {
    let scale = (x.len() as f64).sqrt();
    let unit = normalize(x).unwrap_or_else(|_| x.to_vec());
    let proj: Vec<f64> = directions.iter().map(|w| dot(&unit, w)).collect();
    let q = softmax_scaled(&proj, scale);
    let flip_score = 1.0 - q[true_label];

    let mut rng = substream(seed, stream);
    let uniform: f64 = rng.random();
    let pick: f64 = rng.random();

    let k = q.len();
    let mut destination = (true_label + 1) % k.max(1);
    if flip_score > 0.0 {
        let target = pick * flip_score;
        let mut acc = 0.0;
        for (c, &p) in q.iter().enumerate() {
            if c == true_label {
                continue;
            }
            acc += p;
            destination = c;
            if acc > target {
                break;
            }
        }
    }
    InstanceDraw {
        flip_score,
        uniform,
        destination,
    }
}

fn flips_at(draws: &[InstanceDraw], multiplier: f64) -> usize {
    draws.iter().filter(|d| d.uniform < (multiplier * d.flip_score).min(1.0)).count()
}

/// Instance-dependent corruption.
///
/// `K` random unit directions are drawn from the seed. Each sample gets the
/// projection softmax `q = softmax(sqrt(d) * <x, w_k>)`, a flip score
/// `s = 1 - q[y*]` and a private uniform draw `u`. The sample flips when
/// `u < min(1, c * s)`, where the shared multiplier `c` is found by bisection
/// so that the realized ratio lands within 0.02 of `r`. A flipped label is
/// drawn from `q` restricted to the wrong classes.
pub fn inject_instance_noise(ds: &LabeledDataset, r: f64, seed: u64) -> Result<(LabeledDataset, NoiseSpec)> {
    check_ratio(r)?;
    let truth = true_labels(ds)?.to_vec();
    let n = ds.len();
    let k = ds.num_classes;
    if r == 0.0 || n == 0 {
        let spec = NoiseSpec {
            family: NoiseFamily::InstanceDependent,
            target_ratio: r,
            realized_ratio: 0.0,
            transition_matrix: empirical_transition(k, &truth, &truth),
            seed,
        };
        let out = LabeledDataset {
            given_labels: truth,
            ..ds.clone()
        };
        return Ok((out, spec));
    }
    if k < 2 {
        return Err(DeftError::Config("instance noise needs at least two classes".into()));
    }

    let mut dir_rng = substream(seed, 0);
    let directions: Vec<Vec<f64>> = (0..k)
        .map(|_| loop {
            let v: Vec<f64> = (0..ds.dim).map(|_| dir_rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            if let Ok(u) = normalize(&v) {
                break u;
            }
        })
        .collect();

    let draws: Vec<InstanceDraw> = (0..n)
        .map(|i| instance_draw(&ds.embedding_f64(i), truth[i], &directions, seed, 1 + i as u64))
        .collect();

    let target = r * n as f64;
    let mut hi = 1.0;
    while (flips_at(&draws, hi) as f64) < target && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let mut best = (hi, flips_at(&draws, hi));
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let count = flips_at(&draws, mid);
        if (count as f64 - target).abs() < (best.1 as f64 - target).abs() {
            best = (mid, count);
        }
        if (count as f64) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (best.1 as f64 - target).abs() < 0.5 {
            break;
        }
    }
    let realized = best.1 as f64 / n as f64;
    if (realized - r).abs() > CALIBRATION_TOLERANCE {
        return Err(DeftError::Calibration(format!(
            "realized ratio {realized:.4} is not within {CALIBRATION_TOLERANCE} of target {r} after {CALIBRATION_STEPS} bisection steps"
        )));
    }

    let multiplier = best.0;
    let given: Vec<usize> = draws
        .iter()
        .zip(&truth)
        .map(|(d, &t)| {
            if d.uniform < (multiplier * d.flip_score).min(1.0) {
                d.destination
            } else {
                t
            }
        })
        .collect();

    let spec = NoiseSpec {
        family: NoiseFamily::InstanceDependent,
        target_ratio: r,
        realized_ratio: realized,
        transition_matrix: empirical_transition(k, &truth, &given),
        seed,
    };
    let out = LabeledDataset {
        given_labels: given,
        ..ds.clone()
    };
    Ok((out, spec))
}

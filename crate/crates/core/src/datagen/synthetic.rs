//! Synthetic aligned image/text clusters on the unit sphere.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{DeftError, Result};
use crate::kernels::{dot, normalize, substream, DeftRng, Embedding};

const PROTOTYPE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    /// Minimum pairwise angle between class prototypes, in radians.
    pub class_separation: f64,
    /// Per-coordinate standard deviation of the isotropic cluster noise.
    pub intra_class_noise: f64,
    /// Per-coordinate standard deviation added to prototypes to form text anchors.
    pub text_anchor_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            dim: 64,
            num_classes: 10,
            class_separation: 1.2,
            intra_class_noise: 0.15,
            text_anchor_jitter: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.n < self.num_classes {
            return Err(DeftError::Config(format!(
                "need N >= K >= 1, got N={} K={}",
                self.n, self.num_classes
            )));
        }
        if self.dim < 2 {
            return Err(DeftError::Config(format!("need d >= 2, got {}", self.dim)));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("intra_class_noise", self.intra_class_noise),
            ("text_anchor_jitter", self.text_anchor_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DeftError::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut DeftRng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_gaussian(rng: &mut DeftRng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim, 1.0);
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

/// Rejection-samples `k` unit prototypes whose pairwise angle is at least
/// `min_angle`.
fn place_prototypes(rng: &mut DeftRng, k: usize, dim: usize, min_angle: f64) -> Result<Vec<Vec<f64>>> {
    if k >= 2 {
        // k points on a sphere cannot all be further apart than the regular simplex.
        let simplex = (-1.0 / (k as f64 - 1.0)).acos();
        if min_angle > simplex + 1e-12 {
            return Err(DeftError::Config(format!(
                "{k} prototypes cannot have pairwise angle {min_angle:.4} rad (maximum {simplex:.4})"
            )));
        }
    }
    let max_cos = min_angle.cos();
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(k);
    for idx in 0..k {
        let mut placed = false;
        for _ in 0..PROTOTYPE_ATTEMPTS {
            let cand = unit_gaussian(rng, dim);
            if protos.iter().all(|p| dot(p, &cand) <= max_cos) {
                protos.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(DeftError::Config(format!(
                "could not place prototype {idx} of {k} in d={dim} at separation {min_angle:.4} rad"
            )));
        }
    }
    Ok(protos)
}

fn to_f32_unit(v: &[f64]) -> Result<Vec<f32>> {
    Ok(normalize(v)?.iter().map(|&x| x as f32).collect())
}

/// Generates a clean dataset of `n` samples around `K` prototypes, returning
/// it with the jittered text anchors of every class. Sample `i` belongs to
/// class `i mod K`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(LabeledDataset, Vec<Embedding>)> {
    config.validate()?;
    let (n, dim, k) = (config.n, config.dim, config.num_classes);

    let mut proto_rng = substream(config.seed, 0);
    let protos = place_prototypes(&mut proto_rng, k, dim, config.class_separation)?;

    let mut anchor_rng = substream(config.seed, 1);
    let anchors = protos
        .iter()
        .map(|p| {
            let jitter = gaussian_vec(&mut anchor_rng, dim, config.text_anchor_jitter);
            let v: Vec<f64> = p.iter().zip(&jitter).map(|(a, b)| a + b).collect();
            Embedding::normalized(&v)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sample_rng = substream(config.seed, 2);
    let mut embeddings = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % k;
        let noise = gaussian_vec(&mut sample_rng, dim, config.intra_class_noise);
        let v: Vec<f64> = protos[label].iter().zip(&noise).map(|(a, b)| a + b).collect();
        // A zero vector has probability zero; fall back to the prototype.
        let row = to_f32_unit(&v).or_else(|_| to_f32_unit(&protos[label]))?;
        embeddings.extend_from_slice(&row);
        labels.push(label);
    }

    let ds = LabeledDataset::new(dim, k, embeddings, labels.clone(), Some(labels))?;
    Ok((ds, anchors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{argmax, cosine_sim};

    fn nearest_anchor_accuracy(ds: &LabeledDataset, anchors: &[Embedding]) -> f64 {
        let a: Vec<Vec<f64>> = anchors.iter().map(Embedding::to_f64).collect();
        let correct = (0..ds.len())
            .filter(|&i| {
                let x = ds.embedding_f64(i);
                let sims: Vec<f64> = a.iter().map(|t| cosine_sim(&x, t).unwrap()).collect();
                argmax(&sims) == ds.reference_labels()[i]
            })
            .count();
        correct as f64 / ds.len() as f64
    }

    #[test]
    fn degenerate_clusters_equal_prototypes() {
        let cfg = SyntheticConfig {
            n: 50,
            dim: 8,
            num_classes: 5,
            intra_class_noise: 0.0,
            text_anchor_jitter: 0.0,
            ..Default::default()
        };
        let (ds, anchors) = generate_synthetic(&cfg).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.embedding(i), anchors[ds.given_labels[i]].values.as_slice());
        }
        assert_eq!(nearest_anchor_accuracy(&ds, &anchors), 1.0);
        assert_eq!(ds.true_labels.as_ref().unwrap(), &ds.given_labels);
    }

    #[test]
    fn default_geometry_is_nearly_separable() {
        let cfg = SyntheticConfig {
            n: 1000,
            dim: 64,
            num_classes: 10,
            intra_class_noise: 0.15,
            seed: 5,
            ..Default::default()
        };
        let (ds, anchors) = generate_synthetic(&cfg).unwrap();
        assert!(nearest_anchor_accuracy(&ds, &anchors) >= 0.99);
        assert!(ds.normalized);
    }

    #[test]
    fn same_seed_is_identical() {
        let cfg = SyntheticConfig {
            n: 200,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 10, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap().0, generate_synthetic(&other).unwrap().0);
    }

    #[test]
    fn infeasible_separation_is_config_error() {
        let cfg = SyntheticConfig {
            n: 10,
            dim: 3,
            num_classes: 10,
            class_separation: 2.0,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(DeftError::Config(_))));
        let cfg = SyntheticConfig {
            n: 10,
            dim: 2,
            num_classes: 4,
            class_separation: 1.9,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(DeftError::Config(_))));
    }

    #[test]
    fn prototypes_respect_min_angle() {
        let mut rng = substream(1, 0);
        let protos = place_prototypes(&mut rng, 6, 16, 1.3).unwrap();
        for i in 0..6 {
            for j in 0..i {
                assert!(dot(&protos[i], &protos[j]).acos() >= 1.3 - 1e-12);
            }
        }
    }
}

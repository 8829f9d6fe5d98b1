use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::seeds;

use super::FeatureSplitDataset;

/// Generates a Gaussian-mixture classification task and splits each sample's
/// features into a federated block (first `d_f` coordinates) and a
/// centralized block (remaining `d_c`).
///
/// Each class mean is a random direction scaled to norm `class_separation` in
/// the full `(d_f + d_c)`-space, redrawn until both halves are nonzero (when
/// both halves have at least two dimensions), so neither half alone is fully
/// separating. Samples are unit-variance Gaussians around their class mean.
/// Labels cycle `i % C`, which keeps classes balanced and every class
/// present.
pub fn generate_synthetic(
    num_classes: usize,
    num_samples: usize,
    fed_dim: usize,
    cen_dim: usize,
    class_separation: f64,
    seed: u64,
) -> Result<FeatureSplitDataset> {
    if num_classes < 2 {
        return Err(CoreError::Config("need at least two classes".into()));
    }
    if num_samples < num_classes {
        return Err(CoreError::Config(
            "need at least one sample per class".into(),
        ));
    }
    let full_dim = fed_dim + cen_dim;
    if full_dim < 2 {
        return Err(CoreError::Config("d_f + d_c must be at least 2".into()));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(CoreError::Config(
            "class_separation must be a nonnegative real".into(),
        ));
    }

    let mut rng = seeds::rng(seed, "synthetic");
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut mean = Array1::zeros(full_dim);
        if class_separation > 0.0 {
            loop {
                for v in mean.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let fed_norm: f64 = mean
                    .iter()
                    .take(fed_dim)
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                let cen_norm: f64 = mean
                    .iter()
                    .skip(fed_dim)
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                let halves_ok = (fed_dim < 2 || fed_norm > 1e-9) && (cen_dim < 2 || cen_norm > 1e-9);
                let norm = (fed_norm * fed_norm + cen_norm * cen_norm).sqrt();
                if halves_ok && norm > 1e-9 {
                    mean.mapv_inplace(|v| v / norm * class_separation);
                    break;
                }
            }
        }
        means.push(mean);
    }

    let mut fed = Array2::zeros((num_samples, fed_dim));
    let mut cen = Array2::zeros((num_samples, cen_dim));
    let mut labels = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let label = i % num_classes;
        labels.push(label);
        let mean = &means[label];
        for j in 0..fed_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            fed[[i, j]] = mean[j] + noise;
        }
        for j in 0..cen_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            cen[[i, j]] = mean[fed_dim + j] + noise;
        }
    }
    FeatureSplitDataset::new(fed, cen, labels, num_classes)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cluster centers are drawn uniformly from `[-w, w]^dim`.
pub const LAYOUT_HALF_WIDTH: f64 = 5.0;

/// Minimum center separation, in units of `spread`.
pub const MIN_SEPARATION: f64 = 4.0;

/// Rejection attempts allowed per center before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Places cluster centers by rejection sampling.
pub fn layout_centers(n_classes: usize, dim: usize, spread: f64, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let min_dist = MIN_SEPARATION * spread;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let c: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(-LAYOUT_HALF_WIDTH..=LAYOUT_HALF_WIDTH))
                .collect();
            let ok = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_dist
            });
            if ok {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidArgument(format!(
                "infeasible layout: could not place center {class} of {n_classes} with \
                 separation {min_dist} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )));
        }
    }
    Ok(centers)
}

/// Isotropic Gaussian clusters, `n_per_class` samples each, grouped by class.
///
/// Centers are at least `4·spread` apart. A zero `spread` is accepted as the
/// degenerate limit where every sample sits on its center.
pub fn gen_gaussian_mixture(
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_per_class == 0 || n_classes == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "n_per_class, n_classes and dim must be positive".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("spread must be non-negative, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = layout_centers(n_classes, dim, spread, &mut rng)?;
    let n = n_per_class * n_classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(c + spread * noise);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::new(vec![n, dim], data)?, labels, n_classes)
}

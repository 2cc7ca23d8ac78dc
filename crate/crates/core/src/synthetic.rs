//! Planted Gaussian cluster generator for demos, benchmarks and tests.

use crate::dataset::{ConceptLabel, EmbeddingStore};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::ids::PointId;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// Recipe for a mixture of isotropic Gaussian clusters projected to the unit
/// sphere. Cluster `k` becomes class `k` in the returned label map.
#[derive(Clone, Debug)]
pub struct ClusterSpec {
    pub clusters: usize,
    pub dim: usize,
    /// One entry per cluster.
    pub points_per_cluster: Vec<usize>,
    /// Isotropic noise scale around each unit-norm center.
    pub noise: f64,
    /// Centers are re-drawn until all pairwise |cosines| fall below this.
    pub max_center_cosine: f64,
    pub seed: u64,
}

impl ClusterSpec {
    fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.dim == 0 {
            return Err(Error::Argument("clusters and dim must be positive".into()));
        }
        if self.points_per_cluster.len() != self.clusters {
            return Err(Error::Argument(format!(
                "{} cluster sizes for {} clusters",
                self.points_per_cluster.len(),
                self.clusters
            )));
        }
        if self.points_per_cluster.iter().any(|n| *n == 0) {
            return Err(Error::Argument("every cluster needs >= 1 point".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Argument("noise must be finite and >= 0".into()));
        }
        if !(0.0 < self.max_center_cosine && self.max_center_cosine <= 1.0) {
            return Err(Error::Argument(
                "max_center_cosine must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws separated cluster centers, then `points_per_cluster[k]` noisy
/// points around each, unit-normalized. Ids are assigned `0..N-1` in cluster
/// order; labels carry `class_id = k` with no attributes.
pub fn gaussian_clusters(
    spec: &ClusterSpec,
) -> Result<(EmbeddingStore, BTreeMap<PointId, ConceptLabel>)> {
    spec.validate()?;
    let mut center_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "centers", 0));
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.clusters);
    let mut attempts = 0usize;
    while centers.len() < spec.clusters {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Argument(format!(
                "could not place {} centers in {} dims below pairwise cosine {}",
                spec.clusters, spec.dim, spec.max_center_cosine
            )));
        }
        let cand = unit_gaussian(spec.dim, &mut center_rng);
        let separated = centers.iter().all(|c| {
            let cos: f64 = c.iter().zip(&cand).map(|(a, b)| a * b).sum();
            cos.abs() <= spec.max_center_cosine
        });
        if separated {
            centers.push(cand);
        }
    }

    let total: usize = spec.points_per_cluster.iter().sum();
    let mut data = Array2::zeros((total, spec.dim));
    let mut labels = BTreeMap::new();
    let mut next = 0u32;
    for (k, (&count, center)) in spec
        .points_per_cluster
        .iter()
        .zip(&centers)
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "cluster", k as u64));
        for _ in 0..count {
            let id = PointId(next);
            for (d, c) in center.iter().enumerate() {
                let n: f64 = rng.sample(StandardNormal);
                data[[next as usize, d]] = c + spec.noise * n;
            }
            labels.insert(id, ConceptLabel::of_class(k as u32));
            next += 1;
        }
    }
    let store =
        EmbeddingStore::new((0..total as u32).map(PointId).collect(), data, false)?.normalize()?;
    Ok((store, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clusters_are_separated_and_deterministic() {
        let spec = ClusterSpec {
            clusters: 4,
            dim: 12,
            points_per_cluster: vec![10, 10, 10, 5],
            noise: 0.08,
            max_center_cosine: 0.5,
            seed: 5,
        };
        let (store, labels) = gaussian_clusters(&spec).unwrap();
        assert_eq!(store.len(), 35);
        assert!(store.is_normalized());
        assert_eq!(labels.len(), 35);
        let (store2, _) = gaussian_clusters(&spec).unwrap();
        assert_eq!(store.data(), store2.data());

        // same-cluster cosines should dominate cross-cluster ones
        let same = store.row(PointId(0)).unwrap().dot(&store.row(PointId(1)).unwrap());
        let cross = store.row(PointId(0)).unwrap().dot(&store.row(PointId(30)).unwrap());
        assert!(same > cross, "same {same} cross {cross}");
    }

    #[test]
    fn impossible_separation_is_rejected() {
        let spec = ClusterSpec {
            clusters: 40,
            dim: 2,
            points_per_cluster: vec![1; 40],
            noise: 0.0,
            max_center_cosine: 0.1,
            seed: 1,
        };
        assert!(gaussian_clusters(&spec).is_err());
    }
}

//! Statistical outlier removal (SOR).
//!
//! Each point's mean Euclidean distance to its `k` nearest neighbours is
//! computed; points whose mean exceeds `mu + sigma_mult * sigma` over the
//! population of means are dropped. Survivors keep their relative order.

use crate::cloud::{sq_dist, PointCloud};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SorConfig {
    pub k_neighbors: usize,
    pub sigma_mult: f64,
}

impl Default for SorConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 2,
            sigma_mult: 1.1,
        }
    }
}

/// Mean distance from every point to its `k` nearest other points.
pub fn knn_mean_distances<T: Scalar>(cloud: &PointCloud<T>, k: usize) -> Vec<T> {
    let pts = cloud.points();
    let mut dists = Vec::with_capacity(pts.len());
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            dists.clear();
            dists.extend(
                pts.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| sq_dist(p, q)),
            );
            dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
            let mut nearest: Vec<T> = dists[..k].to_vec();
            nearest.sort_by(|a, b| a.partial_cmp(b).unwrap());
            nearest.iter().map(|d| d.sqrt()).sum::<T>() / T::of(k as f64)
        })
        .collect()
}

pub fn sor_filter<T: Scalar>(cloud: &PointCloud<T>, config: &SorConfig) -> Result<PointCloud<T>> {
    if config.k_neighbors == 0 {
        return Err(Error::invalid("SOR needs k_neighbors >= 1"));
    }
    if !(config.sigma_mult > 0.0) {
        return Err(Error::invalid("SOR needs sigma_mult > 0"));
    }
    if cloud.len() <= config.k_neighbors {
        return Err(Error::invalid(format!(
            "SOR with k = {} needs more than {} points, got {}",
            config.k_neighbors,
            config.k_neighbors,
            cloud.len()
        )));
    }
    let means: Vec<f64> = knn_mean_distances(cloud, config.k_neighbors)
        .into_iter()
        .map(Scalar::to_f64_lossy)
        .collect();
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sigma = (means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / n).sqrt();
    let threshold = mu + config.sigma_mult * sigma;
    let kept: Vec<_> = cloud
        .points()
        .iter()
        .zip(&means)
        .filter(|(_, &m)| m <= threshold)
        .map(|(p, _)| *p)
        .collect();
    if kept.is_empty() {
        return Ok(cloud.clone());
    }
    PointCloud::new(kept, cloud.label())
}

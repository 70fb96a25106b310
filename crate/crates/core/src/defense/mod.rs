//! Client-side defenses: curated batch selection and clipped Gaussian noise.
//!
//! Selection functions take planar locations in meters and return the indices
//! of the points to train on.

pub mod dbscan;
pub mod dp;

use log::warn;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dbscan::{centroid, dbscan, Cluster, ClusterAssignment};
pub use dp::{clip_gradient, gaussian_mechanism, DpConfig};

use dbscan::dist2;

/// Which subset of its round data a client trains on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    Full,
    Diverse { eps_km: f64 },
    Farthest { eps_km: f64, num: usize },
    /// A uniform random subset as large as the `Diverse` output at `eps_km`;
    /// the baseline the diverse rule is compared against.
    RandomMatched { eps_km: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub min_pts: usize,
    /// Keep noise points as singleton clusters.
    pub keep_noise: bool,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            min_pts: 1,
            keep_noise: true,
        }
    }
}

/// Clusters used by the selection rules; noise points become singletons when kept.
fn selection_clusters(points: &[[f64; 2]], eps_m: f64, opts: SelectionOptions) -> Vec<Cluster> {
    let a = dbscan(points, eps_m, opts.min_pts);
    let mut clusters = a.clusters.clone();
    if opts.keep_noise {
        clusters.extend(a.noise().map(|i| Cluster {
            members: vec![i],
            centroid: points[i],
        }));
    }
    clusters
}

/// Members ordered by distance to the cluster centroid, lowest index on ties.
fn by_centrality(points: &[[f64; 2]], c: &Cluster) -> Vec<usize> {
    let mut m = c.members.clone();
    m.sort_by(|&a, &b| {
        dist2(points[a], c.centroid)
            .total_cmp(&dist2(points[b], c.centroid))
            .then(a.cmp(&b))
    });
    m
}

/// One representative per cluster: the member nearest the cluster centroid.
/// Output indices are ascending.
pub fn diverse_batch(points: &[[f64; 2]], eps_m: f64, opts: SelectionOptions) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<usize> = selection_clusters(points, eps_m, opts)
        .iter()
        .map(|c| by_centrality(points, c)[0])
        .collect();
    out.sort_unstable();
    out
}

/// `num` points taken from the clusters farthest from the whole batch's
/// centroid, most central members first within each cluster.
pub fn farthest_batch(points: &[[f64; 2]], eps_m: f64, num: usize, opts: SelectionOptions) -> Vec<usize> {
    if points.is_empty() || num == 0 {
        return Vec::new();
    }
    if num > points.len() {
        warn!("farthest batch asked for {num} of {} points; using all", points.len());
    }
    let xbar = centroid(points, 0..points.len());
    let mut clusters = selection_clusters(points, eps_m, opts);
    clusters.sort_by(|a, b| {
        dist2(b.centroid, xbar)
            .total_cmp(&dist2(a.centroid, xbar))
            .then(a.members[0].cmp(&b.members[0]))
    });
    let mut out = Vec::with_capacity(num.min(points.len()));
    for c in &clusters {
        for i in by_centrality(points, c) {
            if out.len() == num {
                return out;
            }
            out.push(i);
        }
    }
    out
}

/// `k` indices drawn uniformly without replacement, ascending.
pub fn random_subset<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut v = index::sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

/// Mean of the two per-coordinate population variances.
pub fn coordinate_variance(points: &[[f64; 2]]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let c = centroid(points, 0..points.len());
    let n = points.len() as f64;
    let vx = points.iter().map(|p| (p[0] - c[0]).powi(2)).sum::<f64>() / n;
    let vy = points.iter().map(|p| (p[1] - c[1]).powi(2)).sum::<f64>() / n;
    (vx + vy) / 2.0
}

/// Applies a policy to the round's locations. `seed` only feeds the random baseline.
pub fn select(points: &[[f64; 2]], policy: SelectionPolicy, opts: SelectionOptions, seed: u64) -> Vec<usize> {
    match policy {
        SelectionPolicy::Full => (0..points.len()).collect(),
        SelectionPolicy::Diverse { eps_km } => diverse_batch(points, eps_km * 1000.0, opts),
        SelectionPolicy::Farthest { eps_km, num } => farthest_batch(points, eps_km * 1000.0, num, opts),
        SelectionPolicy::RandomMatched { eps_km } => {
            let k = diverse_batch(points, eps_km * 1000.0, opts).len();
            random_subset(points.len(), k, &mut crate::seed::rng_for(seed, &[]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diverse_picks_medoids_and_noise() {
        let pts = [
            [0.0, 0.0],
            [1.0, 0.0],
            [0.4, 0.1],
            [100.0, 100.0],
            [101.0, 100.0],
            [100.6, 100.0],
            [500.0, 0.0],
        ];
        let sel = diverse_batch(&pts, 2.0, SelectionOptions { min_pts: 2, keep_noise: true });
        assert_eq!(sel, vec![2, 5, 6]);
        let drop = diverse_batch(&pts, 2.0, SelectionOptions { min_pts: 2, keep_noise: false });
        assert_eq!(drop, vec![2, 5]);
    }

    #[test]
    fn single_cluster_gives_one_point() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]];
        assert_eq!(diverse_batch(&pts, 5.0, SelectionOptions::default()), vec![2]);
    }

    #[test]
    fn farthest_prefers_distant_cluster() {
        let pts = [[0.0, 0.0], [0.1, 0.0], [-0.1, 0.0], [10.0, 0.0], [10.0, 0.0]];
        let sel = farthest_batch(&pts, 1.0, 2, SelectionOptions::default());
        assert_eq!(sel, vec![3, 4]);
        let one = farthest_batch(&pts, 1.0, 1, SelectionOptions::default());
        assert_eq!(one, vec![3]);
        let mut all = farthest_batch(&pts, 1.0, 5, SelectionOptions::default());
        assert_eq!(&all[..2], &[3, 4]);
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert_eq!(farthest_batch(&pts, 1.0, 9, SelectionOptions::default()).len(), 5);
    }

    #[test]
    fn variance_of_symmetric_pair() {
        assert_eq!(coordinate_variance(&[[-1.0, 0.0], [1.0, 0.0]]), 0.5);
    }
}

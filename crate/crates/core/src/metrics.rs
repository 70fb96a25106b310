//! Privacy and utility metrics over planar location sets (meters).

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::attack::{AttackResult, AttackStatus, Boundary};
use crate::error::{FedmapError, Result};

/// Default number of random projection directions.
pub const DEFAULT_PROJECTIONS: usize = 1000;

/// Exact 1-D Wasserstein-1 distance between two empirical distributions with
/// uniform mass, by integrating the difference of their quantile functions.
/// Inputs must be sorted ascending.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(FedmapError::Empty("wasserstein of an empty set".into()));
    }
    let (n, m) = (p.len(), q.len());
    if n == m {
        return Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64);
    }
    // walk the merged breakpoints i/n and j/m
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_p = (i + 1) as f64 / n as f64;
        let next_q = (j + 1) as f64 / m as f64;
        let next = next_p.min(next_q);
        total += (next - u) * (p[i] - q[j]).abs();
        u = next;
        if next_p <= next {
            i += 1;
        }
        if next_q <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

fn project(points: &[[f64; 2]], theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    let mut v: Vec<f64> = points.iter().map(|p| p[0] * c + p[1] * s).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Sliced Wasserstein-1 distance: the average over random unit directions of
/// the 1-D distance between the projected sets.
pub fn emd_sliced<R: Rng + ?Sized>(
    p: &[[f64; 2]],
    q: &[[f64; 2]],
    n_projections: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if p.is_empty() || q.is_empty() {
        return Err(FedmapError::Empty("emd of an empty location set".into()));
    }
    if n_projections == 0 {
        return Err(FedmapError::Precondition("at least one projection".into()));
    }
    let thetas: Vec<f64> = (0..n_projections).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let values: Vec<f64> = thetas
        .par_iter()
        .map(|&t| wasserstein_1d(&project(p, t), &project(q, t)).expect("non-empty"))
        .collect();
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(Estimate {
        mean,
        std_error: (var / k).sqrt(),
    })
}

/// Fraction of attacks whose endpoint fell outside the boundary.
pub fn divergence_rate(results: &[AttackResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let d = results
        .iter()
        .filter(|r| r.status == AttackStatus::DivergedOutOfBounds)
        .count();
    d as f64 / results.len() as f64
}

/// Reconstructed endpoints that stayed inside the boundary, for EMD.
pub fn retained_locations(results: &[AttackResult]) -> Vec<[f64; 2]> {
    results
        .iter()
        .filter(|r| r.status != AttackStatus::DivergedOutOfBounds && r.status != AttackStatus::Degenerate)
        .map(|r| r.x_dlg)
        .collect()
}

pub fn centroid_distance(x_dlg: [f64; 2], centroid: [f64; 2]) -> f64 {
    ((x_dlg[0] - centroid[0]).powi(2) + (x_dlg[1] - centroid[1]).powi(2)).sqrt()
}

/// EMD between `p` and equally many uniform draws inside `boundary`, averaged
/// over `n_samples` realizations.
pub fn random_baseline_emd<R: Rng + ?Sized>(
    p: &[[f64; 2]],
    boundary: &Boundary,
    n_samples: usize,
    n_projections: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(FedmapError::Precondition("at least one realization".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_samples {
        let q: Vec<[f64; 2]> = (0..p.len()).map(|_| boundary.sample_uniform(rng)).collect();
        total += emd_sliced(p, &q, n_projections, rng)?.mean;
    }
    Ok(total / n_samples as f64)
}

/// Empirical CDF as `(value, fraction <= value)` pairs, sorted by value.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

//! Closed-form reconstruction and error bounds for a single gradient step.
//!
//! Everything here works in the model's input coordinates; the closed form is
//! an affine combination of the batch locations, so it can be evaluated on
//! any affinely related coordinates (meters) through [`BiasTerms::combine`].

use serde::Serialize;

use crate::error::{FedmapError, Result};
use crate::nn::{weight_gradient, DropoutMode, ModelWeights, Sample, BIAS_PARTIAL_FLOOR};

/// Per-sample partials `g_i` of the loss with respect to the dominant first-layer
/// bias unit, and their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasTerms {
    pub unit: usize,
    pub g: Vec<f64>,
    pub g_bar: f64,
}

impl BiasTerms {
    /// Computes the terms in inference mode; fails when `|g_bar|` is below the floor.
    pub fn new(weights: &ModelWeights, batch: &[Sample]) -> Result<Self> {
        let grad = weight_gradient(weights, batch, DropoutMode::Inference)?;
        let bp = grad
            .dominant_bias_partials()
            .expect("weight_gradient keeps per-sample partials");
        if !(bp.mean.abs() > BIAS_PARTIAL_FLOOR) {
            return Err(FedmapError::AssumptionViolation {
                g_bar_abs: bp.mean.abs(),
                threshold: BIAS_PARTIAL_FLOOR,
            });
        }
        Ok(Self {
            unit: bp.unit,
            g: bp.per_sample,
            g_bar: bp.mean,
        })
    }

    /// `(1/B) sum (g_i / g_bar) p_i` over any per-sample points.
    pub fn combine(&self, points: &[[f64; 2]]) -> [f64; 2] {
        assert_eq!(points.len(), self.g.len(), "one point per sample");
        let b = self.g.len() as f64;
        let mut out = [0.0, 0.0];
        for (gi, p) in self.g.iter().zip(points) {
            let c = gi / (self.g_bar * b);
            out[0] += c * p[0];
            out[1] += c * p[1];
        }
        out
    }
}

fn mean_point(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    [
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    ]
}

fn locations(batch: &[Sample]) -> Vec<[f64; 2]> {
    batch.iter().map(|s| s.x).collect()
}

/// The location a perfect gradient match must reconstruct.
pub fn closed_form_xdlg(weights: &ModelWeights, batch: &[Sample]) -> Result<[f64; 2]> {
    Ok(BiasTerms::new(weights, batch)?.combine(&locations(batch)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBound {
    /// Distance from the batch centroid via the covariance expression.
    pub covariance_error: f64,
    /// The same distance computed directly from the closed form.
    pub direct_error: f64,
    pub bound: f64,
}

/// Distance of the closed-form reconstruction from the centroid, two ways, and
/// the half-sum upper bound.
pub fn theorem1_error_and_bound(weights: &ModelWeights, batch: &[Sample]) -> Result<ErrorBound> {
    let terms = BiasTerms::new(weights, batch)?;
    let xs = locations(batch);
    Ok(theorem1_from_terms(&terms, &xs))
}

pub fn theorem1_from_terms(terms: &BiasTerms, xs: &[[f64; 2]]) -> ErrorBound {
    let b = xs.len() as f64;
    let xbar = mean_point(xs);
    let mut cov = [0.0, 0.0];
    let mut half_sum = 0.0;
    for (gi, x) in terms.g.iter().zip(xs) {
        let dg = gi - terms.g_bar;
        let dx = [x[0] - xbar[0], x[1] - xbar[1]];
        cov[0] += dg * dx[0];
        cov[1] += dg * dx[1];
        half_sum += dg * dg + dx[0] * dx[0] + dx[1] * dx[1];
    }
    let scale = b * terms.g_bar.abs();
    let x_dlg = terms.combine(xs);
    ErrorBound {
        covariance_error: (cov[0].hypot(cov[1])) / scale,
        direct_error: (x_dlg[0] - xbar[0]).hypot(x_dlg[1] - xbar[1]),
        bound: half_sum / (2.0 * scale),
    }
}

/// Largest observed ratio `|grad_i - grad_j| / |(x_i, y_i) - (x_j, y_j)|` over
/// all pairs, using full per-sample weight gradients. Zero for a single sample.
pub fn pairwise_lipschitz(weights: &ModelWeights, batch: &[Sample]) -> Result<f64> {
    let grads: Vec<Vec<f64>> = batch
        .iter()
        .map(|s| weight_gradient(weights, std::slice::from_ref(s), DropoutMode::Inference).map(|g| g.into_flat()))
        .collect::<Result<_>>()?;
    let mut l: f64 = 0.0;
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            let (a, b) = (&batch[i], &batch[j]);
            let d = ((a.x[0] - b.x[0]).powi(2) + (a.x[1] - b.x[1]).powi(2) + (a.y - b.y).powi(2)).sqrt();
            if d == 0.0 {
                continue;
            }
            let dg = grads[i]
                .iter()
                .zip(&grads[j])
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
                .sqrt();
            l = l.max(dg / d);
        }
    }
    Ok(l)
}

/// `(L^2 / (B |g_bar|)) sum (a_L |x_i - x_bar|^2 + (y_i - y_bar)^2)` with `a_L = 1 + 1/(2 L^2)`.
pub fn theorem2_bound(batch: &[Sample], l: f64, g_bar_abs: f64) -> Result<f64> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(FedmapError::Precondition(format!("Lipschitz constant must be positive, got {l}")));
    }
    if batch.is_empty() {
        return Err(FedmapError::Empty("bound of an empty batch".into()));
    }
    let xs = locations(batch);
    let xbar = mean_point(&xs);
    let b = batch.len() as f64;
    let ybar = batch.iter().map(|s| s.y).sum::<f64>() / b;
    let a_l = 1.0 + 1.0 / (2.0 * l * l);
    let sum: f64 = batch
        .iter()
        .map(|s| a_l * ((s.x[0] - xbar[0]).powi(2) + (s.x[1] - xbar[1]).powi(2)) + (s.y - ybar).powi(2))
        .sum();
    Ok(l * l / (b * g_bar_abs) * sum)
}

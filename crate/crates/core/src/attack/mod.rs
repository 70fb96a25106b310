//! Location reconstruction from an observed client update by gradient matching.
//!
//! The attacker optimizes a single dummy sample `(x', y')` in the model's
//! standardized input space so that the weight gradient it induces points in
//! the same direction as the observed update.

pub mod oracle;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FedmapError, Result};
use crate::model::Standardizer;
use crate::nn::{forward, DropoutMode, GradientVector, MatchObjective, ModelWeights};

pub use oracle::{
    closed_form_xdlg, pairwise_lipschitz, theorem1_error_and_bound, theorem1_from_terms, theorem2_bound, BiasTerms, ErrorBound,
};

/// Axis-aligned area of interest in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Boundary {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        if !(max[0] > min[0] && max[1] > min[1]) {
            return Err(FedmapError::Config(format!("boundary {min:?}..{max:?} has no area")));
        }
        Ok(Self { min, max })
    }

    /// Bounding box of `points` grown by `margin` meters on every side.
    pub fn around(points: impl IntoIterator<Item = [f64; 2]>, margin: f64) -> Result<Self> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        if !min[0].is_finite() {
            return Err(FedmapError::Empty("boundary of no points".into()));
        }
        Self::new([min[0] - margin, min[1] - margin], [max[0] + margin, max[1] + margin])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        [
            self.min[0] + rng.random::<f64>() * self.width(),
            self.min[1] + rng.random::<f64>() * self.height(),
        ]
    }

    /// Centers of the `pitch`-sized cells tiling the boundary.
    pub fn grid_centers(&self, pitch: f64) -> Vec<[f64; 2]> {
        let nx = (self.width() / pitch).ceil().max(1.0) as usize;
        let ny = (self.height() / pitch).ceil().max(1.0) as usize;
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                out.push([
                    (self.min[0] + (i as f64 + 0.5) * pitch).min(self.max[0]),
                    (self.min[1] + (j as f64 + 0.5) * pitch).min(self.max[1]),
                ]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitStrategy {
    /// A random center of a square grid over the boundary.
    GridRandom { pitch_m: f64 },
    /// The batch centroid estimate plus isotropic Gaussian noise.
    CentroidNoise { sigma_m: f64 },
    /// The previous round's reconstruction, else `CentroidNoise`.
    PreviousRound { sigma_m: f64 },
    Fixed { point: [f64; 2] },
}

impl Default for InitStrategy {
    fn default() -> Self {
        Self::GridRandom { pitch_m: 350.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub max_iters: usize,
    pub alpha: f64,
    /// Step size in standardized units.
    pub attack_eta: f64,
    /// Halve the step after this many iterations without a new best loss.
    pub decay_after: usize,
    pub optimizer: Optimizer,
    pub init: InitStrategy,
    pub patience: usize,
    /// Movement (standardized units) below which an iteration counts as still.
    pub move_tol: f64,
    /// Initial RSRP guess; the standardizer's label mean when absent.
    pub label_init: Option<f64>,
    /// Before descending, mirror the initial label through the dummy's
    /// prediction when that scores better. The loss only sees the sign of the
    /// dummy residual, so descent alone cannot fix a wrong starting side.
    pub label_sign_probe: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            max_iters: 400_000,
            alpha: 0.0,
            attack_eta: 0.01,
            decay_after: 1000,
            optimizer: Optimizer::Adam,
            init: InitStrategy::default(),
            patience: 10,
            move_tol: 1e-6,
            label_init: None,
            label_sign_probe: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.patience == 0 || !(self.attack_eta > 0.0) || self.decay_after == 0 {
            return Err(FedmapError::Config(
                "attack needs max_iters >= 1, patience >= 1, decay_after >= 1, attack_eta > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStatus {
    /// The dummy stopped moving for `patience` iterations.
    Converged,
    /// The iteration cap was reached first.
    EarlyStopped,
    /// Terminated outside the boundary.
    DivergedOutOfBounds,
    /// No usable gradient (zero target or dead dummy gradient).
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackResult {
    /// Reconstructed location, meters.
    pub x_dlg: [f64; 2],
    /// Reconstructed RSRP, original units.
    pub y_dlg: f64,
    pub final_loss: f64,
    pub cosine: f64,
    pub iterations: usize,
    pub status: AttackStatus,
    pub start: [f64; 2],
}

/// A dummy sample in meters and RSRP units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dummy {
    pub x: [f64; 2],
    pub y: f64,
}

/// Initial dummy for a strategy. `centroid_hint` is the attacker's rough
/// estimate of the batch centroid, `previous` the last reconstruction.
pub fn init_dummy<R: Rng + ?Sized>(
    strategy: InitStrategy,
    boundary: &Boundary,
    centroid_hint: Option<[f64; 2]>,
    previous: Option<[f64; 2]>,
    label_init: f64,
    rng: &mut R,
) -> Result<Dummy> {
    let noisy = |c: [f64; 2], sigma: f64, rng: &mut R| -> Result<[f64; 2]> {
        if sigma == 0.0 {
            return Ok(c);
        }
        let n = Normal::new(0.0, sigma).map_err(|e| FedmapError::Config(format!("init sigma: {e}")))?;
        Ok([c[0] + n.sample(rng), c[1] + n.sample(rng)])
    };
    let centre = || {
        centroid_hint.unwrap_or([
            (boundary.min[0] + boundary.max[0]) / 2.0,
            (boundary.min[1] + boundary.max[1]) / 2.0,
        ])
    };
    let x = match strategy {
        InitStrategy::Fixed { point } => point,
        InitStrategy::GridRandom { pitch_m } => {
            if !(pitch_m > 0.0) {
                return Err(FedmapError::Config("grid pitch must be positive".into()));
            }
            let centers = boundary.grid_centers(pitch_m);
            centers[rng.random_range(0..centers.len())]
        }
        InitStrategy::CentroidNoise { sigma_m } => noisy(centre(), sigma_m, rng)?,
        InitStrategy::PreviousRound { sigma_m } => match previous {
            Some(p) => p,
            None => noisy(centre(), sigma_m, rng)?,
        },
    };
    Ok(Dummy { x, y: label_init })
}

fn finish(
    st: &Standardizer,
    boundary: &Boundary,
    x: [f64; 2],
    y: f64,
    loss: f64,
    cosine: f64,
    iterations: usize,
    status: AttackStatus,
    start: [f64; 2],
) -> AttackResult {
    let x_dlg = st.invert_location(x);
    let status = if status != AttackStatus::Degenerate && !boundary.contains(x_dlg) {
        AttackStatus::DivergedOutOfBounds
    } else {
        status
    };
    AttackResult {
        x_dlg,
        y_dlg: st.invert_label(y),
        final_loss: loss,
        cosine,
        iterations,
        status,
        start,
    }
}

/// Descends the matching loss from `start` against `target` (a descent
/// direction of the weights, i.e. the client's gradient up to a positive scale).
pub fn dlg_attack(
    weights: &ModelWeights,
    target: &GradientVector,
    cfg: &AttackConfig,
    boundary: &Boundary,
    st: &Standardizer,
    start: Dummy,
) -> Result<AttackResult> {
    cfg.validate()?;
    let mut x = st.location(start.x);
    let mut y = st.label(start.y);
    let obj = match MatchObjective::new(weights, target, cfg.alpha) {
        Ok(o) => o,
        Err(FedmapError::DegenerateGradient(_)) => {
            return Ok(finish(st, boundary, x, y, f64::NAN, f64::NAN, 0, AttackStatus::Degenerate, start.x))
        }
        Err(e) => return Err(e),
    };

    if cfg.label_sign_probe {
        let pred = forward(weights, &x, DropoutMode::Inference)?;
        let mirrored = 2.0 * pred - y;
        if let (Ok(a), Ok(b)) = (obj.value(x, y), obj.value(x, mirrored)) {
            if b < a {
                y = mirrored;
            }
        }
    }

    let mut eta = cfg.attack_eta;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut still = 0;
    let (mut loss, mut cos) = (f64::NAN, f64::NAN);
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    let (b1, b2, adam_eps) = (0.9, 0.999, 1e-8);

    for it in 0..cfg.max_iters {
        let g = match obj.eval(x, y) {
            Ok(g) => g,
            Err(FedmapError::DegenerateGradient(_)) => {
                return Ok(finish(st, boundary, x, y, loss, cos, it, AttackStatus::Degenerate, start.x))
            }
            Err(e) => return Err(e),
        };
        loss = g.loss;
        cos = g.cosine;
        if loss < best - 1e-15 {
            best = loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.decay_after {
                eta *= 0.5;
                since_best = 0;
            }
        }
        let grad = [g.grad_x[0], g.grad_x[1], g.grad_y];
        let step: [f64; 3] = match cfg.optimizer {
            Optimizer::Gd => grad.map(|d| eta * d),
            Optimizer::Adam => {
                let t = (it + 1) as i32;
                let mut s = [0.0; 3];
                for k in 0..3 {
                    m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                    let mh = m[k] / (1.0 - b1.powi(t));
                    let vh = v[k] / (1.0 - b2.powi(t));
                    s[k] = eta * mh / (vh.sqrt() + adam_eps);
                }
                s
            }
        };
        x[0] -= step[0];
        x[1] -= step[1];
        y -= step[2];
        let moved = (step[0] * step[0] + step[1] * step[1] + step[2] * step[2]).sqrt();
        if !moved.is_finite() || !x[0].is_finite() || !x[1].is_finite() {
            return Ok(finish(st, boundary, x, y, loss, cos, it + 1, AttackStatus::Degenerate, start.x));
        }
        if moved < cfg.move_tol {
            still += 1;
            if still >= cfg.patience {
                return Ok(finish(st, boundary, x, y, loss, cos, it + 1, AttackStatus::Converged, start.x));
            }
        } else {
            still = 0;
        }
    }
    Ok(finish(
        st,
        boundary,
        x,
        y,
        loss,
        cos,
        cfg.max_iters,
        AttackStatus::EarlyStopped,
        start.x,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{weight_gradient, ArchConfig, DropoutMode, Sample};
    use crate::seed;

    fn unit_standardizer() -> Standardizer {
        Standardizer {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
            label_mean: 0.0,
            label_std: 1.0,
        }
    }

    #[test]
    fn grid_has_expected_cell_count() {
        let b = Boundary::new([0.0, 0.0], [3000.0, 3000.0]).unwrap();
        assert_eq!(b.grid_centers(350.0).len(), 81);
        let mut rng = seed::rng_for(1, &[]);
        let d = init_dummy(InitStrategy::default(), &b, None, None, -90.0, &mut rng).unwrap();
        assert!(b.grid_centers(350.0).contains(&d.x));
        assert_eq!(d.y, -90.0);
    }

    #[test]
    fn init_rules() {
        let b = Boundary::new([0.0, 0.0], [10.0, 10.0]).unwrap();
        let mut rng = seed::rng_for(1, &[]);
        let fixed = InitStrategy::Fixed { point: [3.0, 4.0] };
        assert_eq!(init_dummy(fixed, &b, None, None, 0.0, &mut rng).unwrap().x, [3.0, 4.0]);
        let cn = InitStrategy::CentroidNoise { sigma_m: 0.0 };
        assert_eq!(init_dummy(cn, &b, Some([1.0, 2.0]), None, 0.0, &mut rng).unwrap().x, [1.0, 2.0]);
        let prev = InitStrategy::PreviousRound { sigma_m: 0.0 };
        assert_eq!(init_dummy(prev, &b, Some([1.0, 2.0]), None, 0.0, &mut rng).unwrap().x, [1.0, 2.0]);
        assert_eq!(
            init_dummy(prev, &b, Some([1.0, 2.0]), Some([7.0, 7.0]), 0.0, &mut rng).unwrap().x,
            [7.0, 7.0]
        );
    }

    #[test]
    fn linear_worked_example_converges_to_closed_form() {
        let w = ModelWeights::zeros(&ArchConfig::linear());
        let batch = [Sample::new([0.0, 0.0], 1.0), Sample::new([2.0, 0.0], 3.0)];
        let g = weight_gradient(&w, &batch, DropoutMode::Inference).unwrap();
        let cfg = AttackConfig {
            max_iters: 200_000,
            attack_eta: 0.05,
            ..AttackConfig::default()
        };
        let b = Boundary::new([-10.0, -10.0], [10.0, 10.0]).unwrap();
        let start = Dummy { x: [0.5, 1.0], y: 1.0 };
        let r = dlg_attack(&w, &g, &cfg, &b, &unit_standardizer(), start).unwrap();
        assert_eq!(r.status, AttackStatus::Converged, "{r:?}");
        assert!((r.x_dlg[0] - 1.5).abs() < 1e-3 && r.x_dlg[1].abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn zero_target_is_degenerate() {
        let w = ModelWeights::zeros(&ArchConfig::linear());
        let g = GradientVector::zeros_like(&w);
        let b = Boundary::new([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let r = dlg_attack(&w, &g, &AttackConfig::default(), &b, &unit_standardizer(), Dummy { x: [0.0; 2], y: 0.0 })
            .unwrap();
        assert_eq!(r.status, AttackStatus::Degenerate);
        assert_eq!(r.iterations, 0);
    }
}

//! The RSRP signal-map model: standardization, initialization, prediction, RMSE.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Measurement};
use crate::error::{FedmapError, Result};
use crate::nn::{self, ArchConfig, DropoutMode, ModelWeights, Sample};

/// Per-dimension mean and standard deviation for (easting, northing) and RSRP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub label_mean: f64,
    pub label_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, name: &str) -> Result<(f64, f64)> {
    let n = values.clone().count();
    if n < 2 {
        return Err(FedmapError::DegenerateFeature(format!("{name}: fewer than two values")));
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(FedmapError::DegenerateFeature(format!("{name} is constant")));
    }
    Ok((mean, std))
}

impl Standardizer {
    /// Population statistics of raw `(location, label)` triples.
    pub fn fit_raw(points: &[([f64; 2], f64)]) -> Result<Self> {
        let (me, se) = mean_std(points.iter().map(|p| p.0[0]), "easting")?;
        let (mn, sn) = mean_std(points.iter().map(|p| p.0[1]), "northing")?;
        let (ml, sl) = mean_std(points.iter().map(|p| p.1), "rsrp")?;
        Ok(Self {
            mean: [me, mn],
            std: [se, sn],
            label_mean: ml,
            label_std: sl,
        })
    }

    pub fn fit(ds: &Dataset) -> Result<Self> {
        let raw: Vec<_> = ds.measurements.iter().map(|m| (m.location(), m.rsrp)).collect();
        Self::fit_raw(&raw)
    }

    pub fn location(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.mean[0]) / self.std[0], (p[1] - self.mean[1]) / self.std[1]]
    }

    pub fn invert_location(&self, z: [f64; 2]) -> [f64; 2] {
        [z[0] * self.std[0] + self.mean[0], z[1] * self.std[1] + self.mean[1]]
    }

    pub fn label(&self, y: f64) -> f64 {
        (y - self.label_mean) / self.label_std
    }

    pub fn invert_label(&self, z: f64) -> f64 {
        z * self.label_std + self.label_mean
    }

    pub fn sample(&self, m: &Measurement) -> Sample {
        Sample::new(self.location(m.location()), self.label(m.rsrp))
    }

    pub fn samples<'a>(&self, ms: impl IntoIterator<Item = &'a Measurement>) -> Vec<Sample> {
        ms.into_iter().map(|m| self.sample(m)).collect()
    }

    /// Distance in meters between two standardized locations.
    pub fn location_distance_m(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let pa = self.invert_location(a);
        let pb = self.invert_location(b);
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    }
}

/// Initial global model for `arch`, deterministic in `seed`.
pub fn build_model(arch: &ArchConfig, seed: u64) -> Result<ModelWeights> {
    arch.validate()?;
    Ok(ModelWeights::glorot(arch, seed))
}

/// Deployed prediction in RSRP units.
pub fn predict(weights: &ModelWeights, st: &Standardizer, location: [f64; 2]) -> Result<f64> {
    let z = nn::forward(weights, &st.location(location), DropoutMode::Inference)?;
    Ok(st.invert_label(z))
}

/// Root mean squared error in RSRP units over a set of measurements.
pub fn rmse_of<'a>(
    weights: &ModelWeights,
    st: &Standardizer,
    ms: impl IntoIterator<Item = &'a Measurement>,
) -> Result<f64> {
    let mut n = 0usize;
    let mut sq = 0.0;
    for m in ms {
        let e = predict(weights, st, m.location())? - m.rsrp;
        sq += e * e;
        n += 1;
    }
    if n == 0 {
        return Err(FedmapError::Empty("rmse of an empty set".into()));
    }
    Ok((sq / n as f64).sqrt())
}

pub fn rmse(weights: &ModelWeights, ds: &Dataset, st: &Standardizer) -> Result<f64> {
    rmse_of(weights, st, &ds.measurements)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_mean_and_unit_deviation() {
        let st = Standardizer::fit_raw(&[([0.0, 0.0], 0.0), ([2.0, 4.0], 10.0)]).unwrap();
        assert_eq!(st.mean, [1.0, 2.0]);
        assert_eq!(st.std, [1.0, 2.0]);
        assert_eq!(st.location([0.0, 0.0]), [-1.0, -1.0]);
        assert_eq!(st.location([2.0, 4.0]), [1.0, 1.0]);
        assert_eq!(st.label(10.0), 1.0);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let err = Standardizer::fit_raw(&[([1.0, 0.0], 0.0), ([1.0, 1.0], 1.0)]).unwrap_err();
        assert!(matches!(err, FedmapError::DegenerateFeature(_)));
    }

    #[test]
    fn parameter_counts() {
        let small = ArchConfig::new(vec![2, 4, 1], vec![nn::Activation::Relu], 0.0).unwrap();
        assert_eq!(build_model(&small, 3).unwrap().len(), 17);
        assert_eq!(build_model(&small, 3).unwrap(), build_model(&small, 3).unwrap());
        assert_eq!(build_model(&ArchConfig::signal_map_default(), 0).unwrap().len(), 145_313);
    }

    #[test]
    fn zero_model_predicts_label_mean() {
        let st = Standardizer::fit_raw(&[([0.0, 0.0], -1.0), ([2.0, 4.0], 1.0)]).unwrap();
        let w = ModelWeights::zeros(&ArchConfig::linear());
        assert_eq!(predict(&w, &st, [5.0, 5.0]).unwrap(), 0.0);
        let ms: Vec<Measurement> = [(-1.0, [0.0, 0.0]), (1.0, [2.0, 4.0])]
            .iter()
            .map(|&(y, p)| Measurement {
                user_id: 0,
                cell_id: String::new(),
                timestamp: 0,
                lat: 0.0,
                lon: 0.0,
                easting: p[0],
                northing: p[1],
                rsrp: y,
            })
            .collect();
        assert!((rmse_of(&w, &st, &ms).unwrap() - st.label_std).abs() < 1e-12);
        assert!(rmse_of(&w, &st, &[]).is_err());
    }
}

//! Replays of local training and aggregation against hand-written loops.

use fedmap_core::defense::DpConfig;
use fedmap_core::fed::{local_train, observed_gradient, server_round, user_update, FedConfig, LocalBatch};
use fedmap_core::data::Measurement;
use fedmap_core::model::Standardizer;
use fedmap_core::nn::{sgd_step, weight_gradient, ArchConfig, DropoutMode, ModelWeights, Sample};

fn samples() -> Vec<Sample> {
    vec![
        Sample::new([0.1, -0.3], 0.5),
        Sample::new([-1.2, 0.4], -0.7),
        Sample::new([0.8, 0.9], 1.1),
        Sample::new([0.0, -1.5], -0.2),
    ]
}

fn model() -> ModelWeights {
    ModelWeights::glorot(&ArchConfig::softplus(&[6, 5]), 17)
}

fn step(w: &ModelWeights, mb: &[Sample], eta: f64) -> ModelWeights {
    sgd_step(w, &weight_gradient(w, mb, DropoutMode::Inference).unwrap(), eta).unwrap()
}

fn max_diff(a: &ModelWeights, b: &ModelWeights) -> f64 {
    a.flat().iter().zip(b.flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn epoch(w: &ModelWeights, s: &[Sample], order: &[usize], b: usize, eta: f64) -> ModelWeights {
    order.chunks(b).fold(w.clone(), |w, c| {
        let mb: Vec<Sample> = c.iter().map(|&i| s[i]).collect();
        step(&w, &mb, eta)
    })
}

#[test]
fn full_batch_single_epoch_is_one_gradient_step() {
    let cfg = FedConfig {
        eta: 0.05,
        ..FedConfig::default()
    };
    let (w, steps) = local_train(&model(), &samples(), &cfg, 1).unwrap();
    assert_eq!(steps, 1);
    assert!(max_diff(&w, &step(&model(), &samples(), 0.05)) < 1e-15);
    let g = observed_gradient(&w, &model()).unwrap();
    let true_grad = weight_gradient(&model(), &samples(), DropoutMode::Inference).unwrap();
    for (o, t) in g.flat().iter().zip(true_grad.flat()) {
        assert!((o + 0.05 * t).abs() < 1e-12);
    }
}

#[test]
fn two_epochs_of_pairs_replay_some_shuffle() {
    let cfg = FedConfig {
        eta: 0.1,
        batch_size: Some(2),
        epochs: 2,
        ..FedConfig::default()
    };
    let s = samples();
    let (w, steps) = local_train(&model(), &s, &cfg, 5).unwrap();
    assert_eq!(steps, 4);
    let perms = permutations(4);
    let best = perms
        .iter()
        .flat_map(|p| perms.iter().map(move |q| (p, q)))
        .map(|(p, q)| max_diff(&w, &epoch(&epoch(&model(), &s, p, 2, 0.1), &s, q, 2, 0.1)))
        .fold(f64::INFINITY, f64::min);
    assert!(best < 1e-14, "no shuffle reproduces the local model ({best:e})");
}

#[test]
fn leftover_mini_batch_is_trained_on() {
    let cfg = FedConfig {
        eta: 0.1,
        batch_size: Some(3),
        ..FedConfig::default()
    };
    assert_eq!(local_train(&model(), &samples(), &cfg, 0).unwrap().1, 2);
}

#[test]
fn server_weights_by_data_size() {
    let arch = ArchConfig::linear();
    let a = ModelWeights::from_flat(&arch, vec![1.0, 0.0, 3.0]).unwrap();
    let b = ModelWeights::from_flat(&arch, vec![0.0, 4.0, -1.0]).unwrap();
    let avg = server_round(&[(a, 1), (b, 3)]).unwrap();
    assert_eq!(avg.flat(), &[0.25, 3.0, 0.0]);
    assert!(server_round(&[]).is_err());
}

fn batch() -> (LocalBatch, Standardizer) {
    let ms: Vec<Measurement> = (0..6)
        .map(|i| Measurement {
            user_id: 0,
            cell_id: "c".into(),
            timestamp: i,
            lat: 0.0,
            lon: 0.0,
            easting: 100.0 * i as f64,
            northing: 50.0 * (i % 3) as f64,
            rsrp: -90.0 + i as f64,
        })
        .collect();
    let st = Standardizer::fit_raw(&ms.iter().map(|m| (m.location(), m.rsrp)).collect::<Vec<_>>()).unwrap();
    (LocalBatch::new(0, 0, ms).unwrap(), st)
}

#[test]
fn weak_privacy_budget_clips_the_update() {
    let (b, st) = batch();
    let start = model();
    let cfg = FedConfig {
        eta: 0.5,
        dp: Some(DpConfig::new(1e-3, 1e12, 1e-5).unwrap()),
        ..FedConfig::default()
    };
    let raw = user_update(&start, &b, &FedConfig { dp: None, ..cfg.clone() }, &st, 3).unwrap();
    let dp = user_update(&start, &b, &cfg, &st, 3).unwrap();
    let raw_d = observed_gradient(&raw.weights, &start).unwrap();
    let dp_d = observed_gradient(&dp.weights, &start).unwrap();
    assert!(raw_d.norm() > 1e-3);
    assert!((dp_d.norm() - 1e-3).abs() < 1e-9);
    let cos: f64 = raw_d.flat().iter().zip(dp_d.flat()).map(|(a, b)| a * b).sum::<f64>() / (raw_d.norm() * dp_d.norm());
    assert!(cos > 1.0 - 1e-9);
}

#[test]
fn noise_scale_for_the_standard_budget() {
    let dp = DpConfig::new(1.0, 1.0, 1e-5).unwrap();
    assert!((dp.sigma() - 4.845).abs() < 5e-4);
    assert!((DpConfig::new(2.0, 10.0, 1e-5).unwrap().sigma() - 2.0 * dp.sigma() / 10.0).abs() < 1e-12);
    assert!(DpConfig::new(1.0, 0.0, 1e-5).is_err());
}

#[test]
fn strong_noise_hides_the_update() {
    let (b, st) = batch();
    let start = model();
    let cfg = FedConfig {
        eta: 0.5,
        dp: Some(DpConfig::new(1.0, 0.1, 1e-5).unwrap()),
        ..FedConfig::default()
    };
    let u = user_update(&start, &b, &cfg, &st, 3).unwrap();
    let d = observed_gradient(&u.weights, &start).unwrap();
    // sigma ~ 48 per coordinate
    let rms = d.norm() / (d.len() as f64).sqrt();
    assert!(rms > 30.0 && rms < 70.0, "{rms}");
    let again = user_update(&start, &b, &cfg, &st, 3).unwrap();
    assert_eq!(u.weights, again.weights);
}

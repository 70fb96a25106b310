use fedmap_core::nn::{
    batch_loss, forward, input_gradient_of_match, weight_gradient, ArchConfig, DropoutMode, MatchObjective,
    ModelWeights, Sample,
};
use fedmap_core::seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;

fn n(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if s < 1e-12 {
        d
    } else {
        d / s
    }
}

fn batch(rng: &mut ChaCha8Rng, b: usize) -> Vec<Sample> {
    (0..b).map(|_| Sample::new([n(rng), n(rng)], n(rng))).collect()
}

#[test]
fn weight_gradient_matches_central_differences() {
    let arch = ArchConfig::softplus(&[16, 12]);
    for i in 0..100 {
        let mut rng = seed::rng_for(1, &[i]);
        let w = ModelWeights::glorot(&arch, i);
        let b = batch(&mut rng, 1 + i as usize % 5);
        let g = weight_gradient(&w, &b, DropoutMode::Inference).unwrap();
        let mut flat = w.flat().to_vec();
        let fd: Vec<f64> = (0..flat.len())
            .map(|k| {
                let o = flat[k];
                flat[k] = o + H;
                let up = batch_loss(&w.with_flat(flat.clone()).unwrap(), &b, DropoutMode::Inference).unwrap();
                flat[k] = o - H;
                let down = batch_loss(&w.with_flat(flat.clone()).unwrap(), &b, DropoutMode::Inference).unwrap();
                flat[k] = o;
                (up - down) / (2.0 * H)
            })
            .collect();
        let e = rel(g.flat(), &fd);
        assert!(e < 1e-4, "point {i}: relative error {e}");
    }
}

#[test]
fn dummy_input_gradient_matches_central_differences() {
    let arch = ArchConfig::softplus(&[16, 12]);
    for i in 0..100 {
        let mut rng = seed::rng_for(2, &[i]);
        let w = ModelWeights::glorot(&arch, 100 + i);
        let target = weight_gradient(&w, &batch(&mut rng, 6), DropoutMode::Inference).unwrap();
        let (x, y) = ([n(&mut rng), n(&mut rng)], n(&mut rng));
        let g = input_gradient_of_match(&w, &target, x, y, 0.0).unwrap();
        let obj = MatchObjective::new(&w, &target, 0.0).unwrap();
        let d = |dx: f64, dz: f64, dy: f64| {
            (obj.value([x[0] + dx, x[1] + dz], y + dy).unwrap() - obj.value([x[0] - dx, x[1] - dz], y - dy).unwrap())
                / (2.0 * H)
        };
        let fd = [d(H, 0.0, 0.0), d(0.0, H, 0.0), d(0.0, 0.0, H)];
        let e = rel(&[g.grad_x[0], g.grad_x[1], g.grad_y], &fd);
        assert!(e < 1e-4, "point {i}: relative error {e}");
        assert!((g.loss - obj.value(x, y).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn dummy_label_never_moves_a_single_sample_match() {
    // the dummy gradient is (pred - y) times a y-free vector, so the cosine
    // only sees the sign of the residual
    let arch = ArchConfig::softplus(&[8]);
    let w = ModelWeights::glorot(&arch, 9);
    let target = weight_gradient(&w, &[Sample::new([0.2, -0.4], 1.3)], DropoutMode::Inference).unwrap();
    let g = input_gradient_of_match(&w, &target, [0.5, 0.5], -0.7, 0.0).unwrap();
    assert!(g.grad_y.abs() < 1e-12);
}

#[test]
fn train_mode_dropout_is_seeded() {
    let w = ModelWeights::glorot(&ArchConfig::signal_map_default(), 3);
    let x = [0.3, -0.2];
    let a = forward(&w, &x, DropoutMode::Train { seed: 5 }).unwrap();
    let b = forward(&w, &x, DropoutMode::Train { seed: 5 }).unwrap();
    let inf = forward(&w, &x, DropoutMode::Inference).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, inf);
}

#[test]
fn default_network_size() {
    assert_eq!(ArchConfig::signal_map_default().parameter_count(), 145_313);
    assert_eq!(ArchConfig::new(vec![2, 4, 1], vec![fedmap_core::nn::Activation::Relu], 0.0).unwrap().parameter_count(), 17);
}

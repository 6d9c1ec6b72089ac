use rand::seq::index::sample;
use tqd_core::model::{ModelShape, VelocityModel};
use tqd_core::rng;
use tqd_core::trainer::{crn_noise, flow_loss, loss_and_grad};
use tqd_core::video::{generate_moving_shape, VideoDims};

const H: f64 = 1e-5;
/// Denominator floor: coordinates whose true gradient is zero up to rounding
/// (e.g. an embedding feature sin(pi) ~ 1e-16) would otherwise score 1.
const FLOOR: f64 = 1e-10;

/// Max relative error between reverse-mode and central-difference gradients
/// over `per_layer` random coordinates of each layer (weights and biases).
fn max_rel_error(shape: ModelShape, per_layer: usize, t: f64, seed: u64) -> (f64, f64) {
    let model = VelocityModel::init(shape, seed, 1.0);
    let x0 = if shape.dims == VideoDims::default() {
        generate_moving_shape(2.0, 0.05, seed).to_f64()
    } else {
        (0..shape.data_dim()).map(|i| (i as f64 * 0.37).sin().abs()).collect()
    };
    let x1 = crn_noise(seed, 0, x0.len());
    let (_, grad) = loss_and_grad(&model, &x0, &x1, t).unwrap();
    let mut rng = rng::seeded(seed);
    let (mut worst, mut smallest) = (0.0f64, f64::INFINITY);
    for l in 0..3 {
        let (w, b) = shape.layer_ranges(l);
        let span = w.start..b.end;
        for k in sample(&mut rng, span.len(), per_layer) {
            let i = span.start + k;
            let mut m = model.clone();
            m.params[i] += H;
            let up = flow_loss(&m, &x0, &x1, t).unwrap();
            m.params[i] -= 2.0 * H;
            let down = flow_loss(&m, &x0, &x1, t).unwrap();
            let numeric = (up - down) / (2.0 * H);
            let scale = grad[i].abs().max(numeric.abs());
            smallest = smallest.min(scale);
            let rel = (grad[i] - numeric).abs() / scale.max(FLOOR);
            worst = worst.max(rel);
        }
    }
    (worst, smallest)
}

#[test]
fn reverse_mode_matches_central_differences_on_default_model() {
    for (t, seed) in [(0.3, 1), (0.8, 2)] {
        let (worst, smallest) = max_rel_error(ModelShape::default(), 50, t, seed);
        println!("t={t} worst relative error {worst:.3e}, smallest |grad| {smallest:.3e}");
        assert!(worst < 1e-4);
    }
}

#[test]
fn reverse_mode_matches_central_differences_on_small_models() {
    let shape = ModelShape {
        dims: VideoDims { frames: 2, height: 3, width: 3 },
        hidden_width: 7,
        embed_freqs: 3,
    };
    for seed in 0..5 {
        let (worst, _) = max_rel_error(shape, 20, 0.1 + 0.2 * seed as f64, seed);
        assert!(worst < 1e-4, "seed {seed}: {worst}");
    }
}

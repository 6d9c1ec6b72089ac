//! Flow-matching training of the toy velocity model.
//!
//! Each step prepares a batch through the sampler, pairs every member with a
//! fresh standard-normal `x1`, regresses `v(x_t, t)` onto `x1 - x0` at
//! `x_t = t * x1 + (1 - t) * x0`, and applies one bias-corrected Adam update.
//! Per-member gradients are computed in parallel and summed in batch order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TqdError};
use crate::model::{ModelShape, VelocityModel};
use crate::quality::QualityRecord;
use crate::rng::{self, TqdRng};
use crate::sampler::{SamplerConfig, SamplingMode, TqdSampler};
use crate::video::{flow_interpolate, ToyVideo};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub model: ModelShape,
    /// Scale of the output layer's initial weights relative to `1/sqrt(fan_in)`.
    pub init_output_scale: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            model: ModelShape::default(),
            init_output_scale: 0.1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon >= 0.0
            && self.model.hidden_width > 0
            && !self.model.dims.is_empty();
        if ok {
            Ok(())
        } else {
            Err(TqdError::InvalidParameter(format!("invalid trainer config {self:?}")))
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub mean_t: f64,
    pub batch_acceptance_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: VelocityModel,
    pub optimizer: Adam,
    pub step: usize,
    pub loss_history: Vec<f64>,
    pub log: Vec<LogRow>,
}

impl TrainState {
    pub fn new(config: &TrainerConfig) -> Self {
        let model = VelocityModel::init(config.model, config.seed, config.init_output_scale);
        let optimizer = Adam::new(
            model.param_count(),
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
        );
        Self {
            model,
            optimizer,
            step: 0,
            loss_history: Vec::new(),
            log: Vec::new(),
        }
    }
}

/// One training datum: its scores and its video.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub record: QualityRecord,
    pub video: ToyVideo,
}

/// Flow-matching loss `mean((v(x_t, t) - (x1 - x0))^2)` and its exact
/// gradient with respect to the model parameters.
pub fn loss_and_grad(model: &VelocityModel, x0: &[f64], x1: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    let loss = loss_and_grad_into(model, x0, x1, t, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Like [`loss_and_grad`] but accumulates `weight * grad` into `grad`.
pub fn loss_and_grad_into(
    model: &VelocityModel,
    x0: &[f64],
    x1: &[f64],
    t: f64,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let x_t = flow_interpolate(x0, x1, t)?;
    let cache = model.forward_cached(&x_t, t)?;
    let d = x0.len() as f64;
    let mut loss = 0.0;
    let d_out: Vec<f64> = cache
        .output
        .iter()
        .zip(x0.iter().zip(x1))
        .map(|(v, (a, b))| {
            let r = v - (b - a);
            loss += r * r;
            weight * 2.0 * r / d
        })
        .collect();
    model.backward(&cache, &d_out, grad);
    Ok(loss / d)
}

pub fn flow_loss(model: &VelocityModel, x0: &[f64], x1: &[f64], t: f64) -> Result<f64> {
    let x_t = flow_interpolate(x0, x1, t)?;
    let v = model.forward(&x_t, t)?;
    let d = x0.len() as f64;
    Ok(v.iter()
        .zip(x0.iter().zip(x1))
        .map(|(v, (a, b))| (v - (b - a)).powi(2))
        .sum::<f64>()
        / d)
}

/// Mean loss and summed-then-averaged gradient over a list of
/// `(x0, x1, t)` triples. Evaluated in parallel, reduced in list order.
pub fn batch_loss_and_grad(
    model: &VelocityModel,
    items: &[(&[f64], Vec<f64>, f64)],
) -> Result<(f64, Vec<f64>)> {
    let per_item: Vec<(f64, Vec<f64>)> = items
        .par_iter()
        .map(|(x0, x1, t)| loss_and_grad(model, x0, x1, *t))
        .collect::<Result<_>>()?;
    let n = items.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for (l, g) in &per_item {
        loss += l;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

pub fn standard_normal(rng: &mut TqdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs the full quality-aware training loop from a fresh initialization.
pub fn train(
    dataset: &[TrainingSample],
    sampler_config: &SamplerConfig,
    trainer_config: &TrainerConfig,
    mode: SamplingMode,
) -> Result<TrainState> {
    trainer_config.validate()?;
    let mut state = TrainState::new(trainer_config);
    let records: Vec<QualityRecord> = dataset.iter().map(|s| s.record.clone()).collect();
    let sampler = TqdSampler::with_mode(records, *sampler_config, mode)?;
    let dims = trainer_config.model.dims;
    let x0s: Vec<Vec<f64>> = dataset
        .iter()
        .map(|s| {
            if s.video.dims != dims {
                return Err(TqdError::ShapeMismatch {
                    expected: format!("{dims:?}"),
                    got: format!("{:?}", s.video.dims),
                });
            }
            Ok(s.video.to_f64())
        })
        .collect::<Result<_>>()?;

    let mut batch_rng = rng::stream(sampler_config.seed, rng::streams::BATCH);
    let mut noise_rng = rng::stream(trainer_config.seed, rng::streams::NOISE);
    for _ in 0..trainer_config.steps {
        let batch = sampler.prepare_batch(&mut batch_rng)?;
        let items: Vec<(&[f64], Vec<f64>, f64)> = batch
            .members
            .iter()
            .map(|m| (x0s[m.index].as_slice(), standard_normal(&mut noise_rng, dims.len()), m.t))
            .collect();
        let step = state.step + 1;
        let (loss, grad) = match batch_loss_and_grad(&state.model, &items) {
            Ok(v) => v,
            Err(TqdError::NonFiniteActivation { .. }) => return Err(TqdError::NonFiniteLoss { step }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TqdError::NonFiniteLoss { step });
        }
        state.optimizer.update(&mut state.model.params, &grad);
        if !state.model.all_finite() {
            return Err(TqdError::NonFiniteLoss { step });
        }
        state.step = step;
        state.loss_history.push(loss);
        state.log.push(LogRow {
            step,
            loss,
            mean_t: batch.mean_t(),
            batch_acceptance_rate: batch.acceptance_rate(),
        });
    }
    Ok(state)
}

/// Noise draw `k` of the common-random-numbers family keyed by `noise_seed`.
pub fn crn_noise(noise_seed: u64, k: u64, n: usize) -> Vec<f64> {
    standard_normal(&mut rng::stream(noise_seed, rng::streams::PER_ITEM + k), n)
}

/// Gradient of the flow-matching loss at fixed `t`, averaged over `n_noise`
/// noise draws that depend only on `noise_seed`.
pub fn grad_at_timestep(
    model: &VelocityModel,
    x0: &[f64],
    t: f64,
    noise_seed: u64,
    n_noise: usize,
) -> Result<Vec<f64>> {
    if n_noise == 0 {
        return Err(TqdError::InvalidParameter("n_noise must be at least 1".into()));
    }
    let mut grad = vec![0.0; model.param_count()];
    let w = 1.0 / n_noise as f64;
    for k in 0..n_noise {
        let x1 = crn_noise(noise_seed, k as u64, x0.len());
        loss_and_grad_into(model, x0, &x1, t, w, &mut grad)?;
    }
    Ok(grad)
}

/// Mean flow-matching loss over `videos x t_grid x n_noise` with
/// common-random-number noise, so different models are scored on identical
/// draws.
pub fn evaluate_loss(
    model: &VelocityModel,
    videos: &[Vec<f64>],
    t_grid: &[f64],
    noise_seed: u64,
    n_noise: usize,
) -> Result<f64> {
    if videos.is_empty() || t_grid.is_empty() || n_noise == 0 {
        return Err(TqdError::InvalidParameter("empty evaluation set".into()));
    }
    let per_video: Vec<f64> = videos
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut s = 0.0;
            for k in 0..n_noise {
                let x1 = crn_noise(noise_seed, (i * n_noise + k) as u64, x0.len());
                for &t in t_grid {
                    s += flow_loss(model, x0, &x1, t)?;
                }
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(per_video.iter().sum::<f64>() / (videos.len() * t_grid.len() * n_noise) as f64)
}

/// Header of the checkpoint format: `TQDC`, a little-endian `u32` header
/// length, this header as JSON, then the parameters as little-endian `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub shape: ModelShape,
    pub param_count: usize,
    pub step: usize,
    pub seed: u64,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"TQDC";
const CHECKPOINT_FORMAT: &str = "tqd-checkpoint-v1";

pub fn write_checkpoint(path: impl AsRef<Path>, model: &VelocityModel, step: usize, seed: u64) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        shape: model.shape,
        param_count: model.param_count(),
        step,
        seed,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 8 * model.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| TqdError::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(VelocityModel, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TqdError::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(VelocityModel, CheckpointHeader)> {
    let corrupt = |m: &str| TqdError::Artifact(format!("checkpoint: {m}"));
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_bytes = bytes.get(8..8 + len).ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(header_bytes).map_err(|e| corrupt(&format!("unreadable header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(corrupt(&format!("unknown format `{}`", header.format)));
    }
    if header.param_count != header.shape.param_count() {
        return Err(corrupt("parameter count disagrees with the declared shape"));
    }
    let body = &bytes[8 + len..];
    if body.len() != 8 * header.param_count {
        return Err(corrupt("parameter block has the wrong length"));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = VelocityModel::from_params(header.shape, params)?;
    Ok((model, header))
}

pub fn write_training_log(path: impl AsRef<Path>, log: &[LogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    writeln!(buf, "step,loss,mean_t,batch_acceptance_rate").unwrap();
    for r in log {
        writeln!(buf, "{},{},{},{}", r.step, r.loss, r.mean_t, r.batch_acceptance_rate).unwrap();
    }
    fs::write(path, buf).map_err(|e| TqdError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{generate_moving_shape_with, VideoDims};

    fn tiny_shape() -> ModelShape {
        ModelShape {
            dims: VideoDims { frames: 2, height: 4, width: 4 },
            hidden_width: 8,
            embed_freqs: 2,
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![0.5, -1.0, 3.0];
        let mut opt = Adam::new(3, 1e-3, 0.9, 0.999, 1e-8);
        opt.update(&mut p, &[1.0, 1.0, 1.0]);
        for (after, before) in p.iter().zip([0.5, -1.0, 3.0]) {
            assert!((before - after - 1e-3).abs() < 1e-10);
        }
    }

    #[test]
    fn optimum_has_zero_loss_and_gradient() {
        // 1-pixel video, zero hidden influence: v = b3, and b3 = x1 - x0 matches the target
        let shape = ModelShape {
            dims: VideoDims { frames: 1, height: 1, width: 1 },
            hidden_width: 2,
            embed_freqs: 1,
        };
        let mut m = VelocityModel::init(shape, 1, 0.0);
        let (_, b3) = shape.layer_ranges(2);
        let (x0, x1) = ([0.3], [1.1]);
        m.params[b3.start] = x1[0] - x0[0];
        let (loss, grad) = loss_and_grad(&m, &x0, &x1, 0.4).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_loss_is_order_invariant() {
        let m = VelocityModel::init(tiny_shape(), 2, 1.0);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|i| generate_moving_shape_with(tiny_shape().dims, 1.0, 0.1, i).to_f64())
            .collect();
        let items: Vec<(&[f64], Vec<f64>, f64)> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x.as_slice(), crn_noise(9, i as u64, x.len()), 0.2 * i as f64 + 0.1))
            .collect();
        let mut rev: Vec<(&[f64], Vec<f64>, f64)> = items.clone();
        rev.reverse();
        let (la, ga) = batch_loss_and_grad(&m, &items).unwrap();
        let (lb, gb) = batch_loss_and_grad(&m, &rev).unwrap();
        assert!((la - lb).abs() < 1e-14);
        assert!(ga.iter().zip(&gb).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn grad_at_timestep_is_reproducible() {
        let m = VelocityModel::init(tiny_shape(), 2, 1.0);
        let x = generate_moving_shape_with(tiny_shape().dims, 1.0, 0.1, 3).to_f64();
        let a = grad_at_timestep(&m, &x, 0.3, 11, 4).unwrap();
        let b = grad_at_timestep(&m, &x, 0.3, 11, 4).unwrap();
        assert_eq!(a, b);
        assert!(grad_at_timestep(&m, &x, 0.3, 11, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let m = VelocityModel::init(tiny_shape(), 4, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        write_checkpoint(&p, &m, 12, 4).unwrap();
        let (back, header) = read_checkpoint(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.step, 12);

        let mut bytes = fs::read(&p).unwrap();
        bytes[9] = b'#';
        assert!(matches!(decode_checkpoint(&bytes), Err(TqdError::Artifact(_))));
        assert!(matches!(decode_checkpoint(b"nope"), Err(TqdError::Artifact(_))));
    }
}

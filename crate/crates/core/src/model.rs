//! A two-hidden-layer tanh MLP velocity field with exact reverse-mode
//! gradients.
//!
//! Input is the flattened noisy video concatenated with sinusoidal timestep
//! features; output has the video's shape. Parameters live in one flat
//! vector laid out as `W1 b1 W2 b2 W3 b3`, each weight matrix row-major with
//! shape `(fan_out, fan_in)`.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TqdError};
use crate::rng;
use crate::video::VideoDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub dims: VideoDims,
    pub hidden_width: usize,
    /// Number of sinusoid frequencies; the embedding has twice as many features.
    pub embed_freqs: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            dims: VideoDims::default(),
            hidden_width: 128,
            embed_freqs: 8,
        }
    }
}

impl ModelShape {
    pub fn data_dim(&self) -> usize {
        self.dims.len()
    }

    pub fn embed_dim(&self) -> usize {
        2 * self.embed_freqs
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim() + self.embed_dim()
    }

    /// `(fan_in, fan_out)` for the three affine layers.
    pub fn layer_dims(&self) -> [(usize, usize); 3] {
        let h = self.hidden_width;
        [(self.input_dim(), h), (h, h), (h, self.data_dim())]
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Parameter ranges of layer `l`'s weights and biases.
    pub fn layer_ranges(&self, l: usize) -> (Range<usize>, Range<usize>) {
        let mut off = 0;
        for (k, (i, o)) in self.layer_dims().into_iter().enumerate() {
            let w = off..off + i * o;
            let b = w.end..w.end + o;
            if k == l {
                return (w, b);
            }
            off = b.end;
        }
        panic!("layer index {l} out of range");
    }
}

/// Angular frequencies `pi * 2^(k/2)`.
pub fn timestep_embedding(t: f64, freqs: usize) -> Vec<f64> {
    let mut e = Vec::with_capacity(2 * freqs);
    for k in 0..freqs {
        let w = std::f64::consts::PI * 2f64.powf(k as f64 / 2.0);
        e.push((w * t).sin());
        e.push((w * t).cos());
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub shape: ModelShape,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub output: Vec<f64>,
}

impl VelocityModel {
    /// Weights drawn from `N(0, 1/fan_in)`, biases zero. The output layer's
    /// weights are further scaled by `output_scale` (0 gives the zero map).
    pub fn init(shape: ModelShape, seed: u64, output_scale: f64) -> Self {
        let mut rng = rng::stream(seed, rng::streams::INIT);
        let mut params = vec![0.0; shape.param_count()];
        for (l, (fan_in, _)) in shape.layer_dims().into_iter().enumerate() {
            let (w, _) = shape.layer_ranges(l);
            let mut std = 1.0 / (fan_in as f64).sqrt();
            if l == 2 {
                std *= output_scale;
            }
            for p in &mut params[w] {
                let z: f64 = rng.sample(StandardNormal);
                *p = std * z;
            }
        }
        Self { shape, params }
    }

    pub fn from_params(shape: ModelShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(TqdError::Artifact(format!(
                "parameter vector has {} entries, shape needs {}",
                params.len(),
                shape.param_count()
            )));
        }
        Ok(Self { shape, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, x_t: &[f64], t: f64) -> Result<()> {
        if x_t.len() != self.shape.data_dim() {
            return Err(TqdError::ShapeMismatch {
                expected: format!("{} values", self.shape.data_dim()),
                got: format!("{} values", x_t.len()),
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(TqdError::InvalidParameter(format!("t must lie in [0, 1], got {t}")));
        }
        Ok(())
    }

    pub fn forward(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x_t, t)?.output)
    }

    pub fn forward_cached(&self, x_t: &[f64], t: f64) -> Result<ForwardCache> {
        self.check_input(x_t, t)?;
        let mut input = Vec::with_capacity(self.shape.input_dim());
        input.extend_from_slice(x_t);
        input.extend(timestep_embedding(t, self.shape.embed_freqs));

        let mut h1 = self.affine(0, &input);
        h1.iter_mut().for_each(|x| *x = x.tanh());
        ensure_finite(&h1, 0)?;
        let mut h2 = self.affine(1, &h1);
        h2.iter_mut().for_each(|x| *x = x.tanh());
        ensure_finite(&h2, 1)?;
        let output = self.affine(2, &h2);
        ensure_finite(&output, 2)?;
        Ok(ForwardCache {
            input,
            h1,
            h2,
            output,
        })
    }

    fn affine(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let (fan_in, _) = self.shape.layer_dims()[layer];
        let (w, b) = self.shape.layer_ranges(layer);
        let w = &self.params[w];
        let b = &self.params[b];
        w.chunks_exact(fan_in)
            .zip(b)
            .map(|(row, &bias)| dot(row, x) + bias)
            .collect()
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let d_h2 = self.affine_backward(2, &cache.h2, d_out, grad);
        let d_a2: Vec<f64> = d_h2.iter().zip(&cache.h2).map(|(g, h)| g * (1.0 - h * h)).collect();
        let d_h1 = self.affine_backward(1, &cache.h1, &d_a2, grad);
        let d_a1: Vec<f64> = d_h1.iter().zip(&cache.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
        // the input gradient of the first layer is never needed
        let (fan_in, _) = self.shape.layer_dims()[0];
        let (w, b) = self.shape.layer_ranges(0);
        accumulate_outer(&mut grad[w], &d_a1, &cache.input, fan_in);
        for (g, d) in grad[b].iter_mut().zip(&d_a1) {
            *g += d;
        }
    }

    /// Accumulates weight and bias gradients of `layer`; returns `d loss / d x`.
    fn affine_backward(&self, layer: usize, x: &[f64], d_y: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (fan_in, _) = self.shape.layer_dims()[layer];
        let (w, b) = self.shape.layer_ranges(layer);
        let weights = &self.params[w.clone()];
        let mut d_x = vec![0.0; fan_in];
        for (row, &g) in weights.chunks_exact(fan_in).zip(d_y) {
            axpy(&mut d_x, g, row);
        }
        accumulate_outer(&mut grad[w], d_y, x, fan_in);
        for (gb, d) in grad[b].iter_mut().zip(d_y) {
            *gb += d;
        }
        d_x
    }
}

fn ensure_finite(xs: &[f64], layer: usize) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TqdError::NonFiniteActivation { layer })
    }
}

/// Dot product with four independent accumulators (fixed order, so results
/// are reproducible).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `g += d_y (outer) x` with `g` row-major `(len(d_y), fan_in)`.
fn accumulate_outer(g: &mut [f64], d_y: &[f64], x: &[f64], fan_in: usize) {
    for (row, &d) in g.chunks_exact_mut(fan_in).zip(d_y) {
        if d != 0.0 {
            axpy(row, d, x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelShape {
        ModelShape {
            dims: VideoDims { frames: 2, height: 3, width: 3 },
            hidden_width: 5,
            embed_freqs: 2,
        }
    }

    #[test]
    fn param_count_formula() {
        let s = ModelShape::default();
        let (d, e, h) = (8 * 16 * 16, 16, 128);
        assert_eq!(s.param_count(), (d + e) * h + h + h * h + h + h * d + d);
        let m = VelocityModel::init(s, 1, 1.0);
        assert_eq!(m.param_count(), s.param_count());
        assert_eq!(s.layer_ranges(2).1.end, s.param_count());
    }

    #[test]
    fn zero_output_layer_gives_zero_map() {
        let m = VelocityModel::init(small(), 3, 0.0);
        let y = m.forward(&[0.3; 18], 0.7).unwrap();
        assert_eq!(y, vec![0.0; 18]);
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let a = VelocityModel::init(ModelShape::default(), 5, 1.0);
        let b = VelocityModel::init(ModelShape::default(), 5, 1.0);
        let x: Vec<f64> = (0..2048).map(|i| (i as f64 * 0.37).sin()).collect();
        let ya = a.forward(&x, 0.3).unwrap();
        let yb = b.forward(&x, 0.3).unwrap();
        assert_eq!(ya.len(), 2048);
        assert!(ya.iter().zip(&yb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn output_responds_to_each_probed_input() {
        let m = VelocityModel::init(small(), 7, 1.0);
        let x: Vec<f64> = (0..18).map(|i| 0.1 * i as f64).collect();
        let base = m.forward(&x, 0.4).unwrap();
        for i in [0, 5, 17] {
            let mut xp = x.clone();
            xp[i] += 1e-4;
            let y = m.forward(&xp, 0.4).unwrap();
            let diff: f64 = y.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum();
            assert!(diff > 0.0, "input {i} has no effect");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = VelocityModel::init(small(), 1, 1.0);
        assert!(matches!(m.forward(&[0.0; 17], 0.5), Err(TqdError::ShapeMismatch { .. })));
        assert!(m.forward(&[0.0; 18], 1.5).is_err());
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let m = VelocityModel::init(small(), 1, 1.0);
        let mut x = vec![0.0; 18];
        x[3] = f64::NAN;
        assert!(matches!(m.forward(&x, 0.5), Err(TqdError::NonFiniteActivation { layer: 0 })));
    }

    #[test]
    fn dot_matches_naive_sum_closely() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64 * 0.01).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}

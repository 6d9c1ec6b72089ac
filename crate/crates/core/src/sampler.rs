//! Quality-based sample dropout and per-sample Beta timestep laws.
//!
//! Batch preparation follows two stages. Records are first drawn uniformly
//! and kept with probability `max(mq_norm, vq_norm)` until the batch is full.
//! Each kept record then draws its timestep from
//! `Beta(mu * kappa, (1 - mu) * kappa)` where
//!
//! ```text
//! mu    = 0.5 + 0.5 * (mq_norm - vq_norm)
//! kappa = kappa_base + (kappa_max - kappa_base) * |mq_norm - vq_norm|
//! ```
//!
//! Timestep `t = 1` is pure noise, so motion-strong records (`mu > 0.5`) are
//! pushed toward noisy timesteps and visually clean ones toward `t = 0`.
//! Shape parameters are floored at `min_shape` so that `mu` in `{0, 1}` still
//! gives a proper distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beta;
use crate::error::{Result, TqdError};
use crate::quality::QualityRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "SamplerConfigRepr")]
pub struct SamplerConfig {
    pub kappa_base: f64,
    pub kappa_max: f64,
    pub min_shape: f64,
    pub batch_size: usize,
    pub max_rejection_attempts: usize,
    pub seed: u64,
}

pub const DEFAULT_MIN_SHAPE: f64 = 0.05;
const REJECTION_ATTEMPTS_PER_MEMBER: usize = 1000;

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::new(2.0, 20.0)
    }
}

impl SamplerConfig {
    pub fn new(kappa_base: f64, kappa_max: f64) -> Self {
        let batch_size = 8;
        Self {
            kappa_base,
            kappa_max,
            min_shape: DEFAULT_MIN_SHAPE,
            batch_size,
            max_rejection_attempts: REJECTION_ATTEMPTS_PER_MEMBER * batch_size,
            seed: 0,
        }
    }

    /// Sets the batch size and rescales the rejection cap with it.
    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self.max_rejection_attempts = REJECTION_ATTEMPTS_PER_MEMBER * batch_size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TqdError::InvalidParameter(msg));
        if !(self.kappa_base > 0.0 && self.kappa_base.is_finite()) {
            return bad(format!("kappa_base must be positive, got {}", self.kappa_base));
        }
        if !(self.kappa_max >= self.kappa_base && self.kappa_max.is_finite()) {
            return bad(format!(
                "kappa_max ({}) must be finite and at least kappa_base ({})",
                self.kappa_max, self.kappa_base
            ));
        }
        if !(self.min_shape > 0.0 && self.min_shape.is_finite()) {
            return bad(format!("min_shape must be positive, got {}", self.min_shape));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_rejection_attempts == 0 {
            return bad("max_rejection_attempts must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct SamplerConfigRepr {
    #[serde(default = "default_kappa_base")]
    kappa_base: f64,
    #[serde(default = "default_kappa_max")]
    kappa_max: f64,
    #[serde(default = "default_min_shape")]
    min_shape: f64,
    #[serde(default = "default_batch_size")]
    batch_size: usize,
    #[serde(default)]
    max_rejection_attempts: Option<usize>,
    #[serde(default)]
    seed: u64,
}

fn default_kappa_base() -> f64 {
    2.0
}
fn default_kappa_max() -> f64 {
    20.0
}
fn default_min_shape() -> f64 {
    DEFAULT_MIN_SHAPE
}
fn default_batch_size() -> usize {
    8
}

impl From<SamplerConfigRepr> for SamplerConfig {
    fn from(r: SamplerConfigRepr) -> Self {
        Self {
            kappa_base: r.kappa_base,
            kappa_max: r.kappa_max,
            min_shape: r.min_shape,
            batch_size: r.batch_size,
            max_rejection_attempts: r
                .max_rejection_attempts
                .unwrap_or(REJECTION_ATTEMPTS_PER_MEMBER * r.batch_size),
            seed: r.seed,
        }
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(TqdError::InvalidParameter(format!(
            "{name} must lie in [0, 1], got {x}"
        )))
    }
}

/// Sampling center `0.5 + 0.5 * (mq_norm - vq_norm)`.
pub fn compute_mu(mq_norm: f64, vq_norm: f64) -> Result<f64> {
    check_unit("mq_norm", mq_norm)?;
    check_unit("vq_norm", vq_norm)?;
    Ok(0.5 + 0.5 * (mq_norm - vq_norm))
}

/// Concentration, linear in the quality gap between `kappa_base` and `kappa_max`.
pub fn compute_kappa(mq_norm: f64, vq_norm: f64, config: &SamplerConfig) -> Result<f64> {
    config.validate()?;
    check_unit("mq_norm", mq_norm)?;
    check_unit("vq_norm", vq_norm)?;
    Ok(config.kappa_base + (config.kappa_max - config.kappa_base) * (mq_norm - vq_norm).abs())
}

/// Keep probability during batch preparation: the record's better score.
pub fn retention_probability(record: &QualityRecord) -> Result<f64> {
    let (mq, vq) = record.norm_scores()?;
    check_unit("mq_norm", mq)?;
    check_unit("vq_norm", vq)?;
    Ok(mq.max(vq))
}

/// A per-sample Beta law over timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepLaw {
    /// Center before clamping.
    pub mu: f64,
    /// Concentration before clamping.
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl TimestepLaw {
    pub fn new(mu: f64, kappa: f64, min_shape: f64) -> Self {
        Self {
            mu,
            kappa,
            alpha: (mu * kappa).max(min_shape),
            beta: ((1.0 - mu) * kappa).max(min_shape),
        }
    }

    /// A law given directly by its shapes (no clamping).
    pub fn from_shapes(alpha: f64, beta: f64) -> Self {
        Self {
            mu: alpha / (alpha + beta),
            kappa: alpha + beta,
            alpha,
            beta,
        }
    }

    /// The law every record gets when MQ and VQ agree: `Beta(kb/2, kb/2)`.
    pub fn degenerate(kappa_base: f64) -> Self {
        Self::new(0.5, kappa_base, 0.0)
    }

    pub fn is_clamped(&self) -> bool {
        self.alpha != self.mu * self.kappa || self.beta != (1.0 - self.mu) * self.kappa
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    pub fn pdf(&self, t: f64) -> f64 {
        beta::beta_pdf(t, self.alpha, self.beta)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        beta::beta_cdf(t, self.alpha, self.beta)
    }

    /// CDF of the draws as actually produced: the sampler clamps to
    /// `[T_MIN, T_MAX]`, so any tail mass beyond those sits in atoms there.
    /// With a shape near `min_shape` that atom is large (about 17% for a
    /// second shape of 0.05).
    pub fn sampled_cdf(&self, t: f64) -> f64 {
        if t < beta::T_MIN {
            0.0
        } else if t >= beta::T_MAX {
            1.0
        } else {
            self.cdf(t)
        }
    }

    /// Left limit of [`Self::sampled_cdf`].
    pub fn sampled_cdf_left(&self, t: f64) -> f64 {
        if t <= beta::T_MIN {
            0.0
        } else if t > beta::T_MAX {
            1.0
        } else {
            self.cdf(t)
        }
    }

    /// Probability mass of `[lo, hi)`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        (self.cdf(hi) - self.cdf(lo)).max(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        beta::beta_variate(rng, self.alpha, self.beta)
    }
}

pub fn make_law(record: &QualityRecord, config: &SamplerConfig) -> Result<TimestepLaw> {
    let (mq, vq) = record.norm_scores()?;
    let mu = compute_mu(mq, vq)?;
    let kappa = compute_kappa(mq, vq, config)?;
    Ok(TimestepLaw::new(mu, kappa, config.min_shape))
}

pub fn sample_timestep<R: Rng + ?Sized>(law: &TimestepLaw, rng: &mut R) -> f64 {
    law.sample(rng)
}

/// Beta density on `grid_points` cell midpoints `(i + 0.5) / n` of (0, 1).
pub fn density_curve(law: &TimestepLaw, grid_points: usize) -> Result<Vec<(f64, f64)>> {
    if grid_points < 2 {
        return Err(TqdError::InvalidParameter(format!(
            "density curve needs at least 2 grid points, got {grid_points}"
        )));
    }
    let n = grid_points as f64;
    Ok((0..grid_points)
        .map(|i| {
            let t = (i as f64 + 0.5) / n;
            (t, law.pdf(t))
        })
        .collect())
}

/// How records are kept and which law they draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Quality dropout plus per-record laws.
    #[default]
    Tqd,
    /// No dropout; every record uses `Beta(kappa_base/2, kappa_base/2)`.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchMember {
    /// Index of the record in the sampler's dataset.
    pub index: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub members: Vec<BatchMember>,
    /// Uniform draws made while filling the batch, accepted or not.
    pub attempts: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.members.len() as f64 / self.attempts as f64
    }

    pub fn mean_t(&self) -> f64 {
        self.members.iter().map(|m| m.t).sum::<f64>() / self.members.len() as f64
    }
}

/// Precomputed retention probabilities and laws for a normalized dataset.
/// Immutable once built; every batch call takes its own RNG.
#[derive(Debug, Clone)]
pub struct TqdSampler {
    records: Vec<QualityRecord>,
    retention: Vec<f64>,
    laws: Vec<TimestepLaw>,
    config: SamplerConfig,
    mode: SamplingMode,
}

impl TqdSampler {
    pub fn new(records: Vec<QualityRecord>, config: SamplerConfig) -> Result<Self> {
        Self::with_mode(records, config, SamplingMode::Tqd)
    }

    pub fn with_mode(
        records: Vec<QualityRecord>,
        config: SamplerConfig,
        mode: SamplingMode,
    ) -> Result<Self> {
        config.validate()?;
        if records.is_empty() {
            return Err(TqdError::EmptyDataset);
        }
        let (retention, laws) = match mode {
            SamplingMode::Tqd => {
                let retention = records
                    .iter()
                    .map(retention_probability)
                    .collect::<Result<Vec<_>>>()?;
                let laws = records
                    .iter()
                    .map(|r| make_law(r, &config))
                    .collect::<Result<Vec<_>>>()?;
                (retention, laws)
            }
            SamplingMode::Baseline => {
                let law = TimestepLaw::degenerate(config.kappa_base);
                (vec![1.0; records.len()], vec![law; records.len()])
            }
        };
        Ok(Self {
            records,
            retention,
            laws,
            config,
            mode,
        })
    }

    pub fn records(&self) -> &[QualityRecord] {
        &self.records
    }

    pub fn laws(&self) -> &[TimestepLaw] {
        &self.laws
    }

    pub fn retention(&self) -> &[f64] {
        &self.retention
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// Probability that a batch member comes from each record:
    /// retention weights renormalized over the dataset.
    pub fn selection_weights(&self) -> Vec<f64> {
        let total: f64 = self.retention.iter().sum();
        self.retention.iter().map(|w| w / total).collect()
    }

    /// Fills a batch of `config.batch_size` members by rejection sampling,
    /// then draws one timestep per member.
    pub fn prepare_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Batch> {
        self.prepare_batch_of(self.config.batch_size, rng)
    }

    pub fn prepare_batch_of<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        if size == 0 {
            return Err(TqdError::InvalidParameter("batch size must be at least 1".into()));
        }
        if self.retention.iter().all(|&p| p <= 0.0) {
            return Err(TqdError::NoRetainableSamples);
        }
        let n = self.records.len();
        let mut accepted = Vec::with_capacity(size);
        let mut attempts = 0usize;
        while accepted.len() < size {
            if attempts >= self.config.max_rejection_attempts {
                return Err(TqdError::RejectionCapExceeded {
                    attempts,
                    accepted: accepted.len(),
                    rate: accepted.len() as f64 / attempts as f64,
                });
            }
            attempts += 1;
            let index = rng.random_range(0..n);
            let u: f64 = rng.random();
            if u < self.retention[index] {
                accepted.push(index);
            }
        }
        let members = accepted
            .into_iter()
            .map(|index| BatchMember {
                index,
                t: self.laws[index].sample(rng),
            })
            .collect();
        Ok(Batch { members, attempts })
    }
}

/// One-shot batch preparation over `dataset`.
pub fn prepare_batch<R: Rng + ?Sized>(
    dataset: &[QualityRecord],
    batch_size: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Batch> {
    let config = SamplerConfig {
        batch_size,
        ..*config
    };
    TqdSampler::new(dataset.to_vec(), config)?.prepare_batch(rng)
}

//! Per-sample quality scores and population statistics.
//!
//! A record carries raw motion-quality (MQ) and visual-quality (VQ) scores as
//! produced by an external scorer. Min-max normalization maps both onto
//! `[0, 1]`; the fitted constants are kept so that held-out records can be
//! normalized against the same range.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, TqdError};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRecord {
    pub id: String,
    pub mq_raw: f64,
    pub vq_raw: f64,
    pub mq_norm: Option<f64>,
    pub vq_norm: Option<f64>,
    pub payload_ref: Option<String>,
}

impl QualityRecord {
    pub fn new(id: impl Into<String>, mq_raw: f64, vq_raw: f64) -> Self {
        Self {
            id: id.into(),
            mq_raw,
            vq_raw,
            mq_norm: None,
            vq_norm: None,
            payload_ref: None,
        }
    }

    pub fn with_payload(mut self, payload: impl Into<String>) -> Self {
        self.payload_ref = Some(payload.into());
        self
    }

    /// A record whose normalized scores are set directly.
    pub fn normalized(id: impl Into<String>, mq_norm: f64, vq_norm: f64) -> Self {
        Self {
            id: id.into(),
            mq_raw: mq_norm,
            vq_raw: vq_norm,
            mq_norm: Some(mq_norm),
            vq_norm: Some(vq_norm),
            payload_ref: None,
        }
    }

    /// `(mq_norm, vq_norm)`, or an error naming the record if either is missing.
    pub fn norm_scores(&self) -> Result<(f64, f64)> {
        match (self.mq_norm, self.vq_norm) {
            (Some(mq), Some(vq)) => Ok((mq, vq)),
            _ => Err(TqdError::Unnormalized {
                id: self.id.clone(),
            }),
        }
    }

    fn check_finite(&self) -> Result<()> {
        if !self.mq_raw.is_finite() {
            return Err(TqdError::NonFiniteScore {
                id: self.id.clone(),
                field: "mq",
            });
        }
        if !self.vq_raw.is_finite() {
            return Err(TqdError::NonFiniteScore {
                id: self.id.clone(),
                field: "vq",
            });
        }
        Ok(())
    }
}

/// Min-max constants fitted over a dataset. Serialized as the normalization
/// sidecar `{mq_min, mq_max, vq_min, vq_max}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub mq_min: f64,
    pub mq_max: f64,
    pub vq_min: f64,
    pub vq_max: f64,
}

impl NormalizationConstants {
    pub fn fit(records: &[QualityRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(TqdError::EmptyDataset);
        }
        let mut c = Self {
            mq_min: f64::INFINITY,
            mq_max: f64::NEG_INFINITY,
            vq_min: f64::INFINITY,
            vq_max: f64::NEG_INFINITY,
        };
        for r in records {
            r.check_finite()?;
            c.mq_min = c.mq_min.min(r.mq_raw);
            c.mq_max = c.mq_max.max(r.mq_raw);
            c.vq_min = c.vq_min.min(r.vq_raw);
            c.vq_max = c.vq_max.max(r.vq_raw);
        }
        Ok(c)
    }

    pub fn mq_range(&self) -> f64 {
        self.mq_max - self.mq_min
    }

    pub fn vq_range(&self) -> f64 {
        self.vq_max - self.vq_min
    }

    /// Normalizes one record. Scores outside the fitted range clamp to the
    /// nearest endpoint; a zero-width range maps everything to 0.5.
    pub fn apply(&self, record: &QualityRecord) -> Result<QualityRecord> {
        record.check_finite()?;
        let mut out = record.clone();
        out.mq_norm = Some(scale(record.mq_raw, self.mq_min, self.mq_max));
        out.vq_norm = Some(scale(record.vq_raw, self.vq_min, self.vq_max));
        Ok(out)
    }

    pub fn apply_all(&self, records: &[QualityRecord]) -> Result<Vec<QualityRecord>> {
        if records.is_empty() {
            return Err(TqdError::EmptyDataset);
        }
        records.iter().map(|r| self.apply(r)).collect()
    }
}

fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    let range = hi - lo;
    if range <= 0.0 {
        0.5
    } else {
        ((x - lo) / range).clamp(0.0, 1.0)
    }
}

/// Fits min-max constants over `records` and normalizes every record with
/// them.
pub fn normalize_scores(
    records: &[QualityRecord],
) -> Result<(Vec<QualityRecord>, NormalizationConstants)> {
    let constants = NormalizationConstants::fit(records)?;
    let normalized = constants.apply_all(records)?;
    Ok((normalized, constants))
}

/// The four quality quadrants. A score strictly above its threshold is
/// "high"; a score equal to the threshold is "low".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Quadrant {
    Hmhv,
    Hmlv,
    Lmhv,
    Lmlv,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Hmhv, Quadrant::Hmlv, Quadrant::Lmhv, Quadrant::Lmlv];

    pub fn classify(mq: f64, vq: f64, mq_threshold: f64, vq_threshold: f64) -> Self {
        match (mq > mq_threshold, vq > vq_threshold) {
            (true, true) => Quadrant::Hmhv,
            (true, false) => Quadrant::Hmlv,
            (false, true) => Quadrant::Lmhv,
            (false, false) => Quadrant::Lmlv,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Quadrant::Hmhv => "HMHV",
            Quadrant::Hmlv => "HMLV",
            Quadrant::Lmhv => "LMHV",
            Quadrant::Lmlv => "LMLV",
        }
    }
}

impl std::str::FromStr for Quadrant {
    type Err = TqdError;

    fn from_str(s: &str) -> Result<Self> {
        Quadrant::ALL
            .into_iter()
            .find(|q| q.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TqdError::InvalidParameter(format!("unknown quadrant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantPartition {
    pub thresholds: (f64, f64),
    /// Indexed by [`Quadrant::index`]: HMHV, HMLV, LMHV, LMLV.
    pub counts: [usize; 4],
    pub fractions: [f64; 4],
}

impl QuadrantPartition {
    pub fn count(&self, q: Quadrant) -> usize {
        self.counts[q.index()]
    }

    pub fn fraction(&self, q: Quadrant) -> f64 {
        self.fractions[q.index()]
    }
}

/// Assigns every record to a quadrant using raw-score thresholds.
pub fn partition_quadrants(
    records: &[QualityRecord],
    mq_threshold: f64,
    vq_threshold: f64,
) -> Result<QuadrantPartition> {
    if records.is_empty() {
        return Err(TqdError::EmptyDataset);
    }
    let mut counts = [0usize; 4];
    for r in records {
        counts[Quadrant::classify(r.mq_raw, r.vq_raw, mq_threshold, vq_threshold).index()] += 1;
    }
    let n = records.len() as f64;
    let fractions = counts.map(|c| c as f64 / n);
    Ok(QuadrantPartition {
        thresholds: (mq_threshold, vq_threshold),
        counts,
        fractions,
    })
}

/// Median raw MQ and VQ scores (mean of the middle pair for even counts).
pub fn median_thresholds(records: &[QualityRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(TqdError::EmptyDataset);
    }
    for r in records {
        r.check_finite()?;
    }
    let mq = median(records.iter().map(|r| r.mq_raw).collect());
    let vq = median(records.iter().map(|r| r.vq_raw).collect());
    Ok((mq, vq))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub pearson_r: f64,
    /// Two-sided p-value of the t-test for zero correlation.
    pub p_value: f64,
    pub n: usize,
}

/// Sample Pearson correlation between raw MQ and VQ.
pub fn pearson_correlation(records: &[QualityRecord]) -> Result<PopulationStats> {
    for r in records {
        r.check_finite()?;
    }
    let mq: Vec<f64> = records.iter().map(|r| r.mq_raw).collect();
    let vq: Vec<f64> = records.iter().map(|r| r.vq_raw).collect();
    pearson(&mq, &vq)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<PopulationStats> {
    if xs.len() != ys.len() {
        return Err(TqdError::ShapeMismatch {
            expected: format!("{} values", xs.len()),
            got: format!("{} values", ys.len()),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(TqdError::TooFewRecords { needed: 3, got: n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(TqdError::ConstantScores);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let dof = nf - 2.0;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("dof >= 1");
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    Ok(PopulationStats {
        pearson_r: r,
        p_value,
        n,
    })
}

/// Affine placement of the synthetic score population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub mq_mean: f64,
    pub mq_std: f64,
    pub vq_mean: f64,
    pub vq_std: f64,
}

impl Default for ScoreScale {
    fn default() -> Self {
        // Centred on the raw thresholds commonly used for MQ/VQ filtering.
        Self {
            mq_mean: 2.5,
            mq_std: 0.5,
            vq_mean: 2.7,
            vq_std: 0.5,
        }
    }
}

/// Draws `n` score pairs from a bivariate normal with correlation
/// `target_r`, placed according to `scale`.
pub fn synth_population(
    n: usize,
    target_r: f64,
    seed: u64,
    scale: ScoreScale,
) -> Result<Vec<QualityRecord>> {
    if target_r.is_nan() || target_r.abs() >= 1.0 {
        return Err(TqdError::InvalidParameter(format!(
            "target correlation must lie strictly inside (-1, 1), got {target_r}"
        )));
    }
    let mut rng = rng::stream(seed, rng::streams::POPULATION);
    let cross = (1.0 - target_r * target_r).sqrt();
    let width = n.max(1).to_string().len();
    Ok((0..n)
        .map(|i| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let zv = target_r * z1 + cross * z2;
            QualityRecord::new(
                format!("pop-{i:0width$}"),
                scale.mq_mean + scale.mq_std * z1,
                scale.vq_mean + scale.vq_std * zv,
            )
        })
        .collect())
}

/// Perturbs raw scores with zero-mean Gaussian noise whose standard
/// deviation is `noise_level` times the per-metric raw range of `records`.
///
/// The same standard-normal draws are used for every `noise_level` under a
/// given seed, so sweeps over the level are directly comparable. Normalized
/// fields are cleared whenever noise is applied; level 0 returns the input
/// untouched.
pub fn inject_score_noise(
    records: &[QualityRecord],
    noise_level: f64,
    seed: u64,
) -> Result<Vec<QualityRecord>> {
    if !noise_level.is_finite() || noise_level < 0.0 {
        return Err(TqdError::InvalidParameter(format!(
            "noise level must be a finite non-negative number, got {noise_level}"
        )));
    }
    if noise_level == 0.0 {
        return Ok(records.to_vec());
    }
    let constants = NormalizationConstants::fit(records)?;
    let mq_std = noise_level * constants.mq_range();
    let vq_std = noise_level * constants.vq_range();
    let mut rng = rng::stream(seed, rng::streams::SCORE_NOISE);
    Ok(records
        .iter()
        .map(|r| {
            let zm: f64 = rng.sample(StandardNormal);
            let zv: f64 = rng.sample(StandardNormal);
            QualityRecord {
                id: r.id.clone(),
                mq_raw: r.mq_raw + mq_std * zm,
                vq_raw: r.vq_raw + vq_std * zv,
                mq_norm: None,
                vq_norm: None,
                payload_ref: r.payload_ref.clone(),
            }
        })
        .collect())
}

/// Probability that both coordinates of a standard bivariate normal with
/// correlation `rho` are positive: `1/4 + asin(rho) / (2 pi)`.
pub fn bivariate_normal_positive_quadrant(rho: f64) -> f64 {
    0.25 + rho.asin() / (2.0 * std::f64::consts::PI)
}

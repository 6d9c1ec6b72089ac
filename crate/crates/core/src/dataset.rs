//! Manifests with synthetic payloads, quadrant filtering, and loading
//! records together with their videos.

use std::path::Path;

use crate::error::{Result, TqdError};
use crate::quality::{synth_population, Quadrant, QualityRecord, ScoreScale};
use crate::rng;
use crate::trainer::TrainingSample;
use crate::video::{Payload, VideoDims};

/// Largest speed a score can ask for; `mq_analog` is within 1% of its
/// supremum there.
pub const MAX_SPEED: f64 = 6.9;

/// Inverse of [`crate::video::mq_analog`], clamped to `[0, MAX_SPEED]`.
pub fn speed_for_mq(mq: f64) -> f64 {
    let u = ((mq - 1.0) / 4.0).clamp(0.0, 0.99);
    (-1.5 * (1.0 - u).ln()).min(MAX_SPEED)
}

/// Inverse of [`crate::video::vq_analog`], clamped so scores at or below 1
/// give a noise std of about 0.46.
pub fn noise_for_vq(vq: f64) -> f64 {
    let u = ((vq - 1.0) / 4.0).clamp(0.01, 1.0);
    -0.1 * u.ln()
}

/// Gives every record a synthetic video whose analog scores reproduce its
/// raw scores (up to clamping). Record `i` gets generator seed
/// `derive_seed(seed, i)`.
pub fn attach_synthetic_payloads(records: &[QualityRecord], seed: u64) -> Vec<QualityRecord> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = Payload::synthetic(
                speed_for_mq(r.mq_raw),
                noise_for_vq(r.vq_raw),
                rng::derive_seed(seed, i as u64),
            );
            r.clone().with_payload(p)
        })
        .collect()
}

/// A correlated score population with synthetic payloads attached.
pub fn synth_manifest(n: usize, target_r: f64, seed: u64, scale: ScoreScale) -> Result<Vec<QualityRecord>> {
    Ok(attach_synthetic_payloads(&synth_population(n, target_r, seed, scale)?, seed))
}

/// Raw score given to every record of [`reference_manifest`].
pub const REFERENCE_SCORE: f64 = 3.0;

/// Neutral-score records whose videos cycle through speeds 0, 1, 2, 3 — a
/// diverse set for pre-training a probe model. Record `i` uses generator seed
/// `derive_seed(seed, i)`.
pub fn reference_manifest(n: usize, texture_noise: f64, seed: u64) -> Vec<QualityRecord> {
    (0..n)
        .map(|i| {
            let p = Payload::synthetic((i % 4) as f64, texture_noise, rng::derive_seed(seed, i as u64));
            QualityRecord::new(format!("ref-{i}"), REFERENCE_SCORE, REFERENCE_SCORE).with_payload(p)
        })
        .collect()
}

/// Keeps records whose raw scores fall in one of `keep`.
pub fn filter_quadrants(records: &[QualityRecord], keep: &[Quadrant], thresholds: (f64, f64)) -> Vec<QualityRecord> {
    records
        .iter()
        .filter(|r| keep.contains(&Quadrant::classify(r.mq_raw, r.vq_raw, thresholds.0, thresholds.1)))
        .cloned()
        .collect()
}

/// Parses `quadrant=HMLV,LMHV`.
pub fn parse_quadrant_filter(s: &str) -> Result<Vec<Quadrant>> {
    let list = s
        .strip_prefix("quadrant=")
        .ok_or_else(|| TqdError::InvalidParameter(format!("unsupported filter `{s}` (expected quadrant=...)")))?;
    let qs = list
        .split(',')
        .map(|q| q.trim().parse::<Quadrant>())
        .collect::<Result<Vec<_>>>()?;
    if qs.is_empty() {
        return Err(TqdError::InvalidParameter("empty quadrant filter".into()));
    }
    Ok(qs)
}

/// Materializes every record's video. Relative file payloads resolve
/// against `base`.
pub fn load_samples(records: &[QualityRecord], dims: VideoDims, base: Option<&Path>) -> Result<Vec<TrainingSample>> {
    records
        .iter()
        .map(|r| {
            let payload = r.payload_ref.as_deref().ok_or_else(|| TqdError::Payload {
                id: r.id.clone(),
                message: "no payload".into(),
            })?;
            let video = Payload::parse(payload)
                .and_then(|p| p.resolve(dims, base))
                .map_err(|e| match e {
                    TqdError::InvalidParameter(message) => TqdError::Payload {
                        id: r.id.clone(),
                        message,
                    },
                    other => other,
                })?;
            Ok(TrainingSample {
                record: r.clone(),
                video,
            })
        })
        .collect()
}

//! Diagnostics: gradient alignment under degradations, timestep histograms,
//! scorer-noise sweeps, and quadrant reports. All reports serialize to CSV or
//! JSON with fixed formatting so that identical inputs give identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TqdError};
use crate::model::VelocityModel;
use crate::quality::{
    self, median_thresholds, normalize_scores, partition_quadrants, PopulationStats, Quadrant,
    QuadrantPartition, QualityRecord,
};
use crate::rng;
use crate::sampler::{compute_mu, BatchMember, SamplerConfig, SamplingMode, TqdSampler};
use crate::stats::{self, ChiSquareResult};
use crate::trainer::{self, evaluate_loss, grad_at_timestep, TrainerConfig, TrainingSample};
use crate::video::{degrade, generate_moving_shape_with, DegradationKind, DegradationSpec, ToyVideo, VideoDims};

/// `{0.1, 0.2, ..., 0.9}`.
pub fn default_t_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Everything a probe run needs besides the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSettings {
    pub degradations: Vec<DegradationSpec>,
    pub t_grid: Vec<f64>,
    pub n_noise: usize,
    pub noise_seed: u64,
    /// Synthetic probe videos, used when no manifest is given.
    pub n_samples: usize,
    pub motion_speed: f64,
    pub texture_noise: f64,
    pub sample_seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            degradations: DegradationSpec::defaults(0),
            t_grid: default_t_grid(),
            n_noise: 16,
            noise_seed: 0,
            n_samples: 40,
            motion_speed: 2.0,
            texture_noise: 0.05,
            sample_seed: 0,
        }
    }
}

/// Three strengths per visual degradation and two shuffle fractions.
pub fn strength_sweep(seed: u64) -> Vec<DegradationSpec> {
    use DegradationKind::*;
    [
        (Blur, 1.0),
        (Blur, 2.0),
        (Blur, 3.0),
        (Compression, 16.0),
        (Compression, 8.0),
        (Compression, 4.0),
        (Noise, 0.05),
        (Noise, 0.1),
        (Noise, 0.2),
        (Shuffle, 0.5),
        (Shuffle, 1.0),
    ]
    .into_iter()
    .map(|(k, s)| DegradationSpec::new(k, s, seed))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientProbeCurve {
    pub degradation: DegradationSpec,
    /// `(t, mean L2 distance)` with strictly increasing `t`.
    pub points: Vec<(f64, f64)>,
    pub n_samples: usize,
}

impl GradientProbeCurve {
    pub fn distance_at(&self, t: f64) -> Option<f64> {
        self.points.iter().find(|p| (p.0 - t).abs() < 1e-12).map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean_l2_distance\n");
        for (t, d) in &self.points {
            writeln!(s, "{t},{d}").unwrap();
        }
        s
    }
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// For every degradation and every `t` in `t_grid`, the mean over `samples`
/// of `|| grad(original, t) - grad(degraded, t) ||_2`.
///
/// Sample `i` uses noise seed `derive_seed(noise_seed, i)` for both the
/// original and all of its degraded copies, and degradation seeds are
/// derived per sample from each spec's own seed.
pub fn gradient_probe(
    model: &VelocityModel,
    samples: &[ToyVideo],
    degradations: &[DegradationSpec],
    t_grid: &[f64],
    n_noise: usize,
    noise_seed: u64,
) -> Result<Vec<GradientProbeCurve>> {
    if samples.is_empty() {
        return Err(TqdError::EmptyDataset);
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(TqdError::InvalidParameter("probe timesteps must lie in (0, 1)".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TqdError::InvalidParameter("probe timesteps must be strictly increasing".into()));
    }
    for d in degradations {
        d.validate()?;
    }

    // originals and degraded copies as f64, indexed [sample][0 = original, 1.. = degradations]
    let inputs: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut row = vec![v.to_f64()];
            for d in degradations {
                let spec = DegradationSpec {
                    seed: rng::derive_seed(d.seed, i as u64),
                    ..*d
                };
                row.push(degrade(v, &spec)?.to_f64());
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let units: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|i| (0..t_grid.len()).map(move |j| (i, j)))
        .collect();
    let distances: Vec<Vec<f64>> = units
        .par_iter()
        .map(|&(i, j)| {
            let seed = rng::derive_seed(noise_seed, i as u64);
            let t = t_grid[j];
            let original = grad_at_timestep(model, &inputs[i][0], t, seed, n_noise)?;
            (1..=degradations.len())
                .map(|k| {
                    if inputs[i][k] == inputs[i][0] {
                        return Ok(0.0);
                    }
                    let g = grad_at_timestep(model, &inputs[i][k], t, seed, n_noise)?;
                    Ok(l2_distance(&original, &g))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let n = samples.len() as f64;
    Ok(degradations
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let points = t_grid
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    // fixed summation order: sample index ascending
                    let sum: f64 = (0..samples.len())
                        .map(|i| distances[i * t_grid.len() + j][k])
                        .sum();
                    (t, sum / n)
                })
                .collect();
            GradientProbeCurve {
                degradation: *d,
                points,
                n_samples: samples.len(),
            }
        })
        .collect())
}

/// [`crate::dataset::reference_manifest`] loaded and given neutral
/// normalized scores, so baseline and quality-aware sampling coincide.
pub fn reference_training_set(n: usize, dims: VideoDims, texture_noise: f64, seed: u64) -> Result<Vec<TrainingSample>> {
    let records = crate::dataset::reference_manifest(n, texture_noise, seed);
    let mut samples = crate::dataset::load_samples(&records, dims, None)?;
    for s in &mut samples {
        s.record.mq_norm = Some(0.5);
        s.record.vq_norm = Some(0.5);
    }
    Ok(samples)
}

/// `n` probe videos at one speed and noise level.
pub fn probe_samples(n: usize, dims: VideoDims, motion_speed: f64, texture_noise: f64, seed: u64) -> Vec<ToyVideo> {
    (0..n)
        .map(|i| generate_moving_shape_with(dims, motion_speed, texture_noise, rng::derive_seed(seed, i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub observed: u64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub n_draws: usize,
    pub bins: Vec<HistogramBin>,
    pub chi_square: ChiSquareResult,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

impl HistogramReport {
    /// Both tests fail to reject at the 1% level.
    pub fn passes(&self) -> bool {
        self.chi_square.p_value > stats::SIGNIFICANCE && self.ks_p_value > stats::SIGNIFICANCE
    }

    pub fn fraction_above(&self, t: f64) -> f64 {
        let above: u64 = self.bins.iter().filter(|b| b.lo >= t).map(|b| b.observed).sum();
        above as f64 / self.n_draws as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_bin_lo,t_bin_hi,count,expected\n");
        for b in &self.bins {
            writeln!(s, "{},{},{},{}", b.lo, b.hi, b.observed, b.expected).unwrap();
        }
        s
    }
}

pub const DEFAULT_BINS: usize = 50;

/// Draws `n_draws` batch members through the full batch-preparation path.
pub fn draw_members(sampler: &TqdSampler, n_draws: usize, seed: u64) -> Result<Vec<BatchMember>> {
    let mut rng = rng::stream(seed, rng::streams::BATCH);
    let mut out = Vec::with_capacity(n_draws);
    let batch = sampler.config().batch_size;
    while out.len() < n_draws {
        let want = batch.min(n_draws - out.len());
        out.extend(sampler.prepare_batch_of(want, &mut rng)?.members);
    }
    Ok(out)
}

fn bin_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| i as f64 / bins as f64).collect()
}

fn bin_index(t: f64, bins: usize) -> usize {
    ((t * bins as f64) as usize).min(bins - 1)
}

/// Per-(record, bin) observed and expected counts for `n_draws` members.
/// The prediction is `n * w_r * mass_r(bin)` with `w_r` the renormalized
/// retention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    pub edges: Vec<f64>,
    pub observed: Vec<Vec<u64>>,
    pub expected: Vec<Vec<f64>>,
}

impl JointHistogram {
    pub fn chi_square(&self) -> ChiSquareResult {
        let o: Vec<f64> = self.observed.iter().flatten().map(|&c| c as f64).collect();
        let e: Vec<f64> = self.expected.iter().flatten().copied().collect();
        stats::chi_square(&o, &e, 5.0)
    }
}

pub fn joint_histogram(members: &[BatchMember], sampler: &TqdSampler, bins: usize) -> JointHistogram {
    let edges = bin_edges(bins);
    let n_rec = sampler.records().len();
    let mut observed = vec![vec![0u64; bins]; n_rec];
    for m in members {
        observed[m.index][bin_index(m.t, bins)] += 1;
    }
    let n = members.len() as f64;
    let weights = sampler.selection_weights();
    let expected = sampler
        .laws()
        .iter()
        .zip(&weights)
        .map(|(law, w)| {
            edges
                .windows(2)
                .map(|e| n * w * law.mass(e[0], e[1]))
                .collect()
        })
        .collect();
    JointHistogram {
        edges,
        observed,
        expected,
    }
}

/// Timestep histogram with chi-square and KS checks against the mixture of
/// per-record laws weighted by retention.
pub fn timestep_histogram(
    dataset: &[QualityRecord],
    sampler_config: &SamplerConfig,
    n_draws: usize,
) -> Result<HistogramReport> {
    let sampler = TqdSampler::new(dataset.to_vec(), *sampler_config)?;
    timestep_histogram_for(&sampler, n_draws, DEFAULT_BINS)
}

pub fn timestep_histogram_for(sampler: &TqdSampler, n_draws: usize, bins: usize) -> Result<HistogramReport> {
    if n_draws < 1000 {
        return Err(TqdError::InvalidParameter(format!(
            "timestep histogram needs at least 1000 draws, got {n_draws}"
        )));
    }
    if bins == 0 {
        return Err(TqdError::InvalidParameter("need at least one bin".into()));
    }
    let members = draw_members(sampler, n_draws, sampler.config().seed)?;
    let joint = joint_histogram(&members, sampler, bins);
    let bins_out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: joint.edges[b],
            hi: joint.edges[b + 1],
            observed: joint.observed.iter().map(|row| row[b]).sum(),
            expected: joint.expected.iter().map(|row| row[b]).sum(),
        })
        .collect();
    let o: Vec<f64> = bins_out.iter().map(|b| b.observed as f64).collect();
    let e: Vec<f64> = bins_out.iter().map(|b| b.expected).collect();
    let chi_square = stats::chi_square(&o, &e, 5.0);

    let weights = sampler.selection_weights();
    let laws = sampler.laws();
    let mut ts: Vec<f64> = members.iter().map(|m| m.t).collect();
    let ks_statistic = stats::ks_statistic_with_atoms(
        &mut ts,
        |t| laws.iter().zip(&weights).map(|(l, w)| w * l.sampled_cdf(t)).sum(),
        |t| laws.iter().zip(&weights).map(|(l, w)| w * l.sampled_cdf_left(t)).sum(),
    );
    Ok(HistogramReport {
        n_draws,
        bins: bins_out,
        chi_square,
        ks_statistic,
        ks_p_value: stats::ks_p_value(ks_statistic, n_draws),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub noise_level: f64,
    pub final_loss: f64,
    pub mean_mu_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
    /// Mean |shift in mu| never decreases as the noise level grows.
    pub monotone_mu_shift: bool,
}

impl RobustnessReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("noise_level,final_loss,mean_mu_shift\n");
        for r in &self.rows {
            writeln!(s, "{},{},{}", r.noise_level, r.final_loss, r.mean_mu_shift).unwrap();
        }
        s
    }
}

/// How trained models are scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub t_grid: Vec<f64>,
    pub n_noise: usize,
    pub noise_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            t_grid: default_t_grid(),
            n_noise: 4,
            noise_seed: 0xE7A1,
        }
    }
}

fn mus(records: &[QualityRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            let (m, v) = r.norm_scores()?;
            compute_mu(m, v)
        })
        .collect()
}

/// For each noise level: perturb the raw scores, re-normalize, retrain with
/// identical seeds, and report the evaluation loss on the dataset's own
/// videos together with the mean absolute shift of each record's `mu`.
pub fn robustness_sweep(
    dataset: &[TrainingSample],
    noise_levels: &[f64],
    sampler_config: &SamplerConfig,
    trainer_config: &TrainerConfig,
    score_noise_seed: u64,
    eval: &EvalSettings,
) -> Result<RobustnessReport> {
    if let Some(bad) = noise_levels.iter().find(|l| l.is_nan() || **l < 0.0) {
        return Err(TqdError::InvalidParameter(format!("noise level {bad} is negative")));
    }
    let raw: Vec<QualityRecord> = dataset.iter().map(|s| s.record.clone()).collect();
    let (clean, _) = normalize_scores(&raw)?;
    let clean_mu = mus(&clean)?;
    let videos: Vec<Vec<f64>> = dataset.iter().map(|s| s.video.to_f64()).collect();

    let mut rows = Vec::with_capacity(noise_levels.len());
    for &level in noise_levels {
        let noisy = quality::inject_score_noise(&raw, level, score_noise_seed)?;
        let (noisy, _) = normalize_scores(&noisy)?;
        let noisy_mu = mus(&noisy)?;
        let mean_mu_shift = clean_mu
            .iter()
            .zip(&noisy_mu)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / clean_mu.len() as f64;
        let samples: Vec<TrainingSample> = noisy
            .into_iter()
            .zip(dataset)
            .map(|(record, s)| TrainingSample {
                record,
                video: s.video.clone(),
            })
            .collect();
        let state = trainer::train(&samples, sampler_config, trainer_config, SamplingMode::Tqd)?;
        let final_loss = evaluate_loss(&state.model, &videos, &eval.t_grid, eval.noise_seed, eval.n_noise)?;
        rows.push(RobustnessRow {
            noise_level: level,
            final_loss,
            mean_mu_shift,
        });
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.noise_level.total_cmp(&b.noise_level));
    let monotone_mu_shift = sorted.windows(2).all(|w| w[1].mean_mu_shift >= w[0].mean_mu_shift);
    Ok(RobustnessReport {
        rows,
        monotone_mu_shift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantReport {
    pub n: usize,
    pub partition: QuadrantPartition,
    /// Absent when fewer than three records or a constant score column.
    pub stats: Option<PopulationStats>,
}

impl QuadrantReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let (mt, vt) = self.partition.thresholds;
        let mut s = format!("quadrants of {} records (MQ > {mt}, VQ > {vt} is high)\n", self.n);
        s.push_str("quadrant  count     fraction\n");
        for q in Quadrant::ALL {
            writeln!(
                s,
                "{:<8}  {:>8}  {:>9.4}",
                q.label(),
                self.partition.count(q),
                self.partition.fraction(q)
            )
            .unwrap();
        }
        match &self.stats {
            Some(st) => writeln!(s, "pearson r = {:.4} (p = {:.3e}, n = {})", st.pearson_r, st.p_value, st.n)
                .unwrap(),
            None => s.push_str("pearson r unavailable\n"),
        }
        s
    }
}

/// Quadrant fractions and MQ/VQ correlation. `thresholds` defaults to the
/// median raw scores.
pub fn quadrant_report(records: &[QualityRecord], thresholds: Option<(f64, f64)>) -> Result<QuadrantReport> {
    if records.is_empty() {
        return Err(TqdError::EmptyDataset);
    }
    let (mt, vt) = match thresholds {
        Some(t) => t,
        None => median_thresholds(records)?,
    };
    let partition = partition_quadrants(records, mt, vt)?;
    let stats = match quality::pearson_correlation(records) {
        Ok(s) => Some(s),
        Err(TqdError::TooFewRecords { .. } | TqdError::ConstantScores) => None,
        Err(e) => return Err(e),
    };
    Ok(QuadrantReport {
        n: records.len(),
        partition,
        stats,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short content hash used to name run directories.
pub fn run_id(resolved_config_json: &str) -> String {
    sha256_hex(resolved_config_json.as_bytes())[..12].to_string()
}

pub fn density_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("t,pdf\n");
    for (t, p) in curve {
        writeln!(s, "{t},{p}").unwrap();
    }
    s
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| TqdError::io(path, e))
}

/// Crossing pattern of the probe: shuffle aligns better at low `t`, every
/// visual degradation aligns better at high `t`.
pub fn crossing_holds(curves: &[GradientProbeCurve], t_low: f64, t_high: f64) -> bool {
    curves.iter().all(|c| {
        let (Some(lo), Some(hi)) = (c.distance_at(t_low), c.distance_at(t_high)) else {
            return false;
        };
        match c.degradation.kind {
            DegradationKind::Shuffle => lo < hi,
            _ => hi < lo,
        }
    })
}

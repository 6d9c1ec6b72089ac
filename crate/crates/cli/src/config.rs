//! Resolved run configurations.
//!
//! Command-line flags, an optional JSON config file, and the input files are
//! folded into one [`RunConfig`] before any work starts. The resolved value is
//! what gets echoed to `config.json`, names the run directory, and is the only
//! input `tqd rerun` needs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tqd_core::analysis::{self, EvalSettings, ProbeSettings};
use tqd_core::manifest::{read_manifest, read_sidecar, sidecar_path};
use tqd_core::quality::median_thresholds;
use tqd_core::{NormalizationConstants, Quadrant, QualityRecord, Result, SamplerConfig, SamplingMode, TqdError, TrainerConfig};

use crate::args::{CurateArgs, ProbeArgs, SampleStatsArgs, SweepArgs, TrainArgs};

/// Seed for scorer-noise draws unless the config file names one.
pub const DEFAULT_SCORE_NOISE_SEED: u64 = 0x5C0E;
/// Points of each emitted density curve.
pub const DENSITY_POINTS: usize = 200;

/// An input file pinned by content hash, so a replay notices edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    pub fn pin(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let path = fs::canonicalize(path).map_err(|e| io_err(path, e))?;
        Ok(Self {
            path,
            sha256: analysis::sha256_hex(&bytes),
        })
    }

    /// Reads the file, failing if its content no longer matches the pin.
    pub fn read_verified(&self) -> Result<Vec<u8>> {
        let bytes = fs::read(&self.path).map_err(|e| io_err(&self.path, e))?;
        let got = analysis::sha256_hex(&bytes);
        if got != self.sha256 {
            return Err(TqdError::Artifact(format!(
                "{} changed since the run was recorded (sha256 {got}, expected {})",
                self.path.display(),
                self.sha256
            )));
        }
        Ok(bytes)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.path.parent()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> TqdError {
    TqdError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantFilter {
    pub keep: Vec<Quadrant>,
    /// Raw-score thresholds used to classify records.
    pub thresholds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurateRun {
    pub manifest: InputFile,
    pub thresholds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStatsRun {
    pub manifest: InputFile,
    pub normalization: NormalizationConstants,
    pub mode: SamplingMode,
    pub sampler: SamplerConfig,
    pub n_draws: usize,
    pub bins: usize,
    /// Quadrant thresholds for the per-profile density curves.
    pub thresholds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub manifest: InputFile,
    pub noise_level: f64,
    pub score_noise_seed: u64,
    pub normalization: NormalizationConstants,
    pub filter: Option<QuadrantFilter>,
    pub mode: SamplingMode,
    pub sampler: SamplerConfig,
    pub trainer: TrainerConfig,
    /// Scores the trained model on the training videos.
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub model: InputFile,
    /// Videos to probe; synthetic ones from `probe` when absent.
    pub manifest: Option<InputFile>,
    pub probe: ProbeSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub manifest: InputFile,
    pub noise_levels: Vec<f64>,
    pub score_noise_seed: u64,
    pub sampler: SamplerConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Curate(CurateRun),
    SampleStats(SampleStatsRun),
    Train(TrainRun),
    Probe(ProbeRun),
    Sweep(SweepRun),
}

impl RunConfig {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| TqdError::InvalidParameter(format!("not a run config: {e}")))
    }

    pub fn run_id(&self) -> Result<String> {
        Ok(analysis::run_id(&self.to_json()?))
    }
}

/// The `--config` file: flat sampler keys plus optional sections.
#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    #[serde(flatten)]
    sampler: SamplerConfig,
    trainer: Option<TrainerConfig>,
    probe: Option<ProbeSettings>,
    eval: Option<EvalSettings>,
    score_noise_seed: Option<u64>,
}

fn read_config_file(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| TqdError::InvalidParameter(format!("{}: {e}", path.display())))?;
    if value.get("command").is_some() {
        return Err(TqdError::InvalidParameter(format!(
            "{} is an echoed run config; replay it with `tqd rerun`",
            path.display()
        )));
    }
    serde_json::from_value(value).map_err(|e| TqdError::InvalidParameter(format!("{}: {e}", path.display())))
}

/// Normalization priority: `--norm`, then the manifest's sidecar (clean
/// scores only), then a fit on the scores at hand.
fn resolve_normalization(
    norm: Option<&Path>,
    manifest: &Path,
    records: &[QualityRecord],
    use_sidecar: bool,
) -> Result<NormalizationConstants> {
    // a fit also validates every score, so it runs even when discarded
    let fitted = NormalizationConstants::fit(records)?;
    if let Some(p) = norm {
        return read_sidecar(p);
    }
    let sidecar = sidecar_path(manifest);
    if use_sidecar && sidecar.exists() {
        return read_sidecar(sidecar);
    }
    Ok(fitted)
}

fn check_n_draws(n: usize) -> Result<()> {
    if n < 1000 {
        return Err(TqdError::InvalidParameter(format!("--n-draws must be at least 1000, got {n}")));
    }
    Ok(())
}

pub fn resolve_curate(a: &CurateArgs) -> Result<RunConfig> {
    let records = read_manifest(&a.manifest)?;
    NormalizationConstants::fit(&records)?;
    let thresholds = match a.thresholds {
        Some(t) => t,
        None => median_thresholds(&records)?,
    };
    Ok(RunConfig::Curate(CurateRun {
        manifest: InputFile::pin(&a.manifest)?,
        thresholds,
    }))
}

pub fn resolve_sample_stats(a: &SampleStatsArgs) -> Result<RunConfig> {
    check_n_draws(a.n_draws)?;
    if a.bins == 0 {
        return Err(TqdError::InvalidParameter("--bins must be positive".into()));
    }
    let file = read_config_file(a.config.as_deref())?;
    let mut sampler = file.sampler;
    if let Some(s) = a.seed {
        sampler.seed = s;
    }
    sampler.validate()?;
    let records = read_manifest(&a.manifest)?;
    let normalization = resolve_normalization(a.norm.as_deref(), &a.manifest, &records, true)?;
    Ok(RunConfig::SampleStats(SampleStatsRun {
        manifest: InputFile::pin(&a.manifest)?,
        normalization,
        mode: mode(a.baseline),
        sampler,
        n_draws: a.n_draws,
        bins: a.bins,
        thresholds: median_thresholds(&records)?,
    }))
}

fn mode(baseline: bool) -> SamplingMode {
    if baseline {
        SamplingMode::Baseline
    } else {
        SamplingMode::Tqd
    }
}

pub fn resolve_train(a: &TrainArgs) -> Result<RunConfig> {
    let file = read_config_file(a.config.as_deref())?;
    let mut sampler = file.sampler;
    let mut trainer = file.trainer.unwrap_or_default();
    if let Some(s) = a.seed {
        sampler.seed = s;
        trainer.seed = s;
    }
    if let Some(n) = a.steps {
        trainer.steps = n;
    }
    sampler.validate()?;
    trainer.validate()?;
    let score_noise_seed = file.score_noise_seed.unwrap_or(DEFAULT_SCORE_NOISE_SEED);

    let raw = read_manifest(&a.manifest)?;
    let scored = tqd_core::quality::inject_score_noise(&raw, a.noise_level, score_noise_seed)?;
    let normalization = resolve_normalization(a.norm.as_deref(), &a.manifest, &scored, a.noise_level == 0.0)?;
    let filter = match &a.filter {
        Some(f) => Some(QuadrantFilter {
            keep: tqd_core::dataset::parse_quadrant_filter(f)?,
            thresholds: match a.thresholds {
                Some(t) => t,
                None => median_thresholds(&scored)?,
            },
        }),
        None => None,
    };
    Ok(RunConfig::Train(TrainRun {
        manifest: InputFile::pin(&a.manifest)?,
        noise_level: a.noise_level,
        score_noise_seed,
        normalization,
        filter,
        mode: mode(a.baseline),
        sampler,
        trainer,
        eval: file.eval.unwrap_or_default(),
    }))
}

pub fn resolve_probe(a: &ProbeArgs) -> Result<RunConfig> {
    let file = read_config_file(a.config.as_deref())?;
    let mut probe = file.probe.unwrap_or_default();
    if a.sweep {
        probe.degradations = analysis::strength_sweep(0);
    }
    if let Some(s) = a.seed {
        probe.noise_seed = s;
        probe.sample_seed = s;
        for d in &mut probe.degradations {
            d.seed = s;
        }
    }
    for d in &probe.degradations {
        d.validate()?;
    }
    if probe.degradations.is_empty() || probe.t_grid.is_empty() || probe.n_noise == 0 {
        return Err(TqdError::InvalidParameter(
            "probe needs at least one degradation, timestep and noise draw".into(),
        ));
    }
    Ok(RunConfig::Probe(ProbeRun {
        model: InputFile::pin(&a.model)?,
        manifest: a.manifest.as_deref().map(InputFile::pin).transpose()?,
        probe,
    }))
}

pub fn resolve_sweep(a: &SweepArgs) -> Result<RunConfig> {
    let file = read_config_file(a.config.as_deref())?;
    let mut sampler = file.sampler;
    let mut trainer = file.trainer.unwrap_or_default();
    if let Some(s) = a.seed {
        sampler.seed = s;
        trainer.seed = s;
    }
    if let Some(n) = a.steps {
        trainer.steps = n;
    }
    sampler.validate()?;
    trainer.validate()?;
    if a.noise_level.is_empty() || a.noise_level.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(TqdError::InvalidParameter(
            "--noise-level needs finite non-negative levels".into(),
        ));
    }
    NormalizationConstants::fit(&read_manifest(&a.manifest)?)?;
    Ok(RunConfig::Sweep(SweepRun {
        manifest: InputFile::pin(&a.manifest)?,
        noise_levels: a.noise_level.clone(),
        score_noise_seed: file.score_noise_seed.unwrap_or(DEFAULT_SCORE_NOISE_SEED),
        sampler,
        trainer,
        eval: file.eval.unwrap_or_default(),
    }))
}

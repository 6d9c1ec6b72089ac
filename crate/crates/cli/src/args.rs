use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Quality-aware timestep sampling: curation, sampler diagnostics, toy
/// training, and gradient probes.
///
/// Every run writes its fully resolved configuration to
/// `<out>/<run-id>/config.json` before doing any work; `tqd rerun` replays
/// it bit for bit. Exit codes: 0 ok, 1 usage, 2 I/O, 3 data, 4 numeric,
/// 5 artifact mismatch. `TQD_THREADS` caps worker threads (0 = all cores).
#[derive(Debug, Parser)]
#[command(name = "tqd", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize scores, write the sidecar, and report quadrants and correlation.
    Curate(CurateArgs),
    /// Histogram of sampled timesteps checked against the predicted mixture.
    SampleStats(SampleStatsArgs),
    /// Train the toy velocity model on a manifest.
    Train(TrainArgs),
    /// Gradient distance between original and degraded videos across timesteps.
    Probe(ProbeArgs),
    /// Retrain under increasing scorer noise and report loss and mu shift.
    Sweep(SweepArgs),
    /// Write a synthetic manifest whose records carry generator payloads.
    Synth(SynthArgs),
    /// Replay a run from its echoed config.json.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Raw-score thresholds `MQ,VQ`; medians when omitted.
    #[arg(long, value_parser = parse_pair)]
    pub thresholds: Option<(f64, f64)>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SampleStatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON with sampler keys (kappa_base, kappa_max, min_shape, batch_size,
    /// max_rejection_attempts, seed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Normalization constants; defaults to the manifest's sidecar, else fitted.
    #[arg(long)]
    pub norm: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    pub n_draws: usize,
    #[arg(long, default_value_t = tqd_core::analysis::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Uniform retention and the degenerate law for every record.
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON with sampler keys plus an optional `trainer` object.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub norm: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Seeds both batch selection and the trainer.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub baseline: bool,
    /// Keep only some quadrants, e.g. `quadrant=HMLV,LMHV`.
    #[arg(long)]
    pub filter: Option<String>,
    /// Quadrant thresholds `MQ,VQ` for --filter; medians when omitted.
    #[arg(long, value_parser = parse_pair)]
    pub thresholds: Option<(f64, f64)>,
    /// Scorer-noise level injected into raw scores before normalization.
    #[arg(long, default_value_t = 0.0)]
    pub noise_level: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Checkpoint written by `tqd train`.
    #[arg(long)]
    pub model: PathBuf,
    /// JSON with an optional `probe` object.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Probe this manifest's videos instead of synthetic ones.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probe a grid of strengths per degradation kind.
    #[arg(long)]
    pub sweep: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated scorer-noise levels.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2")]
    pub noise_level: Vec<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = -0.22, allow_hyphen_values = true)]
    pub target_r: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only some quadrants (median thresholds), e.g. `quadrant=HMLV,LMHV`.
    #[arg(long)]
    pub filter: Option<String>,
    /// Neutral-score videos cycling through speeds 0-3, for pre-training a
    /// probe model.
    #[arg(long, conflicts_with_all = ["target_r", "filter"])]
    pub reference: bool,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// A config.json echoed by an earlier run.
    pub config: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated numbers")?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok((p(a)?, p(b)?))
}

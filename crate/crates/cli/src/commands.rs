use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tqd_core::analysis::{self, write_text, GradientProbeCurve, HistogramReport};
use tqd_core::dataset::{filter_quadrants, load_samples, parse_quadrant_filter, reference_manifest, synth_manifest};
use tqd_core::manifest::{parse_manifest, sidecar_path, write_manifest, write_sidecar};
use tqd_core::quality::{inject_score_noise, median_thresholds, ScoreScale};
use tqd_core::sampler::{density_curve, TimestepLaw};
use tqd_core::trainer::{self, decode_checkpoint, evaluate_loss, write_checkpoint, write_training_log};
use tqd_core::{Quadrant, QualityRecord, Result, SamplingMode, TqdError, TqdSampler, VelocityModel};

use crate::args::SynthArgs;
use crate::config::{CurateRun, InputFile, ProbeRun, RunConfig, SampleStatsRun, SweepRun, TrainRun, DENSITY_POINTS};

/// How a run ended when no error was raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// The run finished but its statistical checks did not pass.
    ChecksFailed,
}

/// Echoes `cfg` into `out/<run-id>/config.json`, then executes it there.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let json = cfg.to_json()?;
    let dir = out.join(cfg.run_id()?);
    fs::create_dir_all(&dir).map_err(|e| TqdError::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_text(dir.join("config.json"), &json)?;
    print!("{json}");
    println!("run directory: {}", dir.display());
    match cfg {
        RunConfig::Curate(c) => curate(c, &dir),
        RunConfig::SampleStats(c) => sample_stats(c, &dir),
        RunConfig::Train(c) => train(c, &dir),
        RunConfig::Probe(c) => probe(c, &dir),
        RunConfig::Sweep(c) => sweep(c, &dir),
    }
}

pub fn rerun(config: &Path, out: &Path) -> Result<Outcome> {
    let text = fs::read_to_string(config).map_err(|e| TqdError::Io {
        path: config.to_path_buf(),
        source: e,
    })?;
    execute(&RunConfig::from_json(&text)?, out)
}

fn pretty(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn read_records(file: &InputFile) -> Result<Vec<QualityRecord>> {
    parse_manifest(&file.read_verified()?[..])
}

fn curate(c: &CurateRun, dir: &Path) -> Result<Outcome> {
    let records = read_records(&c.manifest)?;
    let constants = tqd_core::NormalizationConstants::fit(&records)?;
    write_sidecar(sidecar_path(&c.manifest.path), &constants)?;
    write_sidecar(dir.join("normalization.json"), &constants)?;
    let report = analysis::quadrant_report(&records, Some(c.thresholds))?;
    let table = report.to_table();
    write_text(dir.join("quadrants.json"), &report.to_json()?)?;
    write_text(dir.join("quadrants.txt"), &table)?;
    print!("{table}");
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct Profile {
    quadrant: Quadrant,
    records: usize,
    mq_norm: f64,
    vq_norm: f64,
    law: TimestepLaw,
}

#[derive(Serialize)]
struct SampleStatsSummary<'a> {
    passes: bool,
    fraction_above_half: f64,
    histogram: &'a HistogramReport,
    profiles: Vec<Profile>,
}

/// One representative law per populated quadrant, at the quadrant's mean
/// normalized scores.
fn quadrant_profiles(sampler: &TqdSampler, raw_thresholds: (f64, f64)) -> Result<Vec<Profile>> {
    let mut out = Vec::new();
    for q in Quadrant::ALL {
        let members: Vec<&QualityRecord> = sampler
            .records()
            .iter()
            .filter(|r| Quadrant::classify(r.mq_raw, r.vq_raw, raw_thresholds.0, raw_thresholds.1) == q)
            .collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let (mut m, mut v) = (0.0, 0.0);
        for r in &members {
            let (a, b) = r.norm_scores()?;
            m += a / n;
            v += b / n;
        }
        let config = sampler.config();
        let law = match sampler.mode() {
            SamplingMode::Tqd => {
                let rep = QualityRecord::normalized("profile", m, v);
                tqd_core::sampler::make_law(&rep, config)?
            }
            SamplingMode::Baseline => TimestepLaw::degenerate(config.kappa_base),
        };
        out.push(Profile {
            quadrant: q,
            records: members.len(),
            mq_norm: m,
            vq_norm: v,
            law,
        });
    }
    Ok(out)
}

fn sample_stats(c: &SampleStatsRun, dir: &Path) -> Result<Outcome> {
    let records = c.normalization.apply_all(&read_records(&c.manifest)?)?;
    let sampler = TqdSampler::with_mode(records, c.sampler, c.mode)?;
    let report = analysis::timestep_histogram_for(&sampler, c.n_draws, c.bins)?;
    write_text(dir.join("histogram.csv"), &report.to_csv())?;

    // retention-weighted mixture of every record's law
    let weights = sampler.selection_weights();
    let mut mixture = density_curve(&sampler.laws()[0], DENSITY_POINTS)?;
    for p in &mut mixture {
        p.1 = 0.0;
    }
    for (law, w) in sampler.laws().iter().zip(&weights) {
        for (p, (_, d)) in mixture.iter_mut().zip(density_curve(law, DENSITY_POINTS)?) {
            p.1 += w * d;
        }
    }
    write_text(dir.join("density-mixture.csv"), &analysis::density_csv(&mixture))?;
    let profiles = quadrant_profiles(&sampler, c.thresholds)?;
    for p in &profiles {
        let curve = density_curve(&p.law, DENSITY_POINTS)?;
        write_text(dir.join(format!("density-{}.csv", p.quadrant.label())), &analysis::density_csv(&curve))?;
    }

    let passes = report.passes();
    let summary = SampleStatsSummary {
        passes,
        fraction_above_half: report.fraction_above(0.5),
        histogram: &report,
        profiles,
    };
    write_text(dir.join("histogram.json"), &pretty(&summary)?)?;
    println!(
        "{} draws: chi-square p = {:.4}, KS D = {:.5} (p = {:.4}), mass above t = 0.5: {:.4}",
        report.n_draws,
        report.chi_square.p_value,
        report.ks_statistic,
        report.ks_p_value,
        summary.fraction_above_half
    );
    if passes {
        Ok(Outcome::Ok)
    } else {
        eprintln!("sampled timesteps do not match the predicted mixture at the 1% level");
        Ok(Outcome::ChecksFailed)
    }
}

#[derive(Serialize)]
struct TrainSummary {
    records: usize,
    steps: usize,
    final_batch_loss: Option<f64>,
    eval_loss: f64,
    checkpoint_sha256: String,
}

fn train(c: &TrainRun, dir: &Path) -> Result<Outcome> {
    let raw = read_records(&c.manifest)?;
    let scored = inject_score_noise(&raw, c.noise_level, c.score_noise_seed)?;
    let mut records = c.normalization.apply_all(&scored)?;
    if let Some(f) = &c.filter {
        records = filter_quadrants(&records, &f.keep, f.thresholds);
        if records.is_empty() {
            return Err(TqdError::EmptyDataset);
        }
    }
    let samples = load_samples(&records, c.trainer.model.dims, c.manifest.dir())?;
    let state = trainer::train(&samples, &c.sampler, &c.trainer, c.mode)?;

    let ckpt = dir.join("model.ckpt");
    write_checkpoint(&ckpt, &state.model, state.step, c.trainer.seed)?;
    write_training_log(dir.join("train_log.csv"), &state.log)?;
    let videos: Vec<Vec<f64>> = samples.iter().map(|s| s.video.to_f64()).collect();
    let eval_loss = evaluate_loss(&state.model, &videos, &c.eval.t_grid, c.eval.noise_seed, c.eval.n_noise)?;
    let bytes = fs::read(&ckpt).map_err(|e| TqdError::Io {
        path: ckpt.clone(),
        source: e,
    })?;
    let summary = TrainSummary {
        records: samples.len(),
        steps: state.step,
        final_batch_loss: state.loss_history.last().copied(),
        eval_loss,
        checkpoint_sha256: analysis::sha256_hex(&bytes),
    };
    write_text(dir.join("summary.json"), &pretty(&summary)?)?;
    println!(
        "trained {} steps on {} records; evaluation loss {eval_loss:.6}",
        summary.steps, summary.records
    );
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct ProbeSummary<'a> {
    /// Shuffle closer at t = 0.1 than 0.9, visual degradations the reverse.
    crossing: bool,
    curves: &'a [GradientProbeCurve],
}

fn probe(c: &ProbeRun, dir: &Path) -> Result<Outcome> {
    let (model, _) = decode_checkpoint(&c.model.read_verified()?)?;
    let dims = model.shape.dims;
    let videos = match &c.manifest {
        Some(m) => load_samples(&read_records(m)?, dims, m.dir())?
            .into_iter()
            .map(|s| s.video)
            .collect(),
        None => {
            let p = &c.probe;
            analysis::probe_samples(p.n_samples, dims, p.motion_speed, p.texture_noise, p.sample_seed)
        }
    };
    let p = &c.probe;
    let curves = analysis::gradient_probe(&model, &videos, &p.degradations, &p.t_grid, p.n_noise, p.noise_seed)?;
    for (i, curve) in curves.iter().enumerate() {
        let name = format!("probe-{i:02}-{}.csv", curve.degradation.label());
        write_text(dir.join(name), &curve.to_csv())?;
    }
    let summary = ProbeSummary {
        crossing: analysis::crossing_holds(&curves, 0.1, 0.9),
        curves: &curves,
    };
    write_text(dir.join("probe.json"), &pretty(&summary)?)?;
    print_probe_table(&model, &curves);
    Ok(Outcome::Ok)
}

fn print_probe_table(model: &VelocityModel, curves: &[GradientProbeCurve]) {
    println!("mean gradient distance ({} parameters)", model.param_count());
    for c in curves {
        let row: Vec<String> = c.points.iter().map(|(t, d)| format!("{t}:{d:.4e}")).collect();
        println!("{:<16} {}", c.degradation.label(), row.join(" "));
    }
}

fn sweep(c: &SweepRun, dir: &Path) -> Result<Outcome> {
    let records = read_records(&c.manifest)?;
    let samples = load_samples(&records, c.trainer.model.dims, c.manifest.dir())?;
    let report = analysis::robustness_sweep(&samples, &c.noise_levels, &c.sampler, &c.trainer, c.score_noise_seed, &c.eval)?;
    let csv = report.to_csv();
    write_text(dir.join("robustness.csv"), &csv)?;
    write_text(dir.join("robustness.json"), &pretty(&report)?)?;
    print!("{csv}");
    println!("mean |shift in mu| non-decreasing: {}", report.monotone_mu_shift);
    Ok(Outcome::Ok)
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    let records = if a.reference {
        reference_manifest(a.n, 0.05, a.seed)
    } else {
        let all = synth_manifest(a.n, a.target_r, a.seed, ScoreScale::default())?;
        match &a.filter {
            Some(f) => filter_quadrants(&all, &parse_quadrant_filter(f)?, median_thresholds(&all)?),
            None => all,
        }
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| TqdError::Io {
            path: PathBuf::from(parent),
            source: e,
        })?;
    }
    write_manifest(&a.out, &records)?;
    println!("wrote {} records to {}", records.len(), a.out.display());
    Ok(Outcome::Ok)
}

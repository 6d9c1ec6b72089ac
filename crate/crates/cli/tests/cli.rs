use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tqd_core::trainer::read_checkpoint;
use tqd_core::{ModelShape, TrainerConfig, VelocityModel, VideoDims};

struct Run {
    cwd: PathBuf,
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn dir(&self) -> PathBuf {
        let line = self
            .stdout
            .lines()
            .find_map(|l| l.strip_prefix("run directory: "))
            .unwrap_or_else(|| panic!("no run directory in output:\n{}\n{}", self.stdout, self.stderr));
        self.cwd.join(line)
    }
}

fn tqd_in(cwd: &Path, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tqd"));
    cmd.args(args).current_dir(cwd).env_remove("TQD_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    Run {
        cwd: cwd.to_path_buf(),
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn tqd(cwd: &Path, args: &[&str]) -> Run {
    tqd_in(cwd, args, &[])
}

fn ok(r: Run) -> Run {
    assert_eq!(r.code, 0, "stdout:\n{}\nstderr:\n{}", r.stdout, r.stderr);
    r
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

const SMALL: ModelShape = ModelShape {
    dims: VideoDims {
        frames: 2,
        height: 4,
        width: 4,
    },
    hidden_width: 16,
    embed_freqs: 2,
};

/// A settings file that trains the small model.
fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    let trainer = TrainerConfig {
        model: SMALL,
        ..TrainerConfig::default()
    };
    fs::write(&p, serde_json::json!({ "batch_size": 4, "trainer": trainer }).to_string()).unwrap();
    p
}

fn write_lines(path: &Path, lines: &[&str]) {
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn curate_reports_one_record_per_quadrant() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("four.jsonl");
    write_lines(
        &m,
        &[
            r#"{"id":"hmhv","mq":4,"vq":4}"#,
            r#"{"id":"hmlv","mq":4,"vq":2}"#,
            r#"{"id":"lmhv","mq":2,"vq":4}"#,
            r#"{"id":"lmlv","mq":2,"vq":2}"#,
        ],
    );
    let r = ok(tqd(tmp.path(), &["curate", "--manifest", "four.jsonl", "--thresholds", "3,3"]));
    let report = json(r.dir().join("quadrants.json"));
    assert_eq!(report["n"], 4);
    assert_eq!(report["partition"]["counts"], serde_json::json!([1, 1, 1, 1]));
    let sidecar = json(tmp.path().join("four.norm.json"));
    assert_eq!(sidecar["mq_min"], 2.0);
    assert_eq!(sidecar["vq_max"], 4.0);
    assert!(r.dir().join("quadrants.txt").exists());
}

#[test]
fn missing_manifest_is_an_io_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let r = tqd(tmp.path(), &["curate", "--manifest", "absent.jsonl"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("absent.jsonl"), "{}", r.stderr);
}

#[test]
fn nan_score_is_a_data_error_naming_the_record() {
    let tmp = tempfile::tempdir().unwrap();
    write_lines(
        &tmp.path().join("m.jsonl"),
        &[r#"{"id":"fine","mq":3,"vq":3}"#, r#"{"id":"clip-042","mq":NaN,"vq":3}"#],
    );
    let r = tqd(tmp.path(), &["curate", "--manifest", "m.jsonl"]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("clip-042"), "{}", r.stderr);
}

#[test]
fn malformed_line_is_a_data_error_with_its_number() {
    let tmp = tempfile::tempdir().unwrap();
    write_lines(
        &tmp.path().join("m.jsonl"),
        &[r#"{"id":"a","mq":3,"vq":3}"#, r#"{"id":"b","mq":3"#],
    );
    let r = tqd(tmp.path(), &["curate", "--manifest", "m.jsonl"]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("line 2"), "{}", r.stderr);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    write_lines(&tmp.path().join("m.jsonl"), &[r#"{"id":"a","mq":3,"vq":3}"#]);
    let r = tqd(tmp.path(), &["sample-stats", "--manifest", "m.jsonl", "--n-draws", "0"]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert_eq!(tqd(tmp.path(), &["train"]).code, 1);
    assert_eq!(tqd(tmp.path(), &["frobnicate"]).code, 1);
    assert_eq!(tqd(tmp.path(), &["--help"]).code, 0);
    let r = tqd_in(tmp.path(), &["curate", "--manifest", "m.jsonl"], &[("TQD_THREADS", "many")]);
    assert_eq!(r.code, 1);
}

#[test]
fn equal_scores_sample_uniformly() {
    let tmp = tempfile::tempdir().unwrap();
    let lines: Vec<String> = (0..20).map(|i| format!(r#"{{"id":"r{i}","mq":3.5,"vq":3.5}}"#)).collect();
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    write_lines(&tmp.path().join("m.jsonl"), &refs);
    fs::write(tmp.path().join("c.json"), r#"{"kappa_base": 2}"#).unwrap();
    let r = ok(tqd(
        tmp.path(),
        &["sample-stats", "--manifest", "m.jsonl", "--config", "c.json", "--n-draws", "200000", "--seed", "11"],
    ));
    let h = json(r.dir().join("histogram.json"));
    assert_eq!(h["passes"], true);
    // the predicted mixture is Uniform(0, 1)
    for bin in h["histogram"]["bins"].as_array().unwrap() {
        let width = bin["hi"].as_f64().unwrap() - bin["lo"].as_f64().unwrap();
        assert!((bin["expected"].as_f64().unwrap() - 200_000.0 * width).abs() < 1e-6);
    }
}

#[test]
fn motion_strong_manifest_samples_mostly_noisy_timesteps() {
    let tmp = tempfile::tempdir().unwrap();
    write_lines(
        &tmp.path().join("m.jsonl"),
        &[r#"{"id":"a","mq":5,"vq":1}"#, r#"{"id":"b","mq":4.8,"vq":1.2}"#],
    );
    fs::write(
        tmp.path().join("norm.json"),
        r#"{"mq_min":1,"mq_max":5,"vq_min":1,"vq_max":5}"#,
    )
    .unwrap();
    let r = ok(tqd(
        tmp.path(),
        &["sample-stats", "--manifest", "m.jsonl", "--norm", "norm.json", "--n-draws", "100000"],
    ));
    let csv = fs::read_to_string(r.dir().join("histogram.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t_bin_lo,t_bin_hi,count,expected"));
    let (mut above, mut total) = (0u64, 0u64);
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let c: u64 = f[2].parse().unwrap();
        total += c;
        if f[0].parse::<f64>().unwrap() >= 0.5 {
            above += c;
        }
    }
    assert_eq!(total, 100_000);
    assert!(above as f64 / total as f64 > 0.5, "{above}/{total}");
    let density = fs::read_to_string(r.dir().join("density-mixture.csv")).unwrap();
    assert!(density.starts_with("t,pdf\n"));
}

#[test]
fn training_is_deterministic_and_thread_count_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    ok(tqd(tmp.path(), &["synth", "--out", "m.jsonl", "--n", "10", "--seed", "2"]));
    let args = |out: &'static str| {
        vec![
            "train".to_string(),
            "--manifest".into(),
            "m.jsonl".into(),
            "--config".into(),
            cfg.to_string_lossy().into_owned(),
            "--steps".into(),
            "200".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            out.into(),
        ]
    };
    let a: Vec<String> = args("a");
    let b: Vec<String> = args("b");
    let ra = ok(tqd_in(tmp.path(), &a.iter().map(String::as_str).collect::<Vec<_>>(), &[("TQD_THREADS", "1")]));
    let rb = ok(tqd_in(tmp.path(), &b.iter().map(String::as_str).collect::<Vec<_>>(), &[("TQD_THREADS", "3")]));
    assert_eq!(ra.dir().file_name(), rb.dir().file_name());
    let log = fs::read_to_string(ra.dir().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 201);
    assert_eq!(dir_contents(&ra.dir()), dir_contents(&rb.dir()));
}

#[test]
fn zero_steps_writes_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    ok(tqd(tmp.path(), &["synth", "--out", "m.jsonl", "--n", "10"]));
    let r = ok(tqd(
        tmp.path(),
        &["train", "--manifest", "m.jsonl", "--config", cfg.to_str().unwrap(), "--steps", "0", "--seed", "9"],
    ));
    let (model, header) = read_checkpoint(r.dir().join("model.ckpt")).unwrap();
    assert_eq!(header.step, 0);
    let init = VelocityModel::init(SMALL, 9, TrainerConfig::default().init_output_scale);
    assert_eq!(model, init);
}

#[test]
fn baseline_and_quality_aware_runs_on_a_filtered_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    ok(tqd(tmp.path(), &["synth", "--out", "m.jsonl", "--n", "60", "--seed", "4"]));
    let mut modes = Vec::new();
    for extra in [None, Some("--baseline")] {
        let mut args = vec![
            "train",
            "--manifest",
            "m.jsonl",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "20",
            "--filter",
            "quadrant=HMLV,LMHV",
        ];
        args.extend(extra);
        let r = ok(tqd(tmp.path(), &args));
        let run = r.dir();
        let c = json(run.join("config.json"));
        assert_eq!(c["filter"]["keep"], serde_json::json!(["HMLV", "LMHV"]));
        let summary = json(run.join("summary.json"));
        let n = summary["records"].as_u64().unwrap();
        assert!(n > 0 && n < 60, "{n}");
        modes.push(c["mode"].clone());
    }
    assert_eq!(modes, vec![Value::from("tqd"), Value::from("baseline")]);
}

fn small_checkpoint(tmp: &Path) -> PathBuf {
    let cfg = small_config(tmp);
    ok(tqd(tmp, &["synth", "--out", "m.jsonl", "--n", "8"]));
    let r = ok(tqd(
        tmp,
        &["train", "--manifest", "m.jsonl", "--config", cfg.to_str().unwrap(), "--steps", "30"],
    ));
    r.dir().join("model.ckpt")
}

#[test]
fn zero_strength_degradations_give_zero_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(tmp.path());
    let degradations: Vec<Value> = ["blur", "compression", "noise", "shuffle"]
        .iter()
        .map(|k| serde_json::json!({"kind": k, "strength": 0.0, "seed": 1}))
        .collect();
    let probe = serde_json::json!({"probe": {"degradations": degradations, "n_samples": 5, "n_noise": 2}});
    fs::write(tmp.path().join("p.json"), probe.to_string()).unwrap();
    let r = ok(tqd(
        tmp.path(),
        &["probe", "--model", ckpt.to_str().unwrap(), "--config", "p.json"],
    ));
    let out = json(r.dir().join("probe.json"));
    let curves = out["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 4);
    for c in curves {
        for p in c["points"].as_array().unwrap() {
            assert_eq!(p[1].as_f64().unwrap(), 0.0, "{c}");
        }
    }
}

#[test]
fn default_probe_writes_one_row_per_grid_timestep() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(tmp.path());
    let r = ok(tqd(tmp.path(), &["probe", "--model", ckpt.to_str().unwrap()]));
    let csvs: Vec<PathBuf> = fs::read_dir(r.dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("probe-"))
        .collect();
    assert_eq!(csvs.len(), 4);
    for p in csvs {
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,mean_l2_distance"));
        assert_eq!(lines.count(), 9, "{}", p.display());
    }
}

#[test]
fn corrupt_checkpoint_is_an_artifact_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(tmp.path());
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[9] = b'#';
    fs::write(tmp.path().join("bad.ckpt"), &bytes).unwrap();
    let r = tqd(tmp.path(), &["probe", "--model", "bad.ckpt"]);
    assert_eq!(r.code, 5, "{}", r.stderr);
    fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(tqd(tmp.path(), &["probe", "--model", "junk.ckpt"]).code, 5);
}

#[test]
fn probe_manifest_with_other_dims_is_an_artifact_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(tmp.path());
    // a file payload at the default size cannot feed the small model
    tqd_core::video::generate_moving_shape(1.0, 0.0, 3).write(tmp.path().join("v.bin")).unwrap();
    write_lines(&tmp.path().join("files.jsonl"), &[r#"{"id":"v","mq":3,"vq":3,"payload":"v.bin"}"#]);
    let r = tqd(
        tmp.path(),
        &["probe", "--model", ckpt.to_str().unwrap(), "--manifest", "files.jsonl"],
    );
    assert_eq!(r.code, 5, "{}", r.stderr);
}

#[test]
fn rerun_reproduces_every_output_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    ok(tqd(tmp.path(), &["synth", "--out", "m.jsonl", "--n", "12", "--seed", "8"]));
    let first = ok(tqd(
        tmp.path(),
        &["train", "--manifest", "m.jsonl", "--config", cfg.to_str().unwrap(), "--steps", "25", "--noise-level", "0.1"],
    ));
    let dir = first.dir();
    let replay = ok(tqd(
        tmp.path(),
        &["rerun", dir.join("config.json").to_str().unwrap(), "--out", "replay"],
    ));
    let again = replay.dir();
    assert_ne!(dir, again);
    assert_eq!(dir_contents(&dir), dir_contents(&again));
}

#[test]
fn rerun_refuses_edited_inputs_and_settings_refuse_run_configs() {
    let tmp = tempfile::tempdir().unwrap();
    write_lines(&tmp.path().join("m.jsonl"), &[r#"{"id":"a","mq":3,"vq":2}"#, r#"{"id":"b","mq":2,"vq":3}"#]);
    let r = ok(tqd(tmp.path(), &["curate", "--manifest", "m.jsonl"]));
    let config = r.dir().join("config.json");
    let r = tqd(
        tmp.path(),
        &["sample-stats", "--manifest", "m.jsonl", "--config", config.to_str().unwrap()],
    );
    assert_eq!(r.code, 1, "{}", r.stderr);
    write_lines(&tmp.path().join("m.jsonl"), &[r#"{"id":"a","mq":3,"vq":2}"#]);
    let r = tqd(tmp.path(), &["rerun", config.to_str().unwrap()]);
    assert_eq!(r.code, 5, "{}", r.stderr);
}

#[test]
fn synth_filter_keeps_only_requested_quadrants() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tqd(tmp.path(), &["synth", "--out", "all.jsonl", "--n", "200", "--seed", "1"]));
    ok(tqd(
        tmp.path(),
        &["synth", "--out", "b.jsonl", "--n", "200", "--seed", "1", "--filter", "quadrant=HMLV,LMHV"],
    ));
    let all = tqd_core::manifest::read_manifest(tmp.path().join("all.jsonl")).unwrap();
    let b = tqd_core::manifest::read_manifest(tmp.path().join("b.jsonl")).unwrap();
    let (mt, vt) = tqd_core::quality::median_thresholds(&all).unwrap();
    assert!(!b.is_empty() && b.len() < all.len());
    for r in &b {
        assert!((r.mq_raw > mt) != (r.vq_raw > vt), "{}", r.id);
    }
    let r = ok(tqd(tmp.path(), &["synth", "--out", "ref.jsonl", "--n", "8", "--reference"]));
    assert!(r.stdout.contains("8 records"));
}

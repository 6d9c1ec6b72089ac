//! JSON-lines score manifests and the normalization sidecar.
//!
//! One object per line: `{"id": "...", "mq": 2.4, "vq": 3.1, "payload": "..."}`
//! with `payload` optional. Floats are written in shortest round-trip form, so
//! reading and re-writing a manifest reproduces it byte for byte.
//!
//! Non-finite scores are accepted on input (bare `NaN`/`Infinity` tokens,
//! their string forms, or `null`) so that they can be reported against the
//! record id rather than as a parse failure.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, TqdError};
use crate::quality::{NormalizationConstants, QualityRecord};

#[derive(Debug, Serialize)]
struct ManifestLineOut<'a> {
    id: &'a str,
    mq: f64,
    vq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<&'a str>,
}

#[derive(Debug, Deserialize)]
struct ManifestLineIn {
    id: String,
    mq: Value,
    vq: Value,
    #[serde(default)]
    payload: Option<String>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<QualityRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| TqdError::io(path, e))?;
    parse_manifest(BufReader::new(file)).map_err(|e| match e {
        TqdError::Io { source, .. } => TqdError::io(path, source),
        other => other,
    })
}

pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<QualityRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TqdError::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLineIn = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(first) => serde_json::from_str(&quote_bare_non_finite(&line)).map_err(|_| {
                TqdError::Manifest {
                    line: line_no,
                    message: first.to_string(),
                }
            })?,
        };
        let mq = score_value(&parsed.mq, line_no, "mq")?;
        let vq = score_value(&parsed.vq, line_no, "vq")?;
        let mut record = QualityRecord::new(parsed.id, mq, vq);
        record.payload_ref = parsed.payload;
        records.push(record);
    }
    Ok(records)
}

fn score_value(v: &Value, line: usize, key: &str) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| TqdError::Manifest {
            line,
            message: format!("`{key}` is not representable as f64"),
        }),
        Value::Null => Ok(f64::NAN),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "nan" => Ok(f64::NAN),
            "inf" | "infinity" | "+inf" | "+infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            _ => Err(TqdError::Manifest {
                line,
                message: format!("`{key}` must be a number, got string {s:?}"),
            }),
        },
        other => Err(TqdError::Manifest {
            line,
            message: format!("`{key}` must be a number, got {other}"),
        }),
    }
}

/// Wraps bare `NaN`, `Infinity` and `-Infinity` tokens (as emitted by some
/// JSON writers) in quotes, leaving string contents alone.
fn quote_bare_non_finite(line: &str) -> String {
    const TOKENS: [&str; 3] = ["-Infinity", "Infinity", "NaN"];
    let mut out = String::with_capacity(line.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            rest = &rest[1..];
            continue;
        }
        if let Some(tok) = TOKENS.iter().find(|t| rest.starts_with(**t)) {
            out.push('"');
            out.push_str(tok);
            out.push('"');
            rest = &rest[tok.len()..];
            continue;
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[QualityRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_manifest_to(&mut buf, records)?;
    fs::write(path, buf).map_err(|e| TqdError::io(path, e))
}

pub fn write_manifest_to(mut w: impl Write, records: &[QualityRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(&ManifestLineOut {
            id: &r.id,
            mq: r.mq_raw,
            vq: r.vq_raw,
            payload: r.payload_ref.as_deref(),
        })?;
        writeln!(w, "{line}").map_err(|e| TqdError::io("<manifest>", e))?;
    }
    Ok(())
}

/// `scores.jsonl` -> `scores.norm.json`, in the same directory.
pub fn sidecar_path(manifest: impl AsRef<Path>) -> PathBuf {
    let manifest = manifest.as_ref();
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".to_string());
    manifest.with_file_name(format!("{stem}.norm.json"))
}

pub fn write_sidecar(path: impl AsRef<Path>, constants: &NormalizationConstants) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(constants)?;
    fs::write(path, json + "\n").map_err(|e| TqdError::io(path, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<NormalizationConstants> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| TqdError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_optional_payload_and_blank_lines() {
        let text = "{\"id\":\"a\",\"mq\":2.5,\"vq\":3}\n\n{\"id\":\"b\",\"mq\":1,\"vq\":0.5,\"payload\":\"synth:speed=1,noise=0,seed=3\"}\n";
        let rs = parse_manifest(text.as_bytes()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0].payload_ref, None);
        assert_eq!(rs[1].payload_ref.as_deref(), Some("synth:speed=1,noise=0,seed=3"));
        assert_eq!(rs[0].vq_raw, 3.0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"mq\":2.5,\"vq\":3}\n{\"id\":\"b\",\"mq\":\n";
        match parse_manifest(text.as_bytes()) {
            Err(TqdError::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_tokens_become_nan() {
        let text = "{\"id\":\"x\",\"mq\":NaN,\"vq\":1}\n{\"id\":\"NaN-y\",\"mq\":\"nan\",\"vq\":-Infinity}\n{\"id\":\"z\",\"mq\":null,\"vq\":1}\n";
        let rs = parse_manifest(text.as_bytes()).unwrap();
        assert!(rs[0].mq_raw.is_nan());
        assert_eq!(rs[1].id, "NaN-y");
        assert!(rs[1].mq_raw.is_nan());
        assert_eq!(rs[1].vq_raw, f64::NEG_INFINITY);
        assert!(rs[2].mq_raw.is_nan());
    }

    #[test]
    fn sidecar_naming() {
        assert_eq!(sidecar_path("/tmp/a/scores.jsonl"), PathBuf::from("/tmp/a/scores.norm.json"));
    }

    proptest! {
        #[test]
        fn manifest_round_trip_is_bit_exact(
            rows in prop::collection::vec(
                (any::<f64>().prop_filter("finite", |x| x.is_finite()),
                 any::<f64>().prop_filter("finite", |x| x.is_finite()),
                 prop::option::of("[a-z0-9:=,._/-]{0,20}")),
                0..20)
        ) {
            let records: Vec<QualityRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, (m, v, p))| {
                    let mut r = QualityRecord::new(format!("id-{i}"), *m, *v);
                    r.payload_ref = p.clone();
                    r
                })
                .collect();
            let mut first = Vec::new();
            write_manifest_to(&mut first, &records).unwrap();
            let back = parse_manifest(first.as_slice()).unwrap();
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in records.iter().zip(&back) {
                prop_assert_eq!(a.mq_raw.to_bits(), b.mq_raw.to_bits());
                prop_assert_eq!(a.vq_raw.to_bits(), b.vq_raw.to_bits());
                prop_assert_eq!(&a.payload_ref, &b.payload_ref);
            }
            let mut second = Vec::new();
            write_manifest_to(&mut second, &back).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}

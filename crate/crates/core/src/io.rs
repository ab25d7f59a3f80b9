//! CSV and JSON artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces the exact bits.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ExperimentConfig, Record, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::SignPattern;
use crate::quantize::{self, QuantizationMode, QuantizedWeight};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const TRAJECTORY_JSON: &str = "trajectory.json";
pub const SIGN_MATRIX_CSV: &str = "sign_matrix.csv";

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "eta".to_string()];
    h.extend((1..=n).map(|j| format!("y_{j}")));
    h.extend((1..=n).map(|j| format!("w_{j}")));
    h.push("delta".into());
    h
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj.n))?;
    for r in &traj.records {
        let mut row = Vec::with_capacity(2 * traj.n + 3);
        row.push(r.t.to_string());
        row.push(r.eta.to_string());
        row.extend(r.y.iter().map(f64::to_string));
        row.extend(r.w.to_vec().iter().map(f64::to_string));
        row.push(r.w.delta().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, line: usize, col: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("line {line}, column {col}: {s:?} is not a number")))
}

/// Reads a trajectory CSV. The mode is not stored in the file and must be
/// supplied; the config, if known, is attached as-is.
pub fn read_trajectory_csv<R: Read>(
    input: R,
    mode: QuantizationMode,
    config: Option<ExperimentConfig>,
) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 5 || !(header.len() - 3).is_multiple_of(2) {
        return Err(Error::Format(format!("unexpected trajectory header with {} columns", header.len())));
    }
    let n = (header.len() - 3) / 2;
    if header != trajectory_header(n) {
        return Err(Error::Format(format!("unexpected trajectory header: {}", header.join(","))));
    }
    if let Some(c) = &config {
        Error::check_dim(c.n, n)?;
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let t: usize = row[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {line}, column t: {:?} is not an index", &row[0])))?;
        let eta = parse_f64(&row[1], line, "eta")?;
        let y = (0..n)
            .map(|j| parse_f64(&row[2 + j], line, &header[2 + j]))
            .collect::<Result<Vec<_>>>()?;
        let wv = (0..n)
            .map(|j| parse_f64(&row[2 + n + j], line, &header[2 + n + j]))
            .collect::<Result<Vec<_>>>()?;
        let delta = parse_f64(&row[2 * n + 2], line, "delta")?;
        let signs = SignPattern::new(wv.iter().map(|&x| quantize::sign_of(x)).collect());
        let w = QuantizedWeight::new(delta, signs, mode)
            .map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        records.push(Record { t, eta, y, w });
    }
    if records.is_empty() {
        return Err(Error::Format("trajectory has no records".into()));
    }
    Ok(Trajectory {
        mode,
        n,
        records,
        config,
    })
}

/// `n` lines of `T` comma-separated signs, no header.
pub fn write_sign_matrix_csv<W: Write>(matrix: &[Vec<i8>], mut out: W) -> Result<()> {
    for row in matrix {
        let line: Vec<String> = row.iter().map(i8::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_sign_matrix_csv<R: Read>(mut input: R) -> Result<Vec<Vec<i8>>> {
    let mut s = String::new();
    input.read_to_string(&mut s)?;
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|x| match x.trim() {
                    "-1" => Ok(-1),
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::Format(format!("line {}: {other:?} is not a sign", i + 1))),
                })
                .collect()
        })
        .collect()
}

/// Deserializes JSON, reporting the path of the offending field on failure.
pub fn from_json_str<T: DeserializeOwned>(s: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(s);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Format(format!("at '{path}': {}", e.inner()))
    })
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// A config file holds one experiment or an array of them.
pub fn parse_configs(s: &str) -> Result<Vec<ExperimentConfig>> {
    if s.trim_start().starts_with('[') {
        from_json_str(s)
    } else {
        Ok(vec![from_json_str(s)?])
    }
}

pub fn load_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    parse_configs(&fs::read_to_string(path)?)
}

/// Written next to every run's artifacts. `config` is fully resolved, so
/// running it again reproduces the artifacts byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    from_json_str(&fs::read_to_string(path)?)
}

/// Accepts a manifest or a bare config.
pub fn load_config_or_manifest(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let s = fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&s)?;
    if v.get("config").is_some() && v.get("files").is_some() {
        Ok(vec![from_json_str::<Manifest>(&s)?.config])
    } else {
        parse_configs(&s)
    }
}

/// Writes the manifest, the trajectory CSV, the sign matrix and (if asked)
/// the trajectory JSON into `dir`. Returns the file names written.
pub fn write_run_artifacts(dir: &Path, traj: &Trajectory) -> Result<Vec<String>> {
    let config = traj
        .config
        .as_ref()
        .ok_or_else(|| Error::invalid("trajectory.config", "artifacts need the resolved config"))?;
    fs::create_dir_all(dir)?;
    let mut files = vec![TRAJECTORY_CSV.to_string(), SIGN_MATRIX_CSV.to_string()];

    let mut buf = Vec::new();
    write_trajectory_csv(traj, &mut buf)?;
    fs::write(dir.join(TRAJECTORY_CSV), buf)?;

    let matrix = crate::analysis::sign_matrix(traj, config.outputs.sign_matrix_tail);
    let mut buf = Vec::new();
    write_sign_matrix_csv(&matrix, &mut buf)?;
    fs::write(dir.join(SIGN_MATRIX_CSV), buf)?;

    if config.outputs.trajectory_json {
        fs::write(dir.join(TRAJECTORY_JSON), to_json_string(traj)?)?;
        files.push(TRAJECTORY_JSON.into());
    }

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        files: files.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), to_json_string(&manifest)?)?;
    files.insert(0, MANIFEST_FILE.into());
    Ok(files)
}

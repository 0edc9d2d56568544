//! Plan and measurement files.
//!
//! CSV files are comma separated with a header row, `.` decimals and LF line
//! endings. Plans carry `q_1..q_n` in degrees; measurement files carry
//! `q_1..q_n,x,y` with angles in degrees and positions in mm. JSON variants
//! are selected by a `.json` extension. Numbers are written with 17
//! significant digits so that files round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identification::{CalibrationPlan, MeasurementSet};
use crate::kinematics::{JointConfiguration, PlanarPosition};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl IoError {
    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed command never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanJson {
    links: usize,
    configs_deg: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRowJson {
    q_deg: Vec<f64>,
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementsJson {
    rows: Vec<MeasurementRowJson>,
}

/// Plan configurations paired with their measured positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFile {
    pub plan: CalibrationPlan,
    pub measurements: MeasurementSet,
}

/// Nudges every angle to the nearest value that survives a degree
/// write/read cycle unchanged. Plans built in radians generally do not.
pub fn canonical_plan(plan: &CalibrationPlan) -> CalibrationPlan {
    let configs = plan
        .configs()
        .iter()
        .map(|c| JointConfiguration {
            q: c.q.iter().map(|&r| canonical_angle(r)).collect(),
        })
        .collect();
    CalibrationPlan::new(configs).expect("same shape as the input plan")
}

fn canonical_angle(mut r: f64) -> f64 {
    // reaches a fixed point within two steps in practice
    for _ in 0..8 {
        let next = r.to_degrees().to_radians();
        if next == r {
            break;
        }
        r = next;
    }
    r
}

fn joint_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("q_{i}")).collect()
}

pub fn plan_to_string(plan: &CalibrationPlan, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = joint_header(plan.links()).join(",");
            out.push('\n');
            for row in plan.to_degrees() {
                out.push_str(
                    &row.iter()
                        .map(|v| fmt_num(*v))
                        .collect::<Vec<_>>()
                        .join(","),
                );
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let doc = PlanJson {
                links: plan.links(),
                configs_deg: plan.to_degrees(),
            };
            serde_json::to_string_pretty(&doc).expect("plan serializes") + "\n"
        }
    }
}

pub fn write_plan(path: &Path, plan: &CalibrationPlan, format: Format) -> Result<(), IoError> {
    write_atomic(path, plan_to_string(plan, format).as_bytes())
}

/// Data rows tagged with their 1-based line number.
type NumberedRows = Vec<(usize, Vec<f64>)>;

fn parse_records(path: &Path, text: &str) -> Result<(Vec<String>, NumberedRows), IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IoError::format(path, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        // header is line 1
        let line = idx + 2;
        let rec = rec.map_err(|e| IoError::format(path, format!("line {line}: {e}")))?;
        let values = rec
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    IoError::format(
                        path,
                        format!(
                            "line {line}, column {}: cannot parse '{field}' as a number",
                            header.get(col).map(String::as_str).unwrap_or("?")
                        ),
                    )
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((line, values));
    }
    Ok((header, rows))
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

fn check_joint_header(path: &Path, header: &[String], n: usize) -> Result<(), IoError> {
    let expected = joint_header(n);
    if header[..n] != expected[..] {
        return Err(IoError::format(
            path,
            format!(
                "header must start with {}, found {}",
                expected.join(","),
                header.join(",")
            ),
        ));
    }
    Ok(())
}

pub fn parse_plan(path: &Path, text: &str, format: Format) -> Result<CalibrationPlan, IoError> {
    let rows = match format {
        Format::Json => {
            let doc: PlanJson =
                serde_json::from_str(text).map_err(|e| IoError::format(path, e.to_string()))?;
            if let Some((i, r)) = doc
                .configs_deg
                .iter()
                .enumerate()
                .find(|(_, r)| r.len() != doc.links)
            {
                return Err(IoError::format(
                    path,
                    format!(
                        "configuration {} has {} angles, expected {}",
                        i + 1,
                        r.len(),
                        doc.links
                    ),
                ));
            }
            doc.configs_deg
        }
        Format::Csv => {
            let (header, rows) = parse_records(path, text)?;
            let n = header.len();
            if n == 0 {
                return Err(IoError::format(path, "empty header"));
            }
            check_joint_header(path, &header, n)?;
            rows.into_iter().map(|(_, r)| r).collect()
        }
    };
    if rows.is_empty() {
        return Err(IoError::format(path, "plan has no configurations"));
    }
    CalibrationPlan::from_degrees(&rows).map_err(|e| IoError::format(path, e.to_string()))
}

pub fn read_plan(path: &Path) -> Result<CalibrationPlan, IoError> {
    parse_plan(path, &read_text(path)?, Format::from_path(path))
}

pub fn measurements_to_string(
    plan: &CalibrationPlan,
    meas: &MeasurementSet,
    format: Format,
) -> String {
    let rows = plan.to_degrees();
    match format {
        Format::Csv => {
            let mut header = joint_header(plan.links());
            header.push("x".into());
            header.push("y".into());
            let mut out = header.join(",");
            out.push('\n');
            for (q, p) in rows.iter().zip(&meas.positions) {
                let fields: Vec<String> =
                    q.iter().chain([&p.x, &p.y]).map(|v| fmt_num(*v)).collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let doc = MeasurementsJson {
                rows: rows
                    .into_iter()
                    .zip(&meas.positions)
                    .map(|(q_deg, p)| MeasurementRowJson {
                        q_deg,
                        x: p.x,
                        y: p.y,
                    })
                    .collect(),
            };
            serde_json::to_string_pretty(&doc).expect("measurements serialize") + "\n"
        }
    }
}

pub fn write_measurements(
    path: &Path,
    plan: &CalibrationPlan,
    meas: &MeasurementSet,
    format: Format,
) -> Result<(), IoError> {
    write_atomic(path, measurements_to_string(plan, meas, format).as_bytes())
}

pub fn parse_measurements(
    path: &Path,
    text: &str,
    format: Format,
) -> Result<MeasurementFile, IoError> {
    let mut configs = Vec::new();
    let mut positions = Vec::new();
    match format {
        Format::Json => {
            let doc: MeasurementsJson =
                serde_json::from_str(text).map_err(|e| IoError::format(path, e.to_string()))?;
            for r in doc.rows {
                configs.push(r.q_deg);
                positions.push(PlanarPosition::new(r.x, r.y));
            }
        }
        Format::Csv => {
            let (header, rows) = parse_records(path, text)?;
            if header.len() < 3
                || header[header.len() - 2] != "x"
                || header[header.len() - 1] != "y"
            {
                return Err(IoError::format(path, "header must be q_1..q_n,x,y"));
            }
            let n = header.len() - 2;
            check_joint_header(path, &header, n)?;
            for (line, r) in rows {
                if r.len() != n + 2 {
                    return Err(IoError::format(
                        path,
                        format!("line {line}: expected {} fields", n + 2),
                    ));
                }
                configs.push(r[..n].to_vec());
                positions.push(PlanarPosition::new(r[n], r[n + 1]));
            }
        }
    }
    if configs.is_empty() {
        return Err(IoError::format(path, "no measurement rows"));
    }
    let plan = CalibrationPlan::new(
        configs
            .iter()
            .map(|q| JointConfiguration::from_degrees(q))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IoError::format(path, e.to_string()))?,
    )
    .map_err(|e| IoError::format(path, e.to_string()))?;
    Ok(MeasurementFile {
        plan,
        measurements: MeasurementSet::new(positions),
    })
}

pub fn read_measurements(path: &Path) -> Result<MeasurementFile, IoError> {
    parse_measurements(path, &read_text(path)?, Format::from_path(path))
}

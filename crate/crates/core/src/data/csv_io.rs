//! One CSV per recording: columns are channels in grid order, rows are samples.

use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::container::write_atomic;
use super::{Dataset, Geometry};
use crate::error::{Error, Result};
use crate::signal::EmgRecording;

/// How file names map to labels and how channels map to the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvMapping {
    /// Regex over the file name with named groups `subject`, `gesture` and
    /// `repetition`. Files that do not match are skipped.
    pub filename_pattern: String,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub sample_rate_hz: f64,
    /// Subtract one from every parsed id.
    #[serde(default)]
    pub one_based_ids: bool,
    /// First line of every file is a header.
    #[serde(default)]
    pub has_header: bool,
    #[serde(default)]
    pub exclude_subjects: Vec<u32>,
}

impl CsvMapping {
    /// Mapping matching the file names written by [`export_csv`].
    pub fn for_export(geometry: Geometry) -> Self {
        Self {
            filename_pattern: EXPORT_PATTERN.into(),
            grid_rows: geometry.grid_rows,
            grid_cols: geometry.grid_cols,
            sample_rate_hz: geometry.sample_rate_hz,
            one_based_ids: false,
            has_header: false,
            exclude_subjects: Vec::new(),
        }
    }

    fn regex(&self) -> Result<Regex> {
        let re = Regex::new(&self.filename_pattern)
            .map_err(|e| Error::Config(format!("filename_pattern: {e}")))?;
        for group in ["subject", "gesture", "repetition"] {
            if !re.capture_names().flatten().any(|n| n == group) {
                return Err(Error::Config(format!(
                    "filename_pattern lacks a named group `{group}`"
                )));
            }
        }
        Ok(re)
    }
}

const EXPORT_PATTERN: &str = r"^s(?P<subject>\d+)_g(?P<gesture>\d+)_r(?P<repetition>\d+)\.csv$";

fn parse_id(caps: &regex::Captures<'_>, group: &str, one_based: bool, file: &Path) -> Result<u32> {
    let raw = &caps[group];
    let id: u32 = raw
        .parse()
        .map_err(|_| Error::Config(format!("{}: {group} id {raw:?} is not an integer", file.display())))?;
    if one_based {
        id.checked_sub(1)
            .ok_or_else(|| Error::Config(format!("{}: one-based {group} id is 0", file.display())))
    } else {
        Ok(id)
    }
}

fn read_recording(path: &Path, mapping: &CsvMapping, ids: (u32, u32, u32)) -> Result<EmgRecording> {
    let channels = mapping.grid_rows * mapping.grid_cols;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(mapping.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            column: None,
            reason: e.to_string(),
        })?;
    let mut samples = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.position().map_or(0, |p| p.line() as usize),
            column: None,
            reason: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        match width {
            None => {
                if record.len() != channels {
                    return Err(Error::Shape(format!(
                        "{}: {} columns, grid {}x{} needs {channels}",
                        path.display(),
                        record.len(),
                        mapping.grid_rows,
                        mapping.grid_cols
                    )));
                }
                width = Some(record.len());
            }
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: None,
                    reason: format!("{} fields, earlier rows have {w}", record.len()),
                });
            }
            Some(_) => {}
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: Some(col + 1),
                reason: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: Some(col + 1),
                    reason: format!("{cell:?} is not finite"),
                });
            }
            samples.push(v);
        }
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            column: None,
            reason: "no samples".into(),
        });
    }
    EmgRecording::new(samples, channels, mapping.sample_rate_hz, ids.0, ids.1, ids.2)
}

/// Reads every matching CSV in `dir`, in file-name order.
pub fn import_csv(dir: &Path, mapping: &CsvMapping) -> Result<Dataset> {
    if mapping.grid_rows == 0 || mapping.grid_cols == 0 {
        return Err(Error::Config("grid dimensions must be positive".into()));
    }
    let re = mapping.regex()?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    files.sort();
    let mut recordings = Vec::new();
    for path in files.iter().filter(|p| p.is_file()) {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(caps) = re.captures(name) else {
            continue;
        };
        let ids = (
            parse_id(&caps, "subject", mapping.one_based_ids, path)?,
            parse_id(&caps, "gesture", mapping.one_based_ids, path)?,
            parse_id(&caps, "repetition", mapping.one_based_ids, path)?,
        );
        recordings.push(read_recording(path, mapping, ids)?);
    }
    if recordings.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no file in {} matches {}",
            dir.display(),
            mapping.filename_pattern
        )));
    }
    let geometry = Geometry {
        sample_rate_hz: mapping.sample_rate_hz,
        grid_rows: mapping.grid_rows,
        grid_cols: mapping.grid_cols,
    };
    Dataset::from_recordings(recordings, geometry, mapping.exclude_subjects.clone())
}

/// Writes `s{subject}_g{gesture}_r{repetition}.csv` per recording plus a
/// `mapping.json` that re-imports them. Floats use the shortest text that
/// parses back to the same value.
pub fn export_csv(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let channels = dataset.manifest.num_channels();
    for r in &dataset.recordings {
        let mut text = String::with_capacity(r.samples().len() * 20);
        for row in r.samples().chunks(channels) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    text.push(',');
                }
                text.push_str(&v.to_string());
            }
            text.push('\n');
        }
        let name = format!("s{}_g{}_r{}.csv", r.subject_id, r.gesture_id, r.repetition_id);
        write_atomic(&dir.join(name), text.as_bytes())?;
    }
    let mut mapping = CsvMapping::for_export(dataset.geometry());
    mapping.exclude_subjects = dataset.manifest.excluded_subjects.clone();
    write_atomic(&dir.join("mapping.json"), &serde_json::to_vec_pretty(&mapping)?)
}

//! Datasets of labeled recordings: synthetic generation, the `EMGDS1`
//! container, and CSV import/export.

mod container;
mod csv_io;
mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{slide_windows, WindowTensor, WindowingSpec};
use crate::signal::{EmgRecording, SignalConfig};

pub use container::{
    read_dataset, read_dataset_from, write_atomic, write_dataset, write_dataset_to, MAGIC, VERSION,
};
pub use csv_io::{export_csv, import_csv, CsvMapping};
pub use synth::{generate_synthetic, SyntheticSpec};

/// Location of one recording's sample block inside a container file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub subject: u32,
    pub gesture: u32,
    pub repetition: u32,
    pub num_samples: u64,
    /// Byte offset from the start of the sample area.
    pub offset: u64,
    /// Block length in bytes.
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_subjects: u32,
    pub num_gestures: u32,
    pub num_repetitions: u32,
    pub sample_rate_hz: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Subjects kept in the file but left out of every experiment.
    #[serde(default)]
    pub excluded_subjects: Vec<u32>,
    pub recordings: Vec<RecordEntry>,
}

impl DatasetManifest {
    pub fn num_channels(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::Format("grid dimensions must be positive".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Format(format!(
                "sample rate {} is not positive",
                self.sample_rate_hz
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &self.recordings {
            if !seen.insert((r.subject, r.gesture, r.repetition)) {
                return Err(Error::Format(format!(
                    "duplicate recording (subject {}, gesture {}, repetition {})",
                    r.subject, r.gesture, r.repetition
                )));
            }
            if r.subject >= self.num_subjects
                || r.gesture >= self.num_gestures
                || r.repetition >= self.num_repetitions
            {
                return Err(Error::Format(format!(
                    "recording (subject {}, gesture {}, repetition {}) outside the declared counts",
                    r.subject, r.gesture, r.repetition
                )));
            }
        }
        Ok(())
    }

    /// Subject ids present in the manifest and not excluded, ascending.
    pub fn active_subjects(&self) -> Vec<u32> {
        let ids: BTreeSet<u32> = self
            .recordings
            .iter()
            .map(|r| r.subject)
            .filter(|s| !self.excluded_subjects.contains(s))
            .collect();
        ids.into_iter().collect()
    }
}

/// Manifest plus recordings, index-aligned with `manifest.recordings`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub recordings: Vec<EmgRecording>,
}

/// Grid and rate shared by every recording of a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub sample_rate_hz: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl Dataset {
    /// Builds a consistent manifest (counts, offsets) around the recordings.
    pub fn from_recordings(
        recordings: Vec<EmgRecording>,
        geometry: Geometry,
        excluded_subjects: Vec<u32>,
    ) -> Result<Self> {
        let channels = geometry.grid_rows * geometry.grid_cols;
        let mut entries = Vec::with_capacity(recordings.len());
        let mut offset = 0u64;
        for r in &recordings {
            if r.num_channels() != channels {
                return Err(Error::Shape(format!(
                    "recording (subject {}, gesture {}, repetition {}) has {} channels, grid {}x{} needs {channels}",
                    r.subject_id,
                    r.gesture_id,
                    r.repetition_id,
                    r.num_channels(),
                    geometry.grid_rows,
                    geometry.grid_cols
                )));
            }
            if r.sample_rate_hz() != geometry.sample_rate_hz {
                return Err(Error::Shape(format!(
                    "recording sampled at {} Hz in a {} Hz dataset",
                    r.sample_rate_hz(),
                    geometry.sample_rate_hz
                )));
            }
            let length = (r.samples().len() * 8) as u64;
            entries.push(RecordEntry {
                subject: r.subject_id,
                gesture: r.gesture_id,
                repetition: r.repetition_id,
                num_samples: r.num_samples() as u64,
                offset,
                length,
            });
            offset += length;
        }
        let count = |f: fn(&RecordEntry) -> u32| entries.iter().map(f).max().map_or(0, |m| m + 1);
        let manifest = DatasetManifest {
            version: VERSION,
            num_subjects: count(|e| e.subject),
            num_gestures: count(|e| e.gesture),
            num_repetitions: count(|e| e.repetition),
            sample_rate_hz: geometry.sample_rate_hz,
            grid_rows: geometry.grid_rows,
            grid_cols: geometry.grid_cols,
            excluded_subjects,
            recordings: entries,
        };
        manifest.validate()?;
        Ok(Self {
            manifest,
            recordings,
        })
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            sample_rate_hz: self.manifest.sample_rate_hz,
            grid_rows: self.manifest.grid_rows,
            grid_cols: self.manifest.grid_cols,
        }
    }

    pub fn subject_recordings(&self, subject: u32) -> impl Iterator<Item = &EmgRecording> {
        self.recordings.iter().filter(move |r| r.subject_id == subject)
    }

    /// Preprocessed, windowed recordings of one subject.
    pub fn subject_windows(
        &self,
        subject: u32,
        signal: &SignalConfig,
        windowing: &WindowingSpec,
    ) -> Result<Vec<WindowTensor>> {
        let mut out = Vec::new();
        for r in self.subject_recordings(subject) {
            let processed = signal.apply(r)?;
            out.extend(slide_windows(
                &processed,
                self.manifest.grid_rows,
                self.manifest.grid_cols,
                windowing,
            )?);
        }
        if out.is_empty() {
            return Err(Error::EmptyResult(format!("subject {subject} has no recordings")));
        }
        Ok(out)
    }
}

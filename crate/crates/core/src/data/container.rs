//! `EMGDS1` files: magic, little-endian `u32` header length, JSON manifest,
//! then the contiguous `f64` little-endian sample blocks it declares.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::signal::EmgRecording;

pub const MAGIC: &[u8; 6] = b"EMGDS1";
pub const VERSION: u32 = 1;

pub fn write_dataset_to(dataset: &Dataset) -> Result<Vec<u8>> {
    let m = &dataset.manifest;
    m.validate()?;
    if m.recordings.len() != dataset.recordings.len() {
        return Err(Error::Contract(format!(
            "manifest lists {} recordings, dataset holds {}",
            m.recordings.len(),
            dataset.recordings.len()
        )));
    }
    let header = serde_json::to_vec(m)?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::Format("manifest larger than 4 GiB".into()))?;
    let mut out = Vec::with_capacity(10 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    let mut offset = 0u64;
    for (entry, rec) in m.recordings.iter().zip(&dataset.recordings) {
        let length = (rec.samples().len() * 8) as u64;
        if entry.offset != offset
            || entry.length != length
            || (entry.subject, entry.gesture, entry.repetition)
                != (rec.subject_id, rec.gesture_id, rec.repetition_id)
        {
            return Err(Error::Contract(format!(
                "manifest entry for (subject {}, gesture {}, repetition {}) does not describe its recording",
                entry.subject, entry.gesture, entry.repetition
            )));
        }
        for v in rec.samples() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        offset += length;
    }
    Ok(out)
}

pub fn read_dataset_from(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing EMGDS1 magic".into()));
    }
    let mut len_bytes = [0u8; 4];
    len_bytes.copy_from_slice(&bytes[6..10]);
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let data_start = 10usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("manifest runs past end of file".into()))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes[10..data_start])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {} (expected {VERSION})",
            manifest.version
        )));
    }
    manifest.validate()?;
    let area = &bytes[data_start..];
    let channels = manifest.num_channels();
    let mut spans = Vec::with_capacity(manifest.recordings.len());
    let mut recordings = Vec::with_capacity(manifest.recordings.len());
    for e in &manifest.recordings {
        let corrupt = |reason: String| Error::Corruption {
            subject: e.subject,
            gesture: e.gesture,
            repetition: e.repetition,
            reason,
        };
        let expected = e
            .num_samples
            .checked_mul(channels as u64 * 8)
            .ok_or_else(|| corrupt("sample count overflows".into()))?;
        if e.length != expected {
            return Err(corrupt(format!(
                "block of {} bytes, {} samples x {channels} channels need {expected}",
                e.length, e.num_samples
            )));
        }
        let end = e
            .offset
            .checked_add(e.length)
            .filter(|&end| end <= area.len() as u64)
            .ok_or_else(|| {
                corrupt(format!(
                    "block at offset {} of {} bytes runs past the {} data bytes",
                    e.offset,
                    e.length,
                    area.len()
                ))
            })?;
        let block = &area[e.offset as usize..end as usize];
        let samples = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let rec = EmgRecording::new(
            samples,
            channels,
            manifest.sample_rate_hz,
            e.subject,
            e.gesture,
            e.repetition,
        )
        .map_err(|err| corrupt(err.to_string()))?;
        spans.push((e.offset, end, e));
        recordings.push(rec);
    }
    spans.sort_by_key(|s| s.0);
    let mut cursor = 0u64;
    for (start, end, e) in spans {
        if start < cursor {
            return Err(Error::Corruption {
                subject: e.subject,
                gesture: e.gesture,
                repetition: e.repetition,
                reason: "block overlaps another block".into(),
            });
        }
        if start > cursor {
            return Err(Error::Format(format!(
                "undeclared bytes {cursor}..{start} in the data area"
            )));
        }
        cursor = end;
    }
    if cursor != area.len() as u64 {
        return Err(Error::Format(format!(
            "{} undeclared trailing bytes",
            area.len() as u64 - cursor
        )));
    }
    Ok(Dataset {
        manifest,
        recordings,
    })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_atomic(path, &write_dataset_to(dataset)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(&bytes)
}

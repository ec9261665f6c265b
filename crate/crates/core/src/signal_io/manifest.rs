//! CSV manifests and segment files (mono WAV or one-column CSV).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{fit_length_with, normalize, LengthFit, Location, MurmurClass, Segment, SegmentSet};
use super::{DEFAULT_SAMPLE_RATE, DEFAULT_SEGMENT_LEN};
use crate::error::{Error, Result};

/// One manifest line: `recording_id,path,label,location`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub recording_id: String,
    pub path: String,
    pub label: String,
    pub location: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub length: usize,
    pub fit: LengthFit,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            length: DEFAULT_SEGMENT_LEN,
            fit: LengthFit::Resample,
        }
    }
}

/// Loads every row of a manifest in order. Relative segment paths resolve
/// against the manifest's directory; each segment is fitted to
/// `opts.length` and then peak-normalized, so every loaded segment reaches
/// exactly 1 in absolute value unless it is silent.
pub fn load_segments(manifest_path: &Path, opts: &LoadOptions) -> Result<SegmentSet> {
    let file = File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);

    let mut segments = Vec::new();
    for (row_idx, record) in reader.deserialize::<ManifestRow>().enumerate() {
        // row numbers are 1-based data rows, header excluded
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Decode {
            path: manifest_path.to_path_buf(),
            reason: format!("row {row}: {e}"),
        })?;
        let label: MurmurClass = record.label.parse().map_err(|_| Error::InvalidLabel {
            label: record.label.clone(),
            row: Some(row),
        })?;
        let location: Location = record.location.parse()?;
        let path = resolve(base, &record.path);
        let (raw, sample_rate) = read_samples_file(&path).map_err(|e| match e {
            Error::Io { path, source, .. } => Error::Io {
                path,
                row: Some(row),
                source,
            },
            other => other,
        })?;
        let samples = normalize(&fit_length_with(&raw, opts.length, opts.fit)?)?;
        segments.push(Segment {
            samples,
            label,
            recording_id: record.recording_id,
            location,
            sample_rate,
        });
    }
    SegmentSet::new(segments)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads raw samples and the sample rate from a `.wav` file or a
/// one-column CSV of decimal floats (anything not ending in `.wav`).
pub fn read_samples_file(path: &Path) -> Result<(Vec<f64>, f64)> {
    let is_wav = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        read_wav(path)
    } else {
        Ok((read_csv_column(path)?, DEFAULT_SAMPLE_RATE))
    }
}

fn read_wav(path: &Path) -> Result<(Vec<f64>, f64)> {
    let decode = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => decode(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(decode(format!("{} channels; only mono is accepted", spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| decode(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| decode(e.to_string()))?,
        (fmt, bits) => return Err(decode(format!("unsupported sample format {fmt:?}/{bits}-bit"))),
    };
    if samples.is_empty() {
        return Err(decode("no samples".into()));
    }
    Ok((samples, spec.sample_rate as f64))
}

fn read_csv_column(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        let v: f64 = field.parse().map_err(|_| Error::Decode {
            path: path.to_path_buf(),
            reason: format!("line {}: {field:?} is not a number", i + 1),
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "no samples".into(),
        });
    }
    Ok(out)
}

/// Writes samples one per line using the shortest round-trip representation.
pub fn write_samples_csv(path: &Path, samples: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in samples {
        writeln!(w, "{v:?}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

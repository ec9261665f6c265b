//! Segment loading, normalization, length fitting and synthetic murmurs.
//!
//! Every [`SegmentSet`] produced here holds peak-normalized segments of one
//! common length. Real recordings arrive pre-cut through a CSV manifest (see
//! [`load_segments`]); synthetic four-class data comes from [`synth`].

mod manifest;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{load_segments, read_samples_file, write_manifest, write_samples_csv, LoadOptions, ManifestRow};
pub use synth::{make_synth_dataset, synth_murmur, SynthSpec};

/// Default segment length in samples.
pub const DEFAULT_SEGMENT_LEN: usize = 512;

/// Sample rate assumed when a segment file carries none (CSV input).
pub const DEFAULT_SAMPLE_RATE: f64 = 4000.0;

/// The four systolic murmur shapes. The discriminant is the class index used
/// by the classifier and every on-disk format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MurmurClass {
    Diamond = 0,
    Plateau = 1,
    Decrescendo = 2,
    Crescendo = 3,
}

impl MurmurClass {
    pub const COUNT: usize = 4;
    pub const ALL: [MurmurClass; 4] = [
        MurmurClass::Diamond,
        MurmurClass::Plateau,
        MurmurClass::Decrescendo,
        MurmurClass::Crescendo,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MurmurClass::Diamond => "Diamond",
            MurmurClass::Plateau => "Plateau",
            MurmurClass::Decrescendo => "Decrescendo",
            MurmurClass::Crescendo => "Crescendo",
        }
    }
}

impl fmt::Display for MurmurClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MurmurClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::InvalidLabel {
                label: s.to_string(),
                row: None,
            })
    }
}

/// Auscultation site of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Location {
    AP,
    PP,
    MP,
    TP,
    #[default]
    Unknown,
}

impl Location {
    pub fn name(self) -> &'static str {
        match self {
            Location::AP => "AP",
            Location::PP => "PP",
            Location::MP => "MP",
            Location::TP => "TP",
            Location::Unknown => "Unknown",
        }
    }
}

impl FromStr for Location {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "AP" => Ok(Location::AP),
            "PP" => Ok(Location::PP),
            "MP" => Ok(Location::MP),
            "TP" => Ok(Location::TP),
            "Unknown" | "" => Ok(Location::Unknown),
            other => Err(Error::InvalidSegment(format!("unknown location {other:?}"))),
        }
    }
}

/// One fixed-length murmur excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub label: MurmurClass,
    pub recording_id: String,
    pub location: Location,
    /// Informational only; nothing downstream depends on it.
    pub sample_rate: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Ordered collection of equal-length segments with per-class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    segments: Vec<Segment>,
    class_counts: [usize; MurmurClass::COUNT],
}

impl SegmentSet {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if let Some(first) = segments.first() {
            let m = first.len();
            if let Some((i, s)) = segments.iter().enumerate().find(|(_, s)| s.len() != m) {
                return Err(Error::Dim(format!(
                    "segment {i} has length {} but segment 0 has length {m}",
                    s.len()
                )));
            }
        }
        let mut class_counts = [0; MurmurClass::COUNT];
        for s in &segments {
            class_counts[s.label.index()] += 1;
        }
        Ok(Self {
            segments,
            class_counts,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<Segment> {
        self.segments
    }

    pub fn class_counts(&self) -> [usize; MurmurClass::COUNT] {
        self.class_counts
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment length shared by every member, `None` for an empty set.
    pub fn segment_len(&self) -> Option<usize> {
        self.segments.first().map(Segment::len)
    }

    /// Re-checks every loader invariant: uniform length, consistent counts,
    /// peak-normalized amplitudes.
    pub fn validate(&self) -> Result<()> {
        let m = self.segment_len().unwrap_or(0);
        let mut counts = [0; MurmurClass::COUNT];
        for (i, s) in self.segments.iter().enumerate() {
            if s.len() != m {
                return Err(Error::Dim(format!("segment {i} has length {}, expected {m}", s.len())));
            }
            let peak = s.samples.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if !peak.is_finite() || peak > 1.0 {
                return Err(Error::InvalidSegment(format!("segment {i} peak {peak} exceeds 1")));
            }
            counts[s.label.index()] += 1;
        }
        if counts != self.class_counts {
            return Err(Error::InvalidSegment("class counts out of sync".into()));
        }
        Ok(())
    }
}

/// Scales by the peak absolute value so the output lies in `[-1, 1]`.
/// All-zero input is returned unchanged.
pub fn normalize(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidSegment("cannot normalize an empty segment".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSegment("segment contains non-finite samples".into()));
    }
    let peak = samples.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if peak == 0.0 {
        return Ok(samples.to_vec());
    }
    Ok(samples.iter().map(|v| v / peak).collect())
}

/// How segments whose length differs from the target are brought to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthFit {
    /// Linear interpolation onto uniformly spaced points spanning the
    /// original index range.
    #[default]
    Resample,
    /// Truncate or append zeros at the end.
    ZeroPad,
}

/// Linear-interpolation resampling to exactly `m` samples.
pub fn fit_length(samples: &[f64], m: usize) -> Result<Vec<f64>> {
    fit_length_with(samples, m, LengthFit::Resample)
}

pub fn fit_length_with(samples: &[f64], m: usize, mode: LengthFit) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidSegment("cannot fit an empty segment".into()));
    }
    if m < 2 {
        return Err(Error::InvalidSegment(format!("target length {m} must be at least 2")));
    }
    let n = samples.len();
    if n == m {
        return Ok(samples.to_vec());
    }
    match mode {
        LengthFit::ZeroPad => {
            let mut out = samples[..n.min(m)].to_vec();
            out.resize(m, 0.0);
            Ok(out)
        }
        LengthFit::Resample => {
            if n == 1 {
                return Ok(vec![samples[0]; m]);
            }
            // position k*(n-1)/(m-1) split into integer part and remainder so
            // the endpoints land exactly on the first and last input samples
            let span = (n - 1) as u64;
            let denom = (m - 1) as u64;
            Ok((0..m as u64)
                .map(|k| {
                    let num = k * span;
                    let i = (num / denom) as usize;
                    let rem = num % denom;
                    if rem == 0 {
                        samples[i]
                    } else {
                        let frac = rem as f64 / denom as f64;
                        samples[i] + (samples[i + 1] - samples[i]) * frac
                    }
                })
                .collect())
        }
    }
}

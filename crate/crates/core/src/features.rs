//! Time-frequency feature maps from sparse codes.
//!
//! Block `j` of a code (columns `(j-1)M .. jM`) becomes a `2^j x 2^(L-j)`
//! matrix whose entry `[f, t]` is the magnitude (or squared magnitude) of
//! coefficient `t * 2^j + f`: rows index frequency, columns translation.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::pursuit::SparseCode;
use crate::signal_io::MurmurClass;

const MAGIC: &[u8; 4] = b"MRGF";
const VERSION: u16 = 1;
const NO_LABEL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Magnitude,
    #[default]
    SquaredMagnitude,
}

impl Mode {
    fn apply(self, z: Complex64) -> f64 {
        match self {
            Mode::Magnitude => z.norm(),
            Mode::SquaredMagnitude => z.norm_sqr(),
        }
    }

    fn code(self) -> u8 {
        match self {
            Mode::Magnitude => 0,
            Mode::SquaredMagnitude => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Mode::Magnitude),
            1 => Ok(Mode::SquaredMagnitude),
            other => Err(Error::Header(format!("feature bundle: unknown mode {other}"))),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mag" | "magnitude" => Ok(Mode::Magnitude),
            "sq" | "squared" | "squared_magnitude" => Ok(Mode::SquaredMagnitude),
            other => Err(Error::Config(format!("unknown feature mode {other:?} (use mag or sq)"))),
        }
    }
}

/// The `J` feature matrices of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    /// `matrices[j-1]` has shape `2^j x M/2^j`.
    pub matrices: Vec<Array2<f64>>,
    pub mode: Mode,
    pub label: Option<MurmurClass>,
    pub segment_ref: String,
}

impl FeatureStack {
    pub fn m(&self) -> usize {
        self.matrices.first().map_or(0, |a| a.len())
    }

    pub fn levels(&self) -> u32 {
        self.matrices.len() as u32
    }

    pub fn total_energy(&self) -> f64 {
        self.matrices.iter().map(|a| a.sum()).sum()
    }

    /// Divides every entry by the stack's largest entry (no-op on an
    /// all-zero stack).
    pub fn max_normalize(&mut self) {
        let peak = self
            .matrices
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0f64, |acc, &v| acc.max(v));
        if peak > 0.0 {
            self.matrices.iter_mut().for_each(|a| a.mapv_inplace(|v| v / peak));
        }
    }

    /// Writes block `j` as CSV, one matrix row (frequency) per line.
    pub fn matrix_csv(&self, j: u32) -> Result<String> {
        let a = self
            .matrices
            .get((j as usize).wrapping_sub(1))
            .ok_or_else(|| Error::InvalidResolution(format!("j={j} outside 1..={}", self.levels())))?;
        let mut out = String::new();
        for row in a.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        Ok(out)
    }
}

/// Splits a dense `J*M` coefficient vector into its `J` blocks.
pub fn split_coeffs(a: &[Complex64], m: usize, levels: u32) -> Result<Vec<&[Complex64]>> {
    let j = levels as usize;
    if m == 0 || a.len() != j * m {
        return Err(Error::Dim(format!("{} coefficients, expected J*M = {j}*{m}", a.len())));
    }
    Ok(a.chunks_exact(m).collect())
}

/// Reshapes block `a_j` into its `2^j x M/2^j` matrix.
pub fn reshape_to_tf(a_j: &[Complex64], j: u32, mode: Mode) -> Result<Array2<f64>> {
    let m = a_j.len();
    if !m.is_power_of_two() || m < 4 {
        return Err(Error::Dim(format!("block length {m} is not a power of two >= 4")));
    }
    let levels = m.trailing_zeros() - 1;
    if j == 0 || j > levels {
        return Err(Error::InvalidResolution(format!("j={j} outside 1..={levels} for M={m}")));
    }
    let rows = 1usize << j;
    let cols = m / rows;
    Ok(Array2::from_shape_fn((rows, cols), |(f, t)| mode.apply(a_j[t * rows + f])))
}

pub fn featurize(code: &SparseCode, mode: Mode) -> Result<FeatureStack> {
    let blocks = split_coeffs(&code.coefficients, code.m, code.levels)?;
    let matrices = blocks
        .iter()
        .zip(1..)
        .map(|(b, j)| reshape_to_tf(b, j, mode))
        .collect::<Result<_>>()?;
    Ok(FeatureStack {
        matrices,
        mode,
        label: code.label,
        segment_ref: code.segment_ref.clone(),
    })
}

/// Serializes stacks sharing `M`, `J` and mode into one `.mrgf` bundle.
pub fn write_bundle(stacks: &[FeatureStack]) -> Result<Vec<u8>> {
    let first = stacks
        .first()
        .ok_or_else(|| Error::EmptyInput("no feature stacks to write".into()))?;
    let (m, levels, mode) = (first.m(), first.levels(), first.mode);
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(stacks.len() as u32);
    w.u32(m as u32);
    w.u32(levels);
    w.u8(mode.code());
    for s in stacks {
        if s.m() != m || s.levels() != levels || s.mode != mode {
            return Err(Error::Dim(format!(
                "stack {:?} (M={}, J={}, {:?}) does not match the bundle (M={m}, J={levels}, {mode:?})",
                s.segment_ref,
                s.m(),
                s.levels(),
                s.mode
            )));
        }
        w.str(&s.segment_ref);
        w.u8(s.label.map_or(NO_LABEL, |l| l.index() as u8));
        for a in &s.matrices {
            for &v in a.iter() {
                w.f32(v as f32);
            }
        }
    }
    Ok(w.into_inner())
}

pub fn read_bundle(buf: &[u8]) -> Result<Vec<FeatureStack>> {
    let mut r = ByteReader::new(buf, "feature bundle");
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Header(format!("feature bundle: unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let m = r.u32()? as usize;
    let levels = r.u32()?;
    let mode = Mode::from_code(r.u8()?)?;
    if !m.is_power_of_two() || m < 4 || levels != m.trailing_zeros() - 1 {
        return Err(Error::Header(format!("feature bundle: inconsistent M={m}, J={levels}")));
    }
    let mut stacks = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let segment_ref = r.str()?;
        let label = match r.u8()? {
            NO_LABEL => None,
            c => Some(MurmurClass::from_index(c as usize).ok_or_else(|| {
                Error::Header(format!("feature bundle: label code {c} out of range"))
            })?),
        };
        let mut matrices = Vec::with_capacity(levels as usize);
        for j in 1..=levels {
            let rows = 1usize << j;
            let raw = r.take(4 * m)?;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            matrices.push(Array2::from_shape_vec((rows, m / rows), values).expect("block has M entries"));
        }
        stacks.push(FeatureStack {
            matrices,
            mode,
            label,
            segment_ref,
        });
    }
    r.finish()?;
    Ok(stacks)
}

pub fn save_bundle(path: &Path, stacks: &[FeatureStack]) -> Result<()> {
    let bytes = write_bundle(stacks)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<Vec<FeatureStack>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_bundle(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;
    use crate::pursuit::{comp_joint, PursuitConfig};

    fn zero(n: usize) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); n]
    }

    #[test]
    fn split_examples() {
        let mut a = zero(512 * 8);
        a[..512].iter_mut().for_each(|z| *z = Complex64::new(1.0, 0.0));
        let blocks = split_coeffs(&a, 512, 8).unwrap();
        assert_eq!(blocks.len(), 8);
        assert!(blocks[0].iter().all(|z| z.re == 1.0));
        assert!(blocks[1..].iter().all(|b| b.iter().all(|z| z.re == 0.0)));
        assert_eq!(blocks.concat(), a);

        let mut b = zero(512 * 8);
        b[512] = Complex64::new(2.0, 0.0);
        assert_eq!(split_coeffs(&b, 512, 8).unwrap()[1][0].re, 2.0);
        assert!(matches!(split_coeffs(&b[1..], 512, 8), Err(Error::Dim(_))));
    }

    #[test]
    fn shapes_follow_the_resolution() {
        for j in 1..=8 {
            let a = reshape_to_tf(&zero(512), j, Mode::Magnitude).unwrap();
            assert_eq!(a.dim(), (1 << j, 512 >> j));
        }
        assert!(matches!(reshape_to_tf(&zero(512), 9, Mode::Magnitude), Err(Error::InvalidResolution(_))));
        assert!(matches!(reshape_to_tf(&zero(512), 0, Mode::Magnitude), Err(Error::InvalidResolution(_))));
    }

    #[test]
    fn one_hot_lands_at_frequency_row_translation_column() {
        let (j, t, f) = (3u32, 5usize, 6usize);
        let mut a = zero(64);
        a[t * 8 + f] = Complex64::new(0.0, -1.0);
        let mat = reshape_to_tf(&a, j, Mode::Magnitude).unwrap();
        assert_eq!(mat[[f, t]], 1.0);
        assert_eq!(mat.sum(), 1.0);
    }

    #[test]
    fn squared_mode_keeps_block_energy() {
        let a: Vec<Complex64> = (0..128).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mat = reshape_to_tf(&a, 4, Mode::SquaredMagnitude).unwrap();
        let energy: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        assert!((mat.sum() - energy).abs() < 1e-12);
    }

    #[test]
    fn featurize_examples() {
        let empty = featurize(&SparseCode::empty(512, 8), Mode::SquaredMagnitude).unwrap();
        assert_eq!(empty.total_energy(), 0.0);
        assert_eq!(empty.matrices.iter().map(|a| a.len()).sum::<usize>(), 4096);

        let mut code = SparseCode::empty(512, 8).with_ref("x", Some(MurmurClass::Diamond));
        let col = 2 * 512 + 4 * 8;
        code.coefficients[col] = Complex64::new(0.6, 0.8);
        code.support.push(col);
        let stack = featurize(&code, Mode::SquaredMagnitude).unwrap();
        assert!((stack.matrices[2][[0, 4]] - 1.0).abs() < 1e-15);
        assert_eq!(stack.matrices.iter().flatten().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(stack.label, Some(MurmurClass::Diamond));
        assert_eq!(stack.segment_ref, "x");
    }

    #[test]
    fn joint_codes_share_nonzero_positions() {
        let dict = Dictionary::build(64).unwrap();
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|u| (0..64).map(|i| ((i * (u + 2)) as f64 * 0.21).sin() + 0.1 * u as f64).collect())
            .collect();
        let joint = comp_joint(&xs, &dict, &PursuitConfig::with_zeta(20)).unwrap();
        let pattern = |c: &SparseCode| -> Vec<bool> {
            featurize(c, Mode::Magnitude)
                .unwrap()
                .matrices
                .iter()
                .flatten()
                .map(|&v| v != 0.0)
                .collect()
        };
        let first = pattern(&joint.codes[0]);
        assert_eq!(first.iter().filter(|&&b| b).count(), 20);
        for c in &joint.codes[1..] {
            assert_eq!(pattern(c), first);
        }
    }

    #[test]
    fn max_normalize_scales_peak_to_one() {
        let mut code = SparseCode::empty(16, 3);
        code.coefficients[3] = Complex64::new(2.0, 0.0);
        code.coefficients[20] = Complex64::new(1.0, 0.0);
        let mut s = featurize(&code, Mode::SquaredMagnitude).unwrap();
        s.max_normalize();
        assert_eq!(s.matrices[0].iter().fold(0.0f64, |a, &v| a.max(v)), 1.0);
        assert_eq!(s.matrices[1].sum(), 0.25);
    }

    #[test]
    fn bundle_round_trip_and_header_checks() {
        let mut code = SparseCode::empty(16, 3).with_ref("seg/0", Some(MurmurClass::Crescendo));
        code.coefficients[5] = Complex64::new(0.5, 0.0);
        let a = featurize(&code, Mode::SquaredMagnitude).unwrap();
        let mut b = featurize(&SparseCode::empty(16, 3).with_ref("seg/1", None), Mode::SquaredMagnitude).unwrap();
        b.label = None;
        let bytes = write_bundle(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_bundle(&bytes).unwrap(), vec![a.clone(), b]);

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"MRGX");
        assert!(matches!(read_bundle(&bad), Err(Error::Header(_))));
        assert!(matches!(read_bundle(&bytes[..bytes.len() - 2]), Err(Error::Header(_))));

        let mag = featurize(&code, Mode::Magnitude).unwrap();
        assert!(matches!(write_bundle(&[a, mag]), Err(Error::Dim(_))));
    }

    #[test]
    fn csv_dump_has_one_line_per_frequency() {
        let stack = featurize(&SparseCode::empty(32, 4), Mode::Magnitude).unwrap();
        let csv = stack.matrix_csv(2).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 8);
        assert!(stack.matrix_csv(5).is_err());
    }
}

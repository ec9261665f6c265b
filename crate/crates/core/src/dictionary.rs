//! Multiresolution complex Gabor dictionary.
//!
//! For a segment length `M = 2^L`, resolution `j` (`1 <= j <= J = L - 1`)
//! uses scale `alpha = 2^j`, translations `m0 = 2^j * t` for
//! `t < 2^(L-j)` and frequencies `omega = 2 pi f / 2^j` for `f < 2^j`. Each
//! block `D_j` therefore holds exactly `M` atoms; `D = [D_1 | ... | D_J]` is
//! `M x JM`.
//!
//! Column order inside a block is translation-major: column
//! `(j-1)*M + t*2^j + f`. Every stored column is unit-norm; the norm of the
//! raw atom is kept in [`Dictionary::raw_norms`].

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use num_complex::Complex64;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MRGD";
const VERSION: u16 = 1;

/// Gaussian values below this are stored as exact zeros.
pub const GAUSS_FLOOR: f64 = 1e-300;

/// `(resolution, translation, frequency)` indices of one atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtomParams {
    pub j: u32,
    pub t: usize,
    pub f: usize,
}

impl AtomParams {
    pub fn new(j: u32, t: usize, f: usize) -> Self {
        Self { j, t, f }
    }

    /// Scale `alpha = 2^j`, also the number of frequency bins in block `j`.
    pub fn scale(&self) -> usize {
        1 << self.j
    }

    pub fn center(&self) -> usize {
        self.scale() * self.t
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f as f64 / self.scale() as f64
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let levels = levels_for(m).map_err(|e| Error::InvalidAtomParams(e.to_string()))?;
        if self.j == 0 || self.j > levels {
            return Err(Error::InvalidAtomParams(format!("j={} outside 1..={levels}", self.j)));
        }
        let n = self.scale();
        if self.t >= m / n {
            return Err(Error::InvalidAtomParams(format!(
                "t={} outside 0..{} for j={}",
                self.t,
                m / n,
                self.j
            )));
        }
        if self.f >= n {
            return Err(Error::InvalidAtomParams(format!("f={} outside 0..{n} for j={}", self.f, self.j)));
        }
        Ok(())
    }

    /// Frequency index of the atom whose raw samples are the complex
    /// conjugate of this one's. Equal to `f` for the real atoms (`omega` of 0
    /// or pi).
    pub fn conjugate_partner(&self) -> AtomParams {
        let n = self.scale();
        AtomParams {
            f: (n - self.f) % n,
            ..*self
        }
    }

    pub fn is_real(&self) -> bool {
        self.f == 0 || 2 * self.f == self.scale()
    }
}

/// Number of resolutions `J = log2(M) - 1` for a power-of-two `M >= 4`.
pub fn levels_for(m: usize) -> Result<u32> {
    if m < 4 || !m.is_power_of_two() {
        return Err(Error::InvalidResolution(format!("M must be a power of two >= 4, got {m}")));
    }
    Ok(m.trailing_zeros() - 1)
}

/// `(j-1)*M + t*2^j + f`.
pub fn atom_index(params: AtomParams, m: usize) -> Result<usize> {
    params.validate(m)?;
    Ok((params.j as usize - 1) * m + params.t * params.scale() + params.f)
}

/// Inverse of [`atom_index`].
pub fn params_of(column: usize, m: usize) -> Result<AtomParams> {
    let levels = levels_for(m)?;
    if column >= levels as usize * m {
        return Err(Error::InvalidAtomParams(format!(
            "column {column} outside dictionary of {} columns",
            levels as usize * m
        )));
    }
    let j = (column / m) as u32 + 1;
    let within = column % m;
    let n = 1usize << j;
    Ok(AtomParams {
        j,
        t: within / n,
        f: within % n,
    })
}

/// `exp(-i 2 pi k / n)` for `k < n`, built so that entry `n-k` is the exact
/// conjugate of entry `k` and the quarter-turn points are exact.
pub(crate) fn phase_table(n: usize) -> Vec<Complex64> {
    let mut table = vec![Complex64::new(0.0, 0.0); n];
    for (k, z) in table.iter_mut().enumerate().take(n / 2 + 1) {
        let theta = 2.0 * PI * k as f64 / n as f64;
        *z = Complex64::new(theta.cos(), -theta.sin());
    }
    table[0] = Complex64::new(1.0, 0.0);
    if n >= 2 {
        table[n / 2] = Complex64::new(-1.0, 0.0);
    }
    if n >= 4 {
        table[n / 4] = Complex64::new(0.0, -1.0);
    }
    for k in n / 2 + 1..n {
        table[k] = table[n - k].conj();
    }
    table
}

fn gaussian(dm: f64, alpha: f64) -> f64 {
    let g = (-PI * (dm / alpha).powi(2)).exp();
    if g < GAUSS_FLOOR {
        0.0
    } else {
        g
    }
}

fn atom_with_table(params: AtomParams, m: usize, table: &[Complex64]) -> Vec<Complex64> {
    let n = params.scale() as i64;
    let alpha = n as f64;
    let m0 = params.center() as i64;
    let f = params.f as i64;
    (0..m as i64)
        .map(|i| {
            let dm = i - m0;
            let g = gaussian(dm as f64, alpha);
            if g == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            // omega*(m - m0) = 2 pi (f*(m-m0) mod 2^j) / 2^j
            let k = (f * dm).rem_euclid(n) as usize;
            table[k] * g
        })
        .collect()
}

/// Raw (unnormalized) atom
/// `exp(-pi ((m - m0)/alpha)^2) * exp(-i omega (m - m0))`, `m = 0..M-1`.
pub fn gabor_atom(params: AtomParams, m: usize) -> Result<Vec<Complex64>> {
    params.validate(m)?;
    Ok(atom_with_table(params, m, &phase_table(params.scale())))
}

fn l2_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.re * z.re + z.im * z.im).sum::<f64>().sqrt()
}

/// Block `D_j` as `M` unit-norm columns, each `M` long, concatenated
/// column-major, plus the raw norms.
pub fn build_single_res(j: u32, m: usize) -> Result<(Vec<Complex64>, Vec<f64>)> {
    let levels = levels_for(m)?;
    if j == 0 || j > levels {
        return Err(Error::InvalidResolution(format!("j={j} outside 1..={levels} for M={m}")));
    }
    let n = 1usize << j;
    let table = phase_table(n);
    let mut columns = Vec::with_capacity(m * m);
    let mut norms = Vec::with_capacity(m);
    for t in 0..m / n {
        for f in 0..n {
            let mut atom = atom_with_table(AtomParams { j, t, f }, m, &table);
            let norm = l2_norm(&atom);
            for z in &mut atom {
                *z /= norm;
            }
            columns.extend_from_slice(&atom);
            norms.push(norm);
        }
    }
    Ok((columns, norms))
}

/// The multiresolution dictionary `[D_1 | ... | D_J]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    m: usize,
    levels: u32,
    atoms: Vec<Complex64>,
    raw_norms: Vec<f64>,
    supports: Vec<Range<usize>>,
}

impl Dictionary {
    pub fn build(m: usize) -> Result<Self> {
        let levels = levels_for(m)?;
        if m < 8 {
            return Err(Error::InvalidResolution(format!("M must be at least 8, got {m}")));
        }
        let mut atoms = Vec::with_capacity(m * m * levels as usize);
        let mut raw_norms = Vec::with_capacity(m * levels as usize);
        for j in 1..=levels {
            let (cols, norms) = build_single_res(j, m)?;
            atoms.extend(cols);
            raw_norms.extend(norms);
        }
        Ok(Self::from_parts(m, levels, atoms, raw_norms))
    }

    fn from_parts(m: usize, levels: u32, atoms: Vec<Complex64>, raw_norms: Vec<f64>) -> Self {
        let supports = atoms
            .chunks_exact(m)
            .map(|col| {
                let nz = |z: &Complex64| z.re != 0.0 || z.im != 0.0;
                let start = col.iter().position(nz).unwrap_or(0);
                let end = col.iter().rposition(nz).map_or(start, |p| p + 1);
                start..end
            })
            .collect();
        Self {
            m,
            levels,
            atoms,
            raw_norms,
            supports,
        }
    }

    /// Signal length `M` (number of rows).
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of resolutions `J`.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn n_atoms(&self) -> usize {
        self.m * self.levels as usize
    }

    pub fn column(&self, i: usize) -> &[Complex64] {
        &self.atoms[i * self.m..(i + 1) * self.m]
    }

    /// All columns back to back, column-major.
    pub fn as_slice(&self) -> &[Complex64] {
        &self.atoms
    }

    pub fn raw_norms(&self) -> &[f64] {
        &self.raw_norms
    }

    /// Row range outside which column `i` is exactly zero.
    pub fn support(&self, i: usize) -> Range<usize> {
        self.supports[i].clone()
    }

    /// Column range of block `j`.
    pub fn block(&self, j: u32) -> Range<usize> {
        let start = (j as usize - 1) * self.m;
        start..start + self.m
    }

    pub fn column_of(&self, params: AtomParams) -> Result<usize> {
        atom_index(params, self.m)
    }

    pub fn params_of(&self, column: usize) -> Result<AtomParams> {
        params_of(column, self.m)
    }

    /// Column holding the conjugate of column `i`.
    pub fn conjugate_column(&self, i: usize) -> usize {
        let p = params_of(i, self.m).expect("column in range");
        atom_index(p.conjugate_partner(), self.m).expect("partner in range")
    }

    /// `.mrgd`: magic, version u16, M u32, J u32, then `JM` columns of `M`
    /// `(re, im)` f64 pairs, then `JM` raw norms; all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(self.m as u32);
        w.u32(self.levels);
        w.f64s(bytemuck::cast_slice(&self.atoms));
        w.f64s(&self.raw_norms);
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "dictionary");
        r.magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Header(format!("dictionary: unsupported version {version}")));
        }
        let m = r.u32()? as usize;
        let levels = r.u32()?;
        let expected = levels_for(m).map_err(|e| Error::Header(format!("dictionary: {e}")))?;
        if levels != expected {
            return Err(Error::Header(format!("dictionary: J={levels} but M={m} requires J={expected}")));
        }
        let n_atoms = m * levels as usize;
        let flat = r.f64s(2 * m * n_atoms)?;
        let atoms: Vec<Complex64> = flat.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        let raw_norms = r.f64s(n_atoms)?;
        r.finish()?;
        Ok(Self::from_parts(m, levels, atoms, raw_norms))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// RMS duration of `v` in samples, from its energy distribution in time.
pub fn time_spread(v: &[Complex64]) -> f64 {
    let w: Vec<f64> = v.iter().map(|z| z.norm_sqr()).collect();
    rms_spread(&w, |i| i as f64)
}

/// RMS bandwidth of `v` in DFT bins, measured around its peak bin with
/// circular distance.
pub fn frequency_spread(v: &[Complex64]) -> f64 {
    let n = v.len();
    let table = phase_table(n);
    let power: Vec<f64> = (0..n)
        .map(|k| {
            v.iter()
                .enumerate()
                .map(|(i, z)| z * table[(i * k) % n])
                .sum::<Complex64>()
                .norm_sqr()
        })
        .collect();
    let peak = power
        .iter()
        .enumerate()
        .fold(0, |best, (k, &p)| if p > power[best] { k } else { best });
    rms_spread(&power, |k| {
        let d = (k + n - peak) % n;
        d.min(n - d) as f64
    })
}

fn rms_spread(weights: &[f64], coord: impl Fn(usize) -> f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let mean = weights.iter().enumerate().map(|(i, w)| w * coord(i)).sum::<f64>() / total;
    let var = weights.iter().enumerate().map(|(i, w)| w * (coord(i) - mean).powi(2)).sum::<f64>() / total;
    var.sqrt()
}

/// Two-column `re,im` CSV of the raw atom, for plotting.
pub fn atom_csv(params: AtomParams, m: usize) -> Result<String> {
    let atom = gabor_atom(params, m)?;
    let mut out = String::from("re,im\n");
    for z in atom {
        out.push_str(&format!("{:?},{:?}\n", z.re, z.im));
    }
    Ok(out)
}

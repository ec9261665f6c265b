//! `.mrgc` code files: `"MRGC"`, version u16, header length u32, a JSON
//! header, then the support coefficients as `(re, im)` f64 pairs in support
//! order.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SparseCode;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::signal_io::MurmurClass;

const MAGIC: &[u8; 4] = b"MRGC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeHeader {
    pub segment_ref: String,
    pub zeta: usize,
    pub support: Vec<usize>,
    pub residual_norms: Vec<f64>,
    pub dependent: Vec<usize>,
    pub m: usize,
    pub levels: u32,
    pub label: Option<String>,
    /// Shared key of a joint decomposition, if any.
    #[serde(default)]
    pub group: Option<String>,
}

impl SparseCode {
    pub fn header(&self, zeta: usize, group: Option<String>) -> CodeHeader {
        CodeHeader {
            segment_ref: self.segment_ref.clone(),
            zeta,
            support: self.support.clone(),
            residual_norms: self.residual_norms.clone(),
            dependent: self.dependent.clone(),
            m: self.m,
            levels: self.levels,
            label: self.label.map(|l| l.name().to_string()),
            group,
        }
    }

    pub fn to_bytes(&self, header: &CodeHeader) -> Vec<u8> {
        let json = serde_json::to_vec(header).expect("code header serializes");
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(json.len() as u32);
        w.bytes(&json);
        for &i in &self.support {
            let a = self.coefficients[i];
            w.f64(a.re);
            w.f64(a.im);
        }
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<(Self, CodeHeader)> {
        let mut r = ByteReader::new(buf, "code file");
        r.magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Header(format!("code file: unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let header: CodeHeader = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Header(format!("code file: bad JSON header: {e}")))?;
        let n_atoms = header.m * header.levels as usize;
        if let Some(&bad) = header.support.iter().find(|&&i| i >= n_atoms) {
            return Err(Error::Header(format!("code file: support index {bad} outside {n_atoms} columns")));
        }
        let label = header.label.as_deref().map(str::parse::<MurmurClass>).transpose()?;
        let mut coefficients = vec![Complex64::new(0.0, 0.0); n_atoms];
        let values = r.f64s(2 * header.support.len())?;
        r.finish()?;
        for (&i, pair) in header.support.iter().zip(values.chunks_exact(2)) {
            coefficients[i] = Complex64::new(pair[0], pair[1]);
        }
        let code = SparseCode {
            coefficients,
            support: header.support.clone(),
            residual_norms: header.residual_norms.clone(),
            dependent: header.dependent.clone(),
            segment_ref: header.segment_ref.clone(),
            label,
            m: header.m,
            levels: header.levels,
        };
        Ok((code, header))
    }

    pub fn save(&self, path: &Path, header: &CodeHeader) -> Result<()> {
        std::fs::write(path, self.to_bytes(header)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, CodeHeader)> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

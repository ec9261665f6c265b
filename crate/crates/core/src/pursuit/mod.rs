//! Complex orthogonal matching pursuit (COMP) over a [`Dictionary`], for a
//! single segment or jointly for several segments sharing one support.
//!
//! Each iteration scores every column by `sum_u |d_i^H r_u|`, appends the
//! best unselected column to the support, re-solves the complex least
//! squares problem over the support for every segment and recomputes the
//! residuals. The least-squares solve rides on an incrementally extended QR
//! factorization, so one iteration costs `O(M * JM)` for the scores plus
//! `O(M * |support|)` for the update.

mod codec;
mod kernel;
mod qr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::signal_io::MurmurClass;

use kernel::{correlation_scores, ScorePlan};
use qr::IncrementalQr;

pub use codec::CodeHeader;

/// Scores at or below this stop the pursuit: nothing left to explain.
pub const MIN_CORRELATION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PursuitConfig {
    /// Sparsity level: maximum support size.
    pub zeta: usize,
    /// Stop once `sqrt(sum ||r_u||^2 / sum ||x_u||^2)` drops below this.
    /// Zero disables the check.
    pub residual_tol: f64,
    /// Relative rank threshold; a column whose component orthogonal to the
    /// current support is shorter than `rank_tol * ||x||` gets a zero
    /// coefficient.
    pub rank_tol: f64,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self {
            zeta: 511,
            residual_tol: 0.0,
            rank_tol: 1e-10,
        }
    }
}

impl PursuitConfig {
    pub fn with_zeta(zeta: usize) -> Self {
        Self {
            zeta,
            ..Self::default()
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.zeta == 0 || self.zeta > m {
            return Err(Error::Config(format!("zeta={} must lie in 1..={m}", self.zeta)));
        }
        if !(0.0..1.0).contains(&self.residual_tol) {
            return Err(Error::Config(format!("residual_tol={} must lie in [0, 1)", self.residual_tol)));
        }
        if !(self.rank_tol >= 0.0) {
            return Err(Error::Config(format!("rank_tol={} must be non-negative", self.rank_tol)));
        }
        Ok(())
    }
}

/// Sparse code of one segment. `coefficients` is dense over all `JM`
/// columns and exactly zero off the support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coefficients: Vec<Complex64>,
    /// Selected columns in selection order.
    pub support: Vec<usize>,
    /// `||r_c||` after each iteration `c = 1..=support.len()`.
    pub residual_norms: Vec<f64>,
    /// Support members found linearly dependent on earlier ones; their
    /// coefficients are zero.
    pub dependent: Vec<usize>,
    pub segment_ref: String,
    pub label: Option<MurmurClass>,
    pub m: usize,
    pub levels: u32,
}

impl SparseCode {
    pub fn empty(m: usize, levels: u32) -> Self {
        Self {
            coefficients: vec![Complex64::new(0.0, 0.0); m * levels as usize],
            support: Vec::new(),
            residual_norms: Vec::new(),
            dependent: Vec::new(),
            segment_ref: String::new(),
            label: None,
            m,
            levels,
        }
    }

    pub fn with_ref(mut self, segment_ref: impl Into<String>, label: Option<MurmurClass>) -> Self {
        self.segment_ref = segment_ref.into();
        self.label = label;
        self
    }

    /// Coefficients on the support, in support order.
    pub fn support_coefficients(&self) -> Vec<Complex64> {
        self.support.iter().map(|&i| self.coefficients[i]).collect()
    }
}

/// Codes of several segments decomposed over one shared support.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSparseCode {
    pub codes: Vec<SparseCode>,
    pub shared_support: Vec<usize>,
}

/// What an observer sees after each least-squares update.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub support: &'a [usize],
    /// Current residual of every segment.
    pub residuals: &'a [Vec<Complex64>],
    engine: &'a Engine<'a>,
}

impl IterationView<'_> {
    /// Least-squares coefficients of segment `u` over the current support,
    /// in support order.
    pub fn coefficients(&self, u: usize) -> Vec<Complex64> {
        self.engine.qr.solve(&self.engine.projections[u])
    }
}

struct Engine<'a> {
    dict: &'a Dictionary,
    signals: &'a [Vec<f64>],
    qr: IncrementalQr,
    /// `projections[u][k] = q_k^H x_u` for every independent column.
    projections: Vec<Vec<Complex64>>,
    residuals: Vec<Vec<Complex64>>,
    plan: ScorePlan,
    support: Vec<usize>,
    selected: Vec<bool>,
    scores: Vec<f64>,
    histories: Vec<Vec<f64>>,
}

fn norm_sq(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.re * z.re + z.im * z.im).sum()
}

impl<'a> Engine<'a> {
    fn new(dict: &'a Dictionary, signals: &'a [Vec<f64>]) -> Self {
        let m = dict.m();
        let u = signals.len();
        Self {
            dict,
            signals,
            qr: IncrementalQr::new(m),
            projections: vec![Vec::new(); u],
            residuals: signals
                .iter()
                .map(|x| x.iter().map(|&v| Complex64::new(v, 0.0)).collect())
                .collect(),
            plan: ScorePlan::new(dict),
            support: Vec::new(),
            selected: vec![false; dict.n_atoms()],
            scores: vec![0.0; dict.n_atoms()],
            histories: vec![Vec::new(); u],
        }
    }

    /// Best unselected column; lowest index wins ties.
    fn select(&mut self) -> Option<(usize, f64)> {
        correlation_scores(&mut self.plan, &self.residuals, &mut self.scores);
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            if self.selected[i] {
                continue;
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best
    }

    fn add(&mut self, col: usize, rank_tol: f64) {
        self.selected[col] = true;
        self.support.push(col);
        let added = self
            .qr
            .push(self.dict.column(col), self.dict.support(col), rank_tol)
            .is_some();
        for u in 0..self.signals.len() {
            if added {
                let z = self.qr.last_q_dot_real(&self.signals[u]);
                self.projections[u].push(z);
                self.qr.deflate(&mut self.residuals[u]);
            }
            self.histories[u].push(norm_sq(&self.residuals[u]).sqrt());
        }
    }

    fn run(
        mut self,
        cfg: &PursuitConfig,
        mut observer: Option<&mut dyn FnMut(&IterationView<'_>)>,
    ) -> (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<Complex64>>, Vec<usize>) {
        let energy: f64 = self.signals.iter().flatten().map(|v| v * v).sum();
        let rank_tol = cfg.rank_tol * energy.sqrt();
        let limit = cfg.zeta.min(self.dict.n_atoms());
        if energy > 0.0 {
            while self.support.len() < limit {
                let Some((col, score)) = self.select() else { break };
                if score <= MIN_CORRELATION {
                    break;
                }
                self.add(col, rank_tol);
                if let Some(obs) = observer.as_mut() {
                    let view = IterationView {
                        iteration: self.support.len(),
                        support: &self.support,
                        residuals: &self.residuals,
                        engine: &self,
                    };
                    obs(&view);
                }
                if cfg.residual_tol > 0.0 {
                    let left: f64 = self.residuals.iter().map(|r| norm_sq(r)).sum();
                    if (left / energy).sqrt() < cfg.residual_tol {
                        break;
                    }
                }
            }
        }
        let coefficients = self.projections.iter().map(|z| self.qr.solve(z)).collect();
        let dependent = self.qr.dependent().map(|k| self.support[k]).collect();
        (self.histories, self.support, coefficients, dependent)
    }
}

fn check_signals(signals: &[Vec<f64>], dict: &Dictionary) -> Result<()> {
    if signals.is_empty() {
        return Err(Error::EmptyInput("joint pursuit needs at least one segment".into()));
    }
    for (u, x) in signals.iter().enumerate() {
        if x.len() != dict.m() {
            return Err(Error::Dim(format!(
                "segment {u} has length {} but the dictionary has M={}",
                x.len(),
                dict.m()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSegment(format!("segment {u} contains non-finite samples")));
        }
    }
    Ok(())
}

fn pursue(
    signals: &[Vec<f64>],
    dict: &Dictionary,
    cfg: &PursuitConfig,
    observer: Option<&mut dyn FnMut(&IterationView<'_>)>,
) -> Result<JointSparseCode> {
    check_signals(signals, dict)?;
    cfg.validate(dict.m())?;
    let (histories, support, coefficients, dependent) = Engine::new(dict, signals).run(cfg, observer);
    let codes = histories
        .into_iter()
        .zip(coefficients)
        .map(|(residual_norms, on_support)| {
            let mut code = SparseCode::empty(dict.m(), dict.levels());
            for (&col, a) in support.iter().zip(on_support) {
                code.coefficients[col] = a;
            }
            code.support = support.clone();
            code.residual_norms = residual_norms;
            code.dependent = dependent.clone();
            code
        })
        .collect();
    Ok(JointSparseCode {
        codes,
        shared_support: support,
    })
}

/// Decomposes one real segment.
pub fn comp_single(x: &[f64], dict: &Dictionary, cfg: &PursuitConfig) -> Result<SparseCode> {
    let signals = [x.to_vec()];
    let mut joint = pursue(&signals, dict, cfg, None)?;
    Ok(joint.codes.pop().expect("one code per segment"))
}

/// Decomposes several segments over one shared support.
pub fn comp_joint(xs: &[Vec<f64>], dict: &Dictionary, cfg: &PursuitConfig) -> Result<JointSparseCode> {
    pursue(xs, dict, cfg, None)
}

/// [`comp_joint`] with a callback after every iteration.
pub fn comp_joint_observed(
    xs: &[Vec<f64>],
    dict: &Dictionary,
    cfg: &PursuitConfig,
    observer: &mut dyn FnMut(&IterationView<'_>),
) -> Result<JointSparseCode> {
    pursue(xs, dict, cfg, Some(observer))
}

/// Minimum-norm-residual solution of `columns * a ~ x` over complex `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<Complex64>,
    /// Indices (into `columns`) of columns treated as dependent.
    pub dependent: Vec<usize>,
}

/// Least squares via orthogonal factorization. A column whose component
/// orthogonal to the preceding ones is shorter than `rank_tol * ||x||`
/// gets coefficient zero and is reported in `dependent`.
pub fn least_squares_complex(columns: &[&[Complex64]], x: &[f64], rank_tol: f64) -> Result<LeastSquares> {
    let m = x.len();
    if columns.len() > m {
        return Err(Error::Dim(format!("{} columns exceed {m} rows", columns.len())));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != m) {
        return Err(Error::Dim(format!("column of length {} against {m} rows", c.len())));
    }
    let tol = rank_tol * x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut qr = IncrementalQr::new(m);
    let mut z = Vec::new();
    for c in columns {
        if qr.push(c, 0..m, tol).is_some() {
            z.push(qr.last_q_dot_real(x));
        }
    }
    Ok(LeastSquares {
        coefficients: qr.solve(&z),
        dependent: qr.dependent().collect(),
    })
}

/// `D * a` including its imaginary part.
pub fn reconstruct_complex(dict: &Dictionary, code: &SparseCode) -> Result<Vec<Complex64>> {
    if code.coefficients.len() != dict.n_atoms() || code.m != dict.m() {
        return Err(Error::Dim(format!(
            "code with {} coefficients (M={}) against dictionary of {} columns (M={})",
            code.coefficients.len(),
            code.m,
            dict.n_atoms(),
            dict.m()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); dict.m()];
    for &col in &code.support {
        let a = code.coefficients[col];
        for (o, d) in out.iter_mut().zip(dict.column(col)) {
            *o += d * a;
        }
    }
    Ok(out)
}

/// Real part of `D * a`.
pub fn reconstruct(dict: &Dictionary, code: &SparseCode) -> Result<Vec<f64>> {
    Ok(reconstruct_complex(dict, code)?.into_iter().map(|z| z.re).collect())
}

#[cfg(test)]
mod tests;

//! Column-by-column thin QR of the selected sub-dictionary.
//!
//! Classical Gram-Schmidt with a second pass whenever the first one removes
//! more than `1 - 1/sqrt(2)` of the column's norm, which keeps `Q`
//! orthonormal to working precision. Adding a column costs `O(M * rank)`.

use num_complex::Complex64;

use super::kernel::dot_lanes;

const REORTH_RATIO: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub(crate) struct IncrementalQr {
    m: usize,
    /// Orthonormal columns, column-major.
    q: Vec<Complex64>,
    /// Column `k` of `R` holds `rank_at_push + 1` entries, the last being
    /// the diagonal.
    r_cols: Vec<Vec<Complex64>>,
    /// For every pushed column, its position among the independent columns.
    positions: Vec<Option<usize>>,
    swapped: Vec<f64>,
    work: Vec<Complex64>,
}

impl IncrementalQr {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            q: Vec::new(),
            r_cols: Vec::new(),
            positions: Vec::new(),
            swapped: vec![0.0; 2 * m],
            work: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    pub fn rank(&self) -> usize {
        self.r_cols.len()
    }

    pub fn q_column(&self, k: usize) -> &[Complex64] {
        &self.q[k * self.m..(k + 1) * self.m]
    }

    /// `Q^H w` restricted to rows `lo..hi` (where `w` may be nonzero).
    #[inline(always)]
    fn project(&mut self, w: &[Complex64], lo: usize, hi: usize, h: &mut [Complex64]) {
        for (i, z) in w[lo..hi].iter().enumerate() {
            self.swapped[2 * (lo + i)] = z.im;
            self.swapped[2 * (lo + i) + 1] = z.re;
        }
        let wf: &[f64] = bytemuck::cast_slice(&w[lo..hi]);
        let sw = &self.swapped[2 * lo..2 * hi];
        let qf: &[f64] = bytemuck::cast_slice(&self.q);
        for (k, hk) in h.iter_mut().enumerate() {
            let col = &qf[2 * (k * self.m + lo)..2 * (k * self.m + hi)];
            // conj(q).w = (qa wa + qb wb) + i (qa wb - qb wa)
            let [aa, bb, ab, ba] = dot_lanes(col, wf, sw);
            *hk = Complex64::new(aa + bb, ab - ba);
        }
    }

    #[inline(always)]
    fn subtract(&mut self, h: &[Complex64]) {
        let m = self.m;
        let qf: &[f64] = bytemuck::cast_slice(&self.q);
        let wf: &mut [f64] = bytemuck::cast_slice_mut(&mut self.work);
        for (k, hk) in h.iter().enumerate() {
            axpy_neg(&qf[2 * k * m..2 * (k + 1) * m], *hk, wf);
        }
    }

    /// Appends `col` (nonzero only in `rows`). Returns its position among
    /// the independent columns, or `None` when its component orthogonal to
    /// the current span is below `tol`.
    pub fn push(&mut self, col: &[Complex64], rows: std::ops::Range<usize>, tol: f64) -> Option<usize> {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the required CPU feature was detected at runtime.
                return unsafe { self.push_avx512(col, rows, tol) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                return unsafe { self.push_avx2(col, rows, tol) };
            }
        }
        self.push_generic(col, rows, tol)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    fn push_avx512(&mut self, col: &[Complex64], rows: std::ops::Range<usize>, tol: f64) -> Option<usize> {
        self.push_generic(col, rows, tol)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    fn push_avx2(&mut self, col: &[Complex64], rows: std::ops::Range<usize>, tol: f64) -> Option<usize> {
        self.push_generic(col, rows, tol)
    }

    #[inline(always)]
    fn push_generic(&mut self, col: &[Complex64], rows: std::ops::Range<usize>, tol: f64) -> Option<usize> {
        debug_assert_eq!(col.len(), self.m);
        let rank = self.rank();
        self.work.copy_from_slice(col);
        let col_norm = norm(col);

        let mut h = vec![Complex64::new(0.0, 0.0); rank];
        let work = std::mem::take(&mut self.work);
        self.project(&work, rows.start, rows.end, &mut h);
        self.work = work;
        self.subtract(&h);
        let mut rho = norm(&self.work);

        if rank > 0 && rho < REORTH_RATIO * col_norm {
            let mut h2 = vec![Complex64::new(0.0, 0.0); rank];
            let work = std::mem::take(&mut self.work);
            self.project(&work, 0, self.m, &mut h2);
            self.work = work;
            self.subtract(&h2);
            for (a, b) in h.iter_mut().zip(&h2) {
                *a += b;
            }
            rho = norm(&self.work);
        }

        if !(rho >= tol) || rho == 0.0 {
            self.positions.push(None);
            return None;
        }
        let inv = 1.0 / rho;
        self.q.extend(self.work.iter().map(|z| z * inv));
        h.push(Complex64::new(rho, 0.0));
        self.r_cols.push(h);
        self.positions.push(Some(rank));
        Some(rank)
    }

    /// `q_k^H x` for the newest independent column and a real vector.
    pub fn last_q_dot_real(&self, x: &[f64]) -> Complex64 {
        let q = self.q_column(self.rank() - 1);
        q.iter().zip(x).map(|(q, x)| q.conj() * x).sum()
    }

    /// Removes the newest orthonormal direction from `r`.
    pub fn deflate(&self, r: &mut [Complex64]) {
        let q = self.q_column(self.rank() - 1);
        let beta: Complex64 = q.iter().zip(r.iter()).map(|(q, r)| q.conj() * r).sum();
        axpy_neg(bytemuck::cast_slice(q), beta, bytemuck::cast_slice_mut(r));
    }

    /// Solves `R a = z` where `z[k] = q_k^H x`, then scatters the solution
    /// back over all pushed columns (zeros for dependent ones).
    pub fn solve(&self, z: &[Complex64]) -> Vec<Complex64> {
        let rank = self.rank();
        debug_assert_eq!(z.len(), rank);
        let mut a = z.to_vec();
        for k in (0..rank).rev() {
            a[k] /= self.r_cols[k][k];
            let ak = a[k];
            for (i, rik) in self.r_cols[k][..k].iter().enumerate() {
                a[i] -= rik * ak;
            }
        }
        self.positions
            .iter()
            .map(|p| p.map_or(Complex64::new(0.0, 0.0), |k| a[k]))
            .collect()
    }

    pub fn dependent(&self) -> impl Iterator<Item = usize> + '_ {
        self.positions.iter().enumerate().filter(|(_, p)| p.is_none()).map(|(i, _)| i)
    }
}

/// `w -= q * h` on interleaved complex slices.
#[inline(always)]
fn axpy_neg(q: &[f64], h: Complex64, w: &mut [f64]) {
    for (wc, qc) in w.chunks_exact_mut(2).zip(q.chunks_exact(2)) {
        wc[0] -= qc[0] * h.re - qc[1] * h.im;
        wc[1] -= qc[0] * h.im + qc[1] * h.re;
    }
}

#[inline(always)]
fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.re * z.re + z.im * z.im).sum::<f64>().sqrt()
}

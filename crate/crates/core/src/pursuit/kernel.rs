//! Correlation kernels for the pursuit loop.
//!
//! Complex vectors are handled as interleaved `[re, im, re, im, ..]` f64
//! slices. For `d = a + ib` and `z = u + iv`, one pass over `d` against `z`
//! and against the swapped `[v, u, ..]` yields the four real sums
//! `au, bv, av, bu`, which give both `conj(d).z` and `d.z`.
//!
//! Inside one block `(j, t)` every atom is the same real window times
//! `exp(-i 2 pi f (m - m0) / 2^j)`, and that phase only depends on
//! `m mod 2^j`. The residual is therefore folded once per block into `2^j`
//! bins weighted by the window, and all `2^j` correlations follow from a
//! `2^j`-point DFT of the folded bins. The DFT row for `f` is the exact
//! conjugate of the row for `2^j - f`, so each pair of rows costs one pass.
//!
//! Lane accumulation order is fixed in the generic code, so the SIMD builds
//! below produce bit-identical results to the portable one.

use num_complex::Complex64;

use crate::dictionary::{phase_table, Dictionary};

const LANES: usize = 16;

/// `[sum_even(d*x), sum_odd(d*x), sum_even(d*y), sum_odd(d*y)]` over two
/// equal-length interleaved slices; `d.len()` must be even.
#[inline(always)]
pub(crate) fn dot_lanes(d: &[f64], x: &[f64], y: &[f64]) -> [f64; 4] {
    debug_assert!(d.len() == x.len() && d.len() == y.len() && d.len().is_multiple_of(2));
    let mut ax = [0.0f64; LANES];
    let mut ay = [0.0f64; LANES];
    let split = d.len() - d.len() % LANES;
    for ((dc, xc), yc) in d[..split]
        .chunks_exact(LANES)
        .zip(x[..split].chunks_exact(LANES))
        .zip(y[..split].chunks_exact(LANES))
    {
        for i in 0..LANES {
            ax[i] += dc[i] * xc[i];
            ay[i] += dc[i] * yc[i];
        }
    }
    let mut out = [0.0f64; 4];
    for i in (0..LANES).step_by(2) {
        out[0] += ax[i];
        out[1] += ax[i + 1];
        out[2] += ay[i];
        out[3] += ay[i + 1];
    }
    for k in (split..d.len()).step_by(2) {
        out[0] += d[k] * x[k];
        out[1] += d[k + 1] * x[k + 1];
        out[2] += d[k] * y[k];
        out[3] += d[k + 1] * y[k + 1];
    }
    out
}

/// `conj(d) . z` and `d . z` from the lane sums of [`dot_lanes`] with
/// `x = z` and `y = swap(z)`.
#[inline(always)]
pub(crate) fn pair_products(s: [f64; 4]) -> (Complex64, Complex64) {
    let [au, bv, av, bu] = s;
    (Complex64::new(au + bv, av - bu), Complex64::new(au - bv, av + bu))
}

struct LevelPlan {
    n: usize,
    base: usize,
    /// Rows `f = 0..=n/2` of the phase matrix, each `2n` interleaved values.
    dft: Vec<f64>,
    /// Per translation: first row of the window and offset into `window`.
    spans: Vec<(usize, usize, usize)>,
    window: Vec<f64>,
}

/// Everything the scorer needs, derived once from a dictionary.
pub(crate) struct ScorePlan {
    levels: Vec<LevelPlan>,
    /// `window_norm / norm` per column, so that folded correlations land on
    /// the stored unit-norm columns.
    scale: Vec<f64>,
    fold: Vec<f64>,
    swapped: Vec<f64>,
}

impl ScorePlan {
    pub fn new(dict: &Dictionary) -> Self {
        let m = dict.m();
        let raw = dict.raw_norms();
        let mut scale = vec![0.0; dict.n_atoms()];
        let mut levels = Vec::with_capacity(dict.levels() as usize);
        for j in 1..=dict.levels() {
            let n = 1usize << j;
            let base = dict.block(j).start;
            let phase = phase_table(n);
            let mut dft = Vec::with_capacity((n / 2 + 1) * 2 * n);
            for f in 0..=n / 2 {
                for k in 0..n {
                    let z = phase[(f * k) % n];
                    dft.extend([z.re, z.im]);
                }
            }
            let mut spans = Vec::with_capacity(m / n);
            let mut window = Vec::new();
            for t in 0..m / n {
                let first = base + t * n;
                let rows = dict.support(first);
                spans.push((rows.start, rows.end, window.len()));
                window.extend(dict.column(first)[rows].iter().map(|z| z.re));
                for f in 0..n {
                    scale[first + f] = raw[first] / raw[first + f];
                }
            }
            levels.push(LevelPlan {
                n,
                base,
                dft,
                spans,
                window,
            });
        }
        Self {
            levels,
            scale,
            fold: vec![0.0; m],
            swapped: vec![0.0; m],
        }
    }
}

#[inline(always)]
fn magnitude(z: Complex64) -> f64 {
    (z.re * z.re + z.im * z.im).sqrt()
}

#[inline(always)]
fn scores_generic(plan: &mut ScorePlan, residuals: &[Vec<Complex64>], scores: &mut [f64]) {
    scores.iter_mut().for_each(|s| *s = 0.0);
    let ScorePlan {
        levels,
        scale,
        fold,
        swapped,
    } = plan;
    for level in levels.iter() {
        let n = level.n;
        let mask = n - 1;
        let z = &mut fold[..2 * n];
        let zs = &mut swapped[..2 * n];
        for (t, &(lo, hi, off)) in level.spans.iter().enumerate() {
            let w = &level.window[off..off + hi - lo];
            let first = level.base + t * n;
            for r in residuals {
                z.iter_mut().for_each(|v| *v = 0.0);
                for (i, (wi, ri)) in w.iter().zip(&r[lo..hi]).enumerate() {
                    let k = (lo + i) & mask;
                    z[2 * k] += wi * ri.re;
                    z[2 * k + 1] += wi * ri.im;
                }
                for k in 0..n {
                    zs[2 * k] = z[2 * k + 1];
                    zs[2 * k + 1] = z[2 * k];
                }
                for f in 0..=n / 2 {
                    let row = &level.dft[2 * n * f..2 * n * (f + 1)];
                    let (own, conj) = pair_products(dot_lanes(row, z, zs));
                    scores[first + f] += magnitude(own) * scale[first + f];
                    let partner = (n - f) % n;
                    if partner != f {
                        scores[first + partner] += magnitude(conj) * scale[first + partner];
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn scores_avx512(plan: &mut ScorePlan, residuals: &[Vec<Complex64>], scores: &mut [f64]) {
    scores_generic(plan, residuals, scores)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn scores_avx2(plan: &mut ScorePlan, residuals: &[Vec<Complex64>], scores: &mut [f64]) {
    scores_generic(plan, residuals, scores)
}

/// `scores[i] = sum_u |d_i^H r_u|` for every dictionary column.
pub(crate) fn correlation_scores(plan: &mut ScorePlan, residuals: &[Vec<Complex64>], scores: &mut [f64]) {
    debug_assert_eq!(scores.len(), plan.scale.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            unsafe { scores_avx512(plan, residuals, scores) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            unsafe { scores_avx2(plan, residuals, scores) };
            return;
        }
    }
    scores_generic(plan, residuals, scores)
}

#[cfg(test)]
pub(crate) fn correlation_scores_portable(plan: &mut ScorePlan, residuals: &[Vec<Complex64>], scores: &mut [f64]) {
    scores_generic(plan, residuals, scores)
}

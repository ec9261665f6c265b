use super::*;
use crate::dictionary::{gabor_atom, AtomParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn dict512() -> &'static Dictionary {
    static D: OnceLock<Dictionary> = OnceLock::new();
    D.get_or_init(|| Dictionary::build(512).unwrap())
}

fn real_part(v: &[Complex64], scale: Complex64) -> Vec<f64> {
    v.iter().map(|z| (z * scale).re).collect()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn single_real_atom_is_recovered_in_one_step() {
    let d = dict512();
    let p = AtomParams::new(3, 4, 0);
    let col = d.column_of(p).unwrap();
    let x = real_part(&gabor_atom(p, 512).unwrap(), Complex64::new(1.0, 0.0));
    let code = comp_single(&x, d, &PursuitConfig::with_zeta(1)).unwrap();
    assert_eq!(code.support, vec![col]);
    let a = code.coefficients[col];
    assert!((a.re - d.raw_norms()[col]).abs() < 1e-10 && a.im.abs() < 1e-12, "{a}");
    assert!(code.residual_norms[0] < 1e-10);

    let xr = reconstruct(d, &code).unwrap();
    let err = xr.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10);
}

#[test]
fn complex_atom_pulls_in_its_conjugate_partner() {
    let d = dict512();
    let p = AtomParams::new(5, 7, 5);
    let c = Complex64::new(0.7, -1.3);
    let x = real_part(&gabor_atom(p, 512).unwrap(), c);
    let code = comp_single(&x, d, &PursuitConfig::with_zeta(2)).unwrap();
    let mut expected = vec![d.column_of(p).unwrap(), d.column_of(p.conjugate_partner()).unwrap()];
    expected.sort();
    let mut got = code.support.clone();
    got.sort();
    assert_eq!(got, expected);
    assert!(*code.residual_norms.last().unwrap() < 1e-10);
}

#[test]
fn three_separated_real_atoms() {
    let d = dict512();
    let atoms = [AtomParams::new(2, 10, 0), AtomParams::new(4, 20, 0), AtomParams::new(3, 50, 4)];
    let cols: Vec<usize> = atoms.iter().map(|p| d.column_of(*p).unwrap()).collect();
    for a in 0..3 {
        for b in a + 1..3 {
            assert!(inner(d.column(cols[a]), d.column(cols[b])).norm() < 0.05);
        }
    }
    let amps = [1.0, -0.8, 1.2];
    let mut x = vec![0.0; 512];
    for (p, amp) in atoms.iter().zip(amps) {
        for (xi, z) in x.iter_mut().zip(gabor_atom(*p, 512).unwrap()) {
            *xi += amp * z.re;
        }
    }
    let code = comp_single(&x, d, &PursuitConfig::with_zeta(3)).unwrap();
    let mut got = code.support.clone();
    got.sort();
    let mut want = cols.clone();
    want.sort();
    assert_eq!(got, want);
    let xr = reconstruct(d, &code).unwrap();
    let rel = norm(&xr.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&x);
    assert!(rel < 1e-8, "{rel}");
    for (col, amp) in cols.iter().zip(amps) {
        let a = code.coefficients[*col];
        assert!((a.re - amp * d.raw_norms()[*col]).abs() < 1e-8 * d.raw_norms()[*col]);
    }
}

#[test]
fn zero_signal_gives_empty_code() {
    let d = Dictionary::build(16).unwrap();
    let code = comp_single(&[0.0; 16], &d, &PursuitConfig::with_zeta(5)).unwrap();
    assert!(code.support.is_empty());
    assert!(code.residual_norms.is_empty());
    assert!(code.coefficients.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    assert_eq!(reconstruct(&d, &code).unwrap(), vec![0.0; 16]);
}

#[test]
fn dimension_and_config_errors() {
    let d = Dictionary::build(16).unwrap();
    assert!(matches!(comp_single(&[1.0; 15], &d, &PursuitConfig::with_zeta(2)), Err(Error::Dim(_))));
    assert!(matches!(comp_joint(&[], &d, &PursuitConfig::with_zeta(2)), Err(Error::EmptyInput(_))));
    assert!(matches!(
        comp_joint(&[vec![1.0; 16], vec![1.0; 8]], &d, &PursuitConfig::with_zeta(2)),
        Err(Error::Dim(_))
    ));
    assert!(comp_single(&[1.0; 16], &d, &PursuitConfig::with_zeta(0)).is_err());
    assert!(comp_single(&[1.0; 16], &d, &PursuitConfig::with_zeta(17)).is_err());
    let other = Dictionary::build(32).unwrap();
    let code = comp_single(&[1.0; 16], &d, &PursuitConfig::with_zeta(2)).unwrap();
    assert!(matches!(reconstruct(&other, &code), Err(Error::Dim(_))));
}

fn random_signal(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn joint_with_one_segment_equals_single() {
    let d = Dictionary::build(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_signal(&mut rng, 64);
    let cfg = PursuitConfig::with_zeta(40);
    let single = comp_single(&x, &d, &cfg).unwrap();
    let joint = comp_joint(std::slice::from_ref(&x), &d, &cfg).unwrap();
    assert_eq!(joint.shared_support, single.support);
    assert_eq!(joint.codes[0], single);
}

#[test]
fn joint_is_linear_in_a_scaled_copy() {
    let d = Dictionary::build(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x1 = random_signal(&mut rng, 64);
    let x2: Vec<f64> = x1.iter().map(|v| 2.0 * v).collect();
    let cfg = PursuitConfig::with_zeta(30);
    let single = comp_single(&x1, &d, &cfg).unwrap();
    let joint = comp_joint(&[x1, x2], &d, &cfg).unwrap();
    assert_eq!(joint.shared_support, single.support);
    for (a, b) in joint.codes[0].coefficients.iter().zip(&joint.codes[1].coefficients) {
        assert!((b - a * 2.0).norm() < 1e-10);
    }
}

#[test]
fn joint_collects_atoms_from_both_segments() {
    let d = dict512();
    let pa = AtomParams::new(4, 3, 0);
    let pb = AtomParams::new(4, 25, 0);
    let xa = real_part(&gabor_atom(pa, 512).unwrap(), Complex64::new(1.0, 0.0));
    let xb = real_part(&gabor_atom(pb, 512).unwrap(), Complex64::new(1.0, 0.0));
    let joint = comp_joint(&[xa, xb], d, &PursuitConfig::with_zeta(2)).unwrap();
    let mut got = joint.shared_support.clone();
    got.sort();
    assert_eq!(got, vec![d.column_of(pa).unwrap(), d.column_of(pb).unwrap()]);
    for code in &joint.codes {
        assert_eq!(code.support, joint.shared_support);
    }
}

#[test]
fn scaling_one_segment_with_others_zero_scales_only_its_code() {
    let d = Dictionary::build(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_signal(&mut rng, 32);
    let cfg = PursuitConfig::with_zeta(12);
    let base = comp_joint(&[x.clone(), vec![0.0; 32]], &d, &cfg).unwrap();
    let scaled = comp_joint(&[x.iter().map(|v| -3.0 * v).collect(), vec![0.0; 32]], &d, &cfg).unwrap();
    assert_eq!(base.shared_support, scaled.shared_support);
    for (a, b) in base.codes[0].coefficients.iter().zip(&scaled.codes[0].coefficients) {
        assert!((b - a * -3.0).norm() < 1e-10);
    }
    assert!(scaled.codes[1].coefficients.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn least_squares_examples() {
    let d = Dictionary::build(32).unwrap();
    let real_col = d.column_of(AtomParams::new(2, 3, 0)).unwrap();
    let col = d.column(real_col);
    let x: Vec<f64> = col.iter().map(|z| 3.0 * z.re).collect();
    let ls = least_squares_complex(&[col], &x, 1e-10).unwrap();
    assert!((ls.coefficients[0] - Complex64::new(3.0, 0.0)).norm() < 1e-12);

    // two orthonormal real columns built from unit vectors
    let mut e1 = vec![Complex64::new(0.0, 0.0); 8];
    let mut e2 = e1.clone();
    e1[1] = Complex64::new(1.0, 0.0);
    e2[5] = Complex64::new(1.0, 0.0);
    let mut x = vec![0.0; 8];
    x[1] = 2.0;
    x[5] = -1.0;
    let ls = least_squares_complex(&[&e1, &e2], &x, 1e-10).unwrap();
    assert!((ls.coefficients[0] - Complex64::new(2.0, 0.0)).norm() < 1e-15);
    assert!((ls.coefficients[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn least_squares_residual_is_orthogonal_to_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cols: Vec<Vec<Complex64>> = (0..5)
        .map(|_| (0..32).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
        .collect();
    let x = random_signal(&mut rng, 32);
    let refs: Vec<&[Complex64]> = cols.iter().map(|c| c.as_slice()).collect();
    let ls = least_squares_complex(&refs, &x, 1e-10).unwrap();
    let mut r: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for (c, a) in cols.iter().zip(&ls.coefficients) {
        for (ri, ci) in r.iter_mut().zip(c) {
            *ri -= ci * a;
        }
    }
    for c in &cols {
        assert!(inner(c, &r).norm() < 1e-10);
    }
}

#[test]
fn least_squares_flags_dependent_column() {
    let d = Dictionary::build(16).unwrap();
    let c0 = d.column(3).to_vec();
    let doubled: Vec<Complex64> = c0.iter().map(|z| z * 2.0).collect();
    let x: Vec<f64> = c0.iter().map(|z| z.re).collect();
    let ls = least_squares_complex(&[&c0, &doubled], &x, 1e-10).unwrap();
    assert_eq!(ls.dependent, vec![1]);
    assert_eq!(ls.coefficients[1], Complex64::new(0.0, 0.0));
    let many: Vec<&[Complex64]> = vec![c0.as_slice(); 17];
    assert!(least_squares_complex(&many, &x, 1e-10).is_err());
}

#[test]
fn residual_tolerance_stops_early() {
    let d = Dictionary::build(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_signal(&mut rng, 64);
    let cfg = PursuitConfig {
        zeta: 63,
        residual_tol: 0.5,
        ..PursuitConfig::default()
    };
    let code = comp_single(&x, &d, &cfg).unwrap();
    let last = *code.residual_norms.last().unwrap();
    assert!(last / norm(&x) < 0.5);
    assert!(code.residual_norms[code.residual_norms.len() - 2] / norm(&x) >= 0.5);
    assert!(code.support.len() < 63);
}

#[test]
fn observer_sees_orthogonal_residuals() {
    let d = Dictionary::build(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_signal(&mut rng, 64);
    let mut worst = 0.0f64;
    let mut seen = 0;
    comp_joint_observed(std::slice::from_ref(&x), &d, &PursuitConfig::with_zeta(63), &mut |view| {
        seen += 1;
        assert_eq!(view.iteration, view.support.len());
        for &i in view.support {
            worst = worst.max(inner(d.column(i), &view.residuals[0]).norm());
        }
        assert_eq!(view.coefficients(0).len(), view.support.len());
    })
    .unwrap();
    assert_eq!(seen, 63);
    assert!(worst < 1e-9, "{worst}");
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn dict32() -> &'static Dictionary {
        static D: OnceLock<Dictionary> = OnceLock::new();
        D.get_or_init(|| Dictionary::build(32).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn residuals_never_grow_and_support_is_unique(x in proptest::collection::vec(-1f64..1.0, 32), zeta in 1usize..=32) {
            let code = comp_single(&x, dict32(), &PursuitConfig::with_zeta(zeta)).unwrap();
            prop_assert!(code.support.len() <= zeta);
            let mut s = code.support.clone();
            s.sort();
            s.dedup();
            prop_assert_eq!(s.len(), code.support.len());
            let mut prev = norm(&x);
            for r in &code.residual_norms {
                prop_assert!(*r <= prev * (1.0 + 1e-12) + 1e-15);
                prev = *r;
            }
            for (i, a) in code.coefficients.iter().enumerate() {
                if !code.support.contains(&i) {
                    prop_assert_eq!(*a, Complex64::new(0.0, 0.0));
                }
            }
        }
    }
}

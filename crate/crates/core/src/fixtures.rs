//! Named test groups.
//!
//! * `F1`: the cyclic group generated by `diag(e^t, 1, e^{−t})` in `SL(3)`.
//! * `F2`: a Schottky group in `SL(2)` with hyperbolic generators of
//!   translation lengths 3 and 3.5 along perpendicular axes, and its image
//!   in `SO(2,1) ⊂ SL(3)` under the adjoint representation.
//! * `F3`: a Zariski-dense ping-pong pair in `SL(3)` built from strongly
//!   regular diagonal matrices conjugated by fixed rotations.

use nalgebra::{Rotation3, Vector3};

use crate::cartan::{self, RootSubset};
use crate::error::{Error, Result};
use crate::flags::{self, PartialFlag};
use crate::linalg::{self, Mat};
use crate::orbit::{GeneratorSet, WordPolicy};

pub const FIXTURE_NAMES: [&str; 5] = ["F1", "F1-wide", "F2-sl2", "F2", "F3"];

/// `⟨diag(e^t, 1, e^{−t})⟩`.
pub fn cyclic(t: f64) -> GeneratorSet {
    GeneratorSet::new(
        vec![("a".into(), linalg::exp_diag(&[t, 0.0, -t]))],
        WordPolicy::FreeReduced,
    )
    .expect("diagonal generator is unimodular")
}

pub fn f1() -> GeneratorSet {
    cyclic(1.0)
}

fn rot2(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Generators of the `SL(2)` Schottky group. The axis of `a` is the
/// imaginary axis, the axis of `b` is the geodesic from −1 to 1, and they
/// cross at `i`.
pub fn f2_sl2_matrices() -> (Mat, Mat) {
    let a = linalg::exp_diag(&[1.5, -1.5]);
    let k = rot2(std::f64::consts::FRAC_PI_4);
    let b = linalg::normalize_det(&(&k * linalg::exp_diag(&[1.75, -1.75]) * k.transpose()));
    (a, b)
}

pub fn f2_sl2() -> GeneratorSet {
    let (a, b) = f2_sl2_matrices();
    GeneratorSet::new(
        vec![("a".into(), a), ("b".into(), b)],
        WordPolicy::FreeReduced,
    )
    .expect("fixture generators are unimodular")
}

fn sl2_basis() -> [Mat; 3] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    [
        Mat::from_row_slice(2, 2, &[r, 0.0, 0.0, -r]),
        Mat::from_row_slice(2, 2, &[0.0, r, r, 0.0]),
        Mat::from_row_slice(2, 2, &[0.0, r, -r, 0.0]),
    ]
}

/// Adjoint representation of `SL(2)` in the orthonormal basis
/// `H/√2, (E+F)/√2, (E−F)/√2` of `sl(2)`, where the trace form reads
/// `x² + y² − z²`.
pub fn adjoint_so21(g: &Mat) -> Result<Mat> {
    if g.nrows() != 2 || g.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: g.nrows(),
        });
    }
    let g_inv = linalg::inverse(g)?;
    let basis = sl2_basis();
    let signs = [1.0, 1.0, -1.0];
    Ok(Mat::from_fn(3, 3, |r, c| {
        let img = g * &basis[c] * &g_inv;
        signs[r] * (&basis[r] * img).trace()
    }))
}

/// The quadratic form preserved by the adjoint image.
pub fn so21_form() -> Mat {
    Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0]))
}

pub fn f2_so21() -> GeneratorSet {
    let (a, b) = f2_sl2_matrices();
    GeneratorSet::new(
        vec![
            ("a".into(), adjoint_so21(&a).expect("2x2 input")),
            ("b".into(), adjoint_so21(&b).expect("2x2 input")),
        ],
        WordPolicy::FreeReduced,
    )
    .expect("adjoint image is unimodular")
}

/// Hyperbolic displacement `d(i, g·i)` of an `SL(2)` element.
pub fn sl2_displacement(g: &Mat) -> f64 {
    let s = g.iter().map(|x| x * x).sum::<f64>();
    (0.5 * s).acosh()
}

fn euler(a: f64, b: f64, c: f64) -> Mat {
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), a)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), b)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), c);
    Mat::from_column_slice(3, 3, r.matrix().as_slice())
}

pub const F3_SPECTRUM_A: [f64; 3] = [2.5, 0.3, -2.8];
pub const F3_SPECTRUM_B: [f64; 3] = [2.8, -0.3, -2.5];

pub fn f3_matrices() -> (Mat, Mat) {
    f3_like(&F3_SPECTRUM_A, &F3_SPECTRUM_B)
}

/// The two `F3` rotations applied to other diagonal parts.
pub fn f3_like(spec_a: &[f64], spec_b: &[f64]) -> (Mat, Mat) {
    let k1 = euler(0.3, 1.1, -0.7);
    let k2 = euler(1.9, 0.6, 2.4);
    let a = linalg::normalize_det(&(&k1 * linalg::exp_diag(spec_a) * k1.transpose()));
    let b = linalg::normalize_det(&(&k2 * linalg::exp_diag(spec_b) * k2.transpose()));
    (a, b)
}

/// Attracting and repelling full flags of a loxodromic element, read off
/// from high powers.
pub fn attracting_repelling(g: &Mat) -> Result<(PartialFlag, PartialFlag)> {
    let full = RootSubset::full(g.nrows());
    let g_inv = linalg::inverse(g)?;
    let (mut p, mut p_inv) = (g.clone(), g_inv.clone());
    for _ in 0..3 {
        p = &p * &p;
        p_inv = &p_inv * &p_inv;
    }
    let plus = flags::u_theta_with_inverse(&p, &p_inv, &full, 1e-3)?;
    let minus = flags::u_theta_with_inverse(&p_inv, &p, &full, 1e-3)?;
    Ok((plus, minus))
}

/// Generator set of `F3`, after checking that both generators are
/// loxodromic with root gaps at least 1 and that the attracting flag of
/// each letter is transverse to the repelling flag of every letter other
/// than its inverse.
pub fn f3() -> Result<GeneratorSet> {
    let (a, b) = f3_matrices();
    let gens = GeneratorSet::new(
        vec![("a".into(), a), ("b".into(), b)],
        WordPolicy::FreeReduced,
    )?;
    verify_ping_pong_data(&gens, 1.0)?;
    Ok(gens)
}

pub fn verify_ping_pong_data(gens: &GeneratorSet, min_gap: f64) -> Result<()> {
    let mut attracting = Vec::new();
    let mut repelling = Vec::new();
    for l in 0..gens.num_letters() {
        let g = gens.letter(l);
        let lambda =
            cartan::jordan_projection_with_inverse(g, gens.letter(gens.inverse_letter(l)))?;
        for j in 1..gens.dim() {
            if cartan::root_eval(j, &lambda)? < min_gap {
                return Err(Error::DegenerateGap(j));
            }
        }
        let (p, m) = attracting_repelling(g)?;
        attracting.push(p);
        repelling.push(m);
    }
    for (i, p) in attracting.iter().enumerate() {
        for (j, m) in repelling.iter().enumerate() {
            if i != gens.inverse_letter(j) && !flags::transverse(p, m) {
                return Err(Error::InvalidInput(format!(
                    "letters {i} and {j} fail transversality"
                )));
            }
        }
    }
    Ok(())
}

/// Look a fixture up by name.
pub fn by_name(name: &str) -> Result<GeneratorSet> {
    match name {
        "F1" | "cyclic" => Ok(f1()),
        "F1-wide" => Ok(cyclic(2.0)),
        "F2-sl2" => Ok(f2_sl2()),
        "F2" | "F2-so21" => Ok(f2_so21()),
        "F3" => f3(),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_is_a_homomorphism_into_so21() {
        let (a, b) = f2_sl2_matrices();
        let q = so21_form();
        for g in [&a, &b] {
            let ad = adjoint_so21(g).unwrap();
            assert!((ad.determinant() - 1.0).abs() < 1e-9);
            assert!(linalg::max_abs_diff(&(ad.transpose() * &q * &ad), &q) < 1e-9);
            // time orientation preserved
            assert!(ad[(2, 2)] > 0.0);
        }
        let lhs = adjoint_so21(&(&a * &b)).unwrap();
        let rhs = adjoint_so21(&a).unwrap() * adjoint_so21(&b).unwrap();
        assert!(linalg::max_abs_diff(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn f2_translation_lengths() {
        let (a, b) = f2_sl2_matrices();
        assert!((2.0 * (a.trace() / 2.0).acosh() - 3.0).abs() < 1e-12);
        assert!((2.0 * (b.trace() / 2.0).acosh() - 3.5).abs() < 1e-12);
        // axes cross at i: both displacements of i equal the translation length
        assert!((sl2_displacement(&a) - 3.0).abs() < 1e-12);
        assert!((sl2_displacement(&b) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn phi_h_of_adjoint_is_displacement() {
        let (a, b) = f2_sl2_matrices();
        let g = &a * &b * &a.try_inverse().unwrap() * &b;
        let ad = adjoint_so21(&g).unwrap();
        let ad_inv = adjoint_so21(&g.clone().try_inverse().unwrap()).unwrap();
        let k = cartan::cartan_projection_with_inverse(&ad, &ad_inv).unwrap();
        let phi_h = 0.5 * (k.0[0] - k.0[2]);
        assert!((phi_h - sl2_displacement(&g)).abs() < 1e-9);
    }

    #[test]
    fn f3_loads() {
        let g = f3().unwrap();
        assert_eq!(g.dim(), 3);
        for name in FIXTURE_NAMES {
            assert!(by_name(name).is_ok());
        }
        assert!(matches!(by_name("F9"), Err(Error::UnknownFixture(_))));
    }
}

//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

const JACOBI_MAX_SWEEPS: usize = 80;
const JACOBI_TOL: f64 = 4.0 * f64::EPSILON;

/// Singular decomposition with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub v_t: Mat,
}

/// One-sided Jacobi SVD. Unlike bidiagonalisation it keeps the dominant
/// singular triplets accurate for the strongly graded products that long
/// words produce, where singular values span dozens of orders of magnitude.
pub fn svd_sorted(m: &Mat) -> Result<SortedSvd> {
    let (rows, n) = m.shape();
    if rows != n {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: n,
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularDecompositionFailure);
    }
    let mut a = m.clone();
    let mut v = Mat::identity(n, n);
    let mut converged = n < 2;
    // columns below rounding level of the whole matrix carry no information
    let floor = (f64::EPSILON * m.norm()).powi(2);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0
                    || alpha.min(beta) <= floor
                    || gamma.abs() <= JACOBI_TOL * (alpha.sqrt() * beta.sqrt())
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..n {
                        let (x, y) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SingularDecompositionFailure);
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u = Mat::from_fn(n, n, |r, c| {
        let s = norms[order[c]];
        if s > 0.0 {
            a[(r, order[c])] / s
        } else {
            0.0
        }
    });
    // columns belonging to vanishing singular values get completed
    if sigma.contains(&0.0) {
        let k = sigma.iter().take_while(|&&s| s > 0.0).count();
        u = complete_frame(&u.columns(0, k).into_owned());
    }
    let v_t = Mat::from_fn(n, n, |r, c| v[(c, order[r])]);
    Ok(SortedSvd { u, sigma, v_t })
}

pub fn singular_values_desc(m: &Mat) -> Result<Vec<f64>> {
    Ok(svd_sorted(m)?.sigma)
}

/// Operator norm. Relative accuracy holds even when the matrix is badly
/// conditioned, which is what the exterior-power routes rely on.
pub fn top_singular_value(m: &Mat) -> Result<f64> {
    Ok(singular_values_desc(m)?[0])
}

/// Spectral radius via the real Schur form.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    let schur = m
        .clone()
        .try_schur(1e-15, 100_000)
        .ok_or(Error::EigenFailure)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// All `k`-element subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// The `k`-th exterior power of `m` in the basis of lexicographically ordered
/// wedge monomials. Orthogonal matrices map to orthogonal matrices, so
/// `σ₁(∧ᵏm) = σ₁(m)⋯σ_k(m)`.
pub fn compound(m: &Mat, k: usize) -> Mat {
    let n = m.nrows();
    if k == 1 {
        return m.clone();
    }
    let sets = subsets(n, k);
    let dim = sets.len();
    let mut out = Mat::zeros(dim, dim);
    for (r, rows) in sets.iter().enumerate() {
        for (c, cols) in sets.iter().enumerate() {
            let minor = Mat::from_fn(k, k, |i, j| m[(rows[i], cols[j])]);
            out[(r, c)] = minor.determinant();
        }
    }
    out
}

/// QR factorization normalized so that `R` has a nonnegative diagonal.
pub fn qr_positive(m: &Mat) -> (Mat, Mat) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < 0.0 {
            for j in 0..r.ncols() {
                r[(i, j)] = -r[(i, j)];
            }
            for j in 0..q.nrows() {
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    (q, r)
}

/// Log-moduli of the successive Gram–Schmidt norms of the columns of `m`.
/// Equal to `log |R_ii|` of a QR factorization, computed without forming `Q`.
pub fn gram_schmidt_log_norms(m: &Mat) -> Vec<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m.ncols());
    let mut out = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let n = v.norm();
        out.push(n.ln());
        if n > 0.0 {
            v /= n;
        }
        basis.push(v);
    }
    out
}

/// Orthonormalize the columns of `cols` and complete them to an orthonormal
/// basis of `R^d`, adding standard basis vectors in index order.
pub fn complete_frame(cols: &Mat) -> Mat {
    let d = cols.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
    let push = |basis: &mut Vec<DVector<f64>>, mut v: DVector<f64>| -> bool {
        for _ in 0..2 {
            for b in basis.iter() {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            basis.push(v / n);
            true
        } else {
            false
        }
    };
    for j in 0..cols.ncols() {
        push(&mut basis, cols.column(j).into_owned());
    }
    let mut e = 0;
    while basis.len() < d && e < d {
        let mut v = DVector::zeros(d);
        v[e] = 1.0;
        push(&mut basis, v);
        e += 1;
    }
    Mat::from_columns(&basis)
}

/// Flip each column so that its entry of largest magnitude (first one on
/// ties) is positive.
pub fn canonicalize_signs(frame: &mut Mat) {
    for j in 0..frame.ncols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..frame.nrows() {
            let a = frame[(i, j)].abs();
            if a > best_abs + 1e-12 {
                best_abs = a;
                best = i;
            }
        }
        if frame[(best, j)] < 0.0 {
            for i in 0..frame.nrows() {
                frame[(i, j)] = -frame[(i, j)];
            }
        }
    }
}

/// Orthogonal projector onto the span of the first `j` columns of an
/// orthonormal frame.
pub fn span_projector(frame: &Mat, j: usize) -> Mat {
    let f = frame.columns(0, j);
    f * f.transpose()
}

pub fn exp_diag(h: &[f64]) -> Mat {
    Mat::from_diagonal(&DVector::from_iterator(h.len(), h.iter().map(|t| t.exp())))
}

/// Haar-distributed element of `SO(d)`.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Mat {
    let g = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (mut q, _) = qr_positive(&g);
    if q.determinant() < 0.0 {
        for i in 0..d {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}

/// Gaussian matrix rescaled to determinant one.
pub fn random_sl<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Mat {
    loop {
        let mut g = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let det = g.determinant();
        if det.abs() < 1e-3 {
            continue;
        }
        if det < 0.0 {
            for j in 0..d {
                g[(0, j)] = -g[(0, j)];
            }
        }
        let scale = det.abs().powf(-1.0 / d as f64);
        return g * scale;
    }
}

/// `k · diag(exp(h)) · ℓ` with `k, ℓ` random rotations: an element of
/// `SL(d)` with prescribed Cartan projection `h` (when `h` is sorted).
pub fn random_with_cartan<R: Rng + ?Sized>(rng: &mut R, h: &[f64]) -> Mat {
    let d = h.len();
    let k = random_rotation(rng, d);
    let l = random_rotation(rng, d);
    k * exp_diag(h) * l
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Inverse of a unimodular matrix; falls back to an error on singularity.
/// Determinant through a fully pivoted LU factorisation; stays accurate
/// for well-scaled but strongly anisotropic matrices.
pub fn det(m: &Mat) -> f64 {
    m.clone().full_piv_lu().determinant()
}

/// Rescale to determinant one, absorbing rounding in products such as
/// `k D kᵀ` with a badly conditioned `D`.
pub fn normalize_det(m: &Mat) -> Mat {
    let det = det(m);
    m * det.abs().powf(-1.0 / m.nrows() as f64)
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("matrix is singular".into()))
}

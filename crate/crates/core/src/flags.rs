//! Partial flag manifolds `F_θ = SL(d)/P_θ`.
//!
//! A flag is stored as an orthonormal frame `k ∈ O(d)` with `x = kP_θ`; the
//! nested spans of the first `j` columns, `j ∈ θ`, carry the meaning. Frames
//! are sign-canonicalised column by column, so they are representatives of
//! the quotient by `M`, the diagonal `±1` matrices.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cartan::{self, CartanVector, RootSubset};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::tol;

#[derive(Clone, Debug)]
pub struct PartialFlag {
    theta: RootSubset,
    frame: Mat,
}

impl PartialFlag {
    /// Build a flag from the leading columns of `cols`; the frame is
    /// orthonormalised in column order and completed by the orthogonal
    /// complement in index order.
    pub fn from_columns(theta: RootSubset, cols: &Mat) -> Result<Self> {
        if cols.nrows() != theta.dim() {
            return Err(Error::DimensionMismatch {
                expected: theta.dim(),
                got: cols.nrows(),
            });
        }
        let mut frame = linalg::complete_frame(cols);
        if frame.ncols() != theta.dim() {
            return Err(Error::InvalidInput("frame columns are degenerate".into()));
        }
        linalg::canonicalize_signs(&mut frame);
        Ok(PartialFlag { theta, frame })
    }

    pub fn from_frame(theta: RootSubset, frame: &Mat) -> Result<Self> {
        Self::from_columns(theta, frame)
    }

    /// The standard flag `P_θ`: spans of the first coordinate vectors.
    pub fn standard(theta: RootSubset) -> Self {
        let d = theta.dim();
        PartialFlag {
            theta,
            frame: Mat::identity(d, d),
        }
    }

    /// `w₀P_θ`: spans of the last coordinate vectors.
    pub fn opposite_standard(theta: RootSubset) -> Self {
        let w = w0(theta.dim());
        let mut frame = w;
        linalg::canonicalize_signs(&mut frame);
        PartialFlag { theta, frame }
    }

    pub fn theta(&self) -> &RootSubset {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    pub fn frame(&self) -> &Mat {
        &self.frame
    }

    /// Same frame viewed in another flag manifold (`θ' ⊂ θ` projects,
    /// `θ' ⊃ θ` lifts using the stored frame).
    pub fn with_theta(&self, theta: RootSubset) -> Self {
        PartialFlag {
            theta,
            frame: self.frame.clone(),
        }
    }

    /// A full flag refining this one: the stored frame read as a full flag.
    pub fn lift(&self) -> Self {
        self.with_theta(RootSubset::full(self.dim()))
    }

    pub fn projector(&self, j: usize) -> Mat {
        linalg::span_projector(&self.frame, j)
    }

    /// `g · x`.
    pub fn act(&self, g: &Mat) -> Self {
        let (mut q, _) = linalg::qr_positive(&(g * &self.frame));
        linalg::canonicalize_signs(&mut q);
        PartialFlag {
            theta: self.theta.clone(),
            frame: q,
        }
    }

    /// Equality in `F_θ`: projectors agree for every `j ∈ θ`.
    pub fn approx_eq(&self, other: &PartialFlag) -> bool {
        self.theta == other.theta && flag_distance(self, other) <= tol::FLAG_EQ_TOL
    }

    pub fn is_orthonormal(&self) -> bool {
        let d = self.dim();
        linalg::max_abs_diff(
            &(self.frame.transpose() * &self.frame),
            &Mat::identity(d, d),
        ) <= tol::FRAME_ORTHO_TOL
    }
}

/// JSON form: row-major frame plus θ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlagRecord {
    pub dim: usize,
    pub theta: Vec<usize>,
    pub frame: Vec<f64>,
}

impl From<&PartialFlag> for FlagRecord {
    fn from(x: &PartialFlag) -> Self {
        let d = x.dim();
        FlagRecord {
            dim: d,
            theta: x.theta.indices().to_vec(),
            frame: (0..d)
                .flat_map(|r| (0..d).map(move |c| (r, c)))
                .map(|(r, c)| x.frame[(r, c)])
                .collect(),
        }
    }
}

impl TryFrom<FlagRecord> for PartialFlag {
    type Error = Error;
    fn try_from(rec: FlagRecord) -> Result<Self> {
        if rec.frame.len() != rec.dim * rec.dim {
            return Err(Error::InvalidInput("frame length".into()));
        }
        let theta = RootSubset::new(rec.dim, rec.theta)?;
        let frame = Mat::from_row_slice(rec.dim, rec.dim, &rec.frame);
        PartialFlag::from_frame(theta, &frame)
    }
}

impl Serialize for PartialFlag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FlagRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PartialFlag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = FlagRecord::deserialize(d)?;
        PartialFlag::try_from(rec).map_err(serde::de::Error::custom)
    }
}

/// The long Weyl element: antidiagonal, determinant one. Signs satisfy
/// `sᵢ = s_{d+1−i}` (so `w₀² = 1`) whenever that is compatible with
/// `det = 1`; otherwise (`d ≡ 2 mod 4`) `s₁ = −1` and `w₀² ∈ M`.
pub fn w0(d: usize) -> Mat {
    let mut s = vec![1.0; d];
    // sign of the reversal permutation
    let rev_sign = if (d * (d - 1) / 2).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    if rev_sign < 0.0 {
        if d % 2 == 1 {
            s[d / 2] = -1.0;
        } else {
            s[0] = -1.0;
        }
    }
    let mut w = Mat::zeros(d, d);
    for i in 0..d {
        w[(i, d - 1 - i)] = s[i];
    }
    w
}

/// Distance on `F_θ`: the largest Frobenius distance between span
/// projectors over `j ∈ θ`.
pub fn flag_distance(x: &PartialFlag, y: &PartialFlag) -> f64 {
    x.theta
        .indices()
        .iter()
        .map(|&j| (x.projector(j) - y.projector(j)).norm())
        .fold(0.0, f64::max)
}

/// Frame from top singular directions of `g` (leading half) and of `g^{-T}`
/// (trailing half). For `d ≤ 3` every span is then a dominant singular
/// direction of one of the two matrices and is accurate however long the
/// word that produced `g`.
fn frame_from_pair(g: &Mat, g_inv: &Mat) -> Result<Mat> {
    let d = g.nrows();
    let top = d.div_ceil(2);
    let bottom = d - top;
    let svd_g = linalg::svd_sorted(g)?;
    let mut lower: Vec<DVector<f64>> = Vec::with_capacity(bottom);
    if bottom > 0 {
        // left singular vectors of g^{-T} are right singular vectors of g^{-1}
        let svd_i = linalg::svd_sorted(g_inv)?;
        for r in 0..bottom {
            let mut v = svd_i.v_t.row(r).transpose().into_owned();
            for b in &lower {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
            let n = v.norm();
            lower.push(v / n);
        }
    }
    let mut upper: Vec<DVector<f64>> = Vec::with_capacity(top);
    for c in 0..top {
        let mut v = svd_g.u.column(c).into_owned();
        for _ in 0..2 {
            for b in lower.iter().chain(upper.iter()) {
                let x = b.dot(&v);
                v.axpy(-x, b, 1.0);
            }
        }
        let n = v.norm();
        if n < 1e-12 {
            return Err(Error::SingularDecompositionFailure);
        }
        upper.push(v / n);
    }
    // columns: u₁,…,u_top, then the lower directions in reverse order so
    // that the last column is the least expanded one
    let cols: Vec<DVector<f64>> = upper.into_iter().chain(lower.into_iter().rev()).collect();
    Ok(Mat::from_columns(&cols))
}

fn check_gaps(kappa: &CartanVector, theta: &RootSubset, gap_floor: f64) -> Result<()> {
    for &j in theta.indices() {
        if cartan::root_eval(j, kappa)? <= gap_floor {
            return Err(Error::DegenerateGap(j));
        }
    }
    Ok(())
}

/// `U_θ(g) = kP_θ` for a Cartan decomposition `g = k a ℓ`.
pub fn u_theta(g: &Mat, theta: &RootSubset, gap_floor: f64) -> Result<PartialFlag> {
    let g_inv = linalg::inverse(g)?;
    u_theta_with_inverse(g, &g_inv, theta, gap_floor)
}

/// `U_θ` from `g` and an independently accumulated `g⁻¹`.
pub fn u_theta_with_inverse(
    g: &Mat,
    g_inv: &Mat,
    theta: &RootSubset,
    gap_floor: f64,
) -> Result<PartialFlag> {
    let kappa = cartan::cartan_projection_with_inverse(g, g_inv)?;
    check_gaps(&kappa, theta, gap_floor)?;
    let mut frame = frame_from_pair(g, g_inv)?;
    linalg::canonicalize_signs(&mut frame);
    Ok(PartialFlag {
        theta: theta.clone(),
        frame,
    })
}

/// Leading columns of `U_θ(g)` (only the `max θ` meaningful ones).
pub fn u_theta_columns(
    g: &Mat,
    g_inv: &Mat,
    kappa: &CartanVector,
    theta: &RootSubset,
    gap_floor: f64,
) -> Result<Mat> {
    check_gaps(kappa, theta, gap_floor)?;
    let k = theta.max_index();
    let d = g.nrows();
    if 2 * k <= d + 1 {
        // leading half only needs the SVD of g
        let svd = linalg::svd_sorted(g)?;
        let mut cols = svd.u.columns(0, k).into_owned();
        linalg::canonicalize_signs(&mut cols);
        Ok(cols)
    } else {
        let mut frame = frame_from_pair(g, g_inv)?;
        linalg::canonicalize_signs(&mut frame);
        Ok(frame.columns(0, k).into_owned())
    }
}

/// Complementarity of the `j`-span of `x` and the `(d−j)`-span of `y` for
/// every `j ∈ θ`, tested by determinants of stacked orthonormal bases.
pub fn transverse(x: &PartialFlag, y: &PartialFlag) -> bool {
    transversality_margin(x, y) > tol::TRANSVERSE_DET
}

/// Smallest `|det [X_j | Y_{d−j}]|` over `j ∈ θ`.
pub fn transversality_margin(x: &PartialFlag, y: &PartialFlag) -> f64 {
    let d = x.dim();
    if y.dim() != d || y.theta != x.theta.istar() {
        return 0.0;
    }
    x.theta
        .indices()
        .iter()
        .map(|&j| {
            let mut m = Mat::zeros(d, d);
            m.columns_mut(0, j).copy_from(&x.frame.columns(0, j));
            m.columns_mut(j, d - j)
                .copy_from(&y.frame.columns(0, d - j));
            m.determinant().abs()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Iwasawa cocycle: with `x = kP_Δ`, write `gk = QR` (`R` upper triangular,
/// positive diagonal) and return `log diag R`.
pub fn iwasawa_cocycle(g: &Mat, x: &PartialFlag) -> Result<CartanVector> {
    if x.dim() != g.nrows() {
        return Err(Error::DimensionMismatch {
            expected: g.nrows(),
            got: x.dim(),
        });
    }
    let logs = linalg::gram_schmidt_log_norms(&(g * &x.frame));
    if logs.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorizationFailure);
    }
    Ok(CartanVector(logs))
}

/// Partial Iwasawa cocycle `B_θ(g, x) = π_θ B_Δ(g, x̃)` for any lift `x̃`.
pub fn partial_iwasawa(g: &Mat, x: &PartialFlag) -> Result<CartanVector> {
    let full = iwasawa_cocycle(g, &x.lift())?;
    cartan::pi_theta(&full, x.theta())
}

/// `ω_j(B_Δ(h, x))` for `j = 1..=k`, from the first `k` frame columns.
pub fn iwasawa_weights(h: &Mat, cols: &Mat) -> Vec<f64> {
    let logs = linalg::gram_schmidt_log_norms(&(h * cols));
    let mut acc = 0.0;
    logs.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Largest dimension handled by [`iwasawa_weights_raw`].
pub const RAW_MAX_DIM: usize = 8;

/// Allocation-free [`iwasawa_weights`]: `m` is a column-major `d×d` slice,
/// `cols` a column-major `d×k` slice, and `out[..k]` receives the weights.
pub fn iwasawa_weights_raw(m: &[f64], d: usize, cols: &[f64], k: usize, out: &mut [f64]) {
    debug_assert!(d <= RAW_MAX_DIM);
    let mut y = [0.0f64; RAW_MAX_DIM * RAW_MAX_DIM];
    for c in 0..k {
        for r in 0..d {
            let mut acc = 0.0;
            for t in 0..d {
                acc += m[t * d + r] * cols[c * d + t];
            }
            y[c * d + r] = acc;
        }
    }
    let mut total = 0.0;
    for c in 0..k {
        for _ in 0..2 {
            for p in 0..c {
                let mut dot = 0.0;
                for r in 0..d {
                    dot += y[p * d + r] * y[c * d + r];
                }
                for r in 0..d {
                    y[c * d + r] -= dot * y[p * d + r];
                }
            }
        }
        let mut n2 = 0.0;
        for r in 0..d {
            n2 += y[c * d + r] * y[c * d + r];
        }
        let n = n2.sqrt();
        total += n.ln();
        out[c] = total;
        for r in 0..d {
            y[c * d + r] /= n;
        }
    }
}

/// A transverse pair in `F_θ × F_{i*θ}`, optionally with a witness `g`
/// such that `gP_θ = ξ` and `gw₀P_{i*θ} = η`.
#[derive(Clone, Debug)]
pub struct TransversePair {
    pub xi: PartialFlag,
    pub eta: PartialFlag,
    pub witness: Option<Mat>,
}

impl TransversePair {
    /// Pair from two flags. For full flags a determinant-one witness is
    /// built from the lines `ξ_i ∩ η_{d−i+1}`.
    pub fn new(xi: PartialFlag, eta: PartialFlag) -> Result<Self> {
        if !transverse(&xi, &eta) {
            return Err(Error::NotTransverse);
        }
        let witness = if xi.theta.is_full() {
            Some(build_witness(&xi, &eta)?)
        } else {
            None
        };
        Ok(TransversePair { xi, eta, witness })
    }

    /// Pair without a witness; `gromov_product` then fails with `NoWitness`.
    pub fn bare(xi: PartialFlag, eta: PartialFlag) -> Result<Self> {
        if !transverse(&xi, &eta) {
            return Err(Error::NotTransverse);
        }
        Ok(TransversePair {
            xi,
            eta,
            witness: None,
        })
    }

    /// `(gP_θ, gw₀P_{i*θ})` with witness `g`.
    pub fn from_witness(g: &Mat, theta: &RootSubset) -> Result<Self> {
        let xi = PartialFlag::standard(theta.clone()).act(g);
        let eta = PartialFlag::opposite_standard(theta.istar()).act(g);
        if !transverse(&xi, &eta) {
            return Err(Error::NotTransverse);
        }
        Ok(TransversePair {
            xi,
            eta,
            witness: Some(g.clone()),
        })
    }

    pub fn swap(&self) -> Result<Self> {
        TransversePair::new(self.eta.clone(), self.xi.clone())
    }

    /// `(gξ, gη)` with a freshly built witness.
    pub fn act(&self, g: &Mat) -> Result<Self> {
        TransversePair::new(self.xi.act(g), self.eta.act(g))
    }
}

/// Witness for a full-flag pair: column `i` spans `ξ_i ∩ η_{d−i+1}`.
pub fn build_witness(xi: &PartialFlag, eta: &PartialFlag) -> Result<Mat> {
    let d = xi.dim();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(d);
    for i in 1..=d {
        let xi_i = xi.frame.columns(0, i);
        if i == 1 {
            cols.push(xi_i.column(0).into_owned());
            continue;
        }
        // v = Ξ_i c orthogonal to the last i−1 columns of η's frame
        let eta_perp = eta.frame.columns(d - i + 1, i - 1);
        let a = eta_perp.transpose() * xi_i;
        // null vector of a: the completing column of an orthonormal basis of its row space
        let basis = linalg::complete_frame(&a.transpose());
        let c = basis.column(i - 1).into_owned();
        let v = xi_i * c;
        let n = v.norm();
        if n < 1e-12 {
            return Err(Error::NotTransverse);
        }
        cols.push(v / n);
    }
    let mut g = Mat::from_columns(&cols);
    let det = g.determinant();
    if !(det.abs() > 0.0) {
        return Err(Error::NotTransverse);
    }
    if det < 0.0 {
        for r in 0..d {
            g[(r, 0)] = -g[(r, 0)];
        }
    }
    Ok(g * det.abs().powf(-1.0 / d as f64))
}

/// `G_Δ(ξ, η) = −(B(g⁻¹, ξ) + i B(g⁻¹, η))` for the stored witness `g`.
pub fn gromov_product(pair: &TransversePair) -> Result<CartanVector> {
    let g = pair.witness.as_ref().ok_or(Error::NoWitness)?;
    let g_inv = linalg::inverse(g)?;
    let b_xi = iwasawa_cocycle(&g_inv, &pair.xi.lift())?;
    let b_eta = iwasawa_cocycle(&g_inv, &pair.eta.lift())?;
    Ok((&b_xi + &cartan::opposition(&b_eta)).scale(-1.0))
}

/// `G_Δ(wP_Δ, ww₀P_Δ) = B(w, P_Δ) + i B(w, w₀P_Δ)`, read off `w` and its
/// inverse without forming the flags.
pub fn gromov_from_witness(w: &Mat, w_inv: &Mat) -> Result<CartanVector> {
    let full = RootSubset::full(w.nrows());
    let a = iwasawa_cocycle_dual(w, w_inv, &PartialFlag::standard(full.clone()))?;
    let b = iwasawa_cocycle_dual(w, w_inv, &PartialFlag::opposite_standard(full))?;
    Ok(&a + &cartan::opposition(&b))
}

/// Iwasawa cocycle of `g ∈ SL(d)` with `ω_k` taken from the leading `k`
/// columns of `gk` when `2k ≤ d` and from the trailing `d − k` columns of
/// `g⁻ᵀk` otherwise (`‖Me₁∧…∧Meₖ‖ = |det M| ‖M⁻ᵀeₖ₊₁∧…∧M⁻ᵀe_d‖`).
/// Small diagonal entries of `R` then never come out of a cancellation,
/// which keeps long products accurate to a few ulps in every coordinate.
pub fn iwasawa_cocycle_dual(g: &Mat, g_inv: &Mat, x: &PartialFlag) -> Result<CartanVector> {
    let d = g.nrows();
    if x.dim() != d || g_inv.nrows() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.dim() });
    }
    let head = linalg::gram_schmidt_log_norms(&(g * &x.frame));
    let dual = g_inv.transpose() * &x.frame;
    let rev = Mat::from_fn(d, d, |r, c| dual[(r, d - 1 - c)]);
    let tail = linalg::gram_schmidt_log_norms(&rev);
    let omega = |k: usize| -> f64 {
        if 2 * k <= d {
            head[..k].iter().sum()
        } else {
            tail[..d - k].iter().sum()
        }
    };
    let logs: Vec<f64> = (1..=d).map(|k| omega(k) - omega(k - 1)).collect();
    if logs.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorizationFailure);
    }
    Ok(CartanVector(logs))
}

/// Hopf coordinates `gM ↦ (gP_Δ, gw₀P_Δ, B_Δ(g, P_Δ))`.
pub fn hopf(g: &Mat) -> Result<(PartialFlag, PartialFlag, CartanVector)> {
    hopf_with_inverse(g, &linalg::inverse(g)?)
}

/// [`hopf`] for a long product whose inverse is known exactly, e.g. from the
/// inverse word.
pub fn hopf_with_inverse(g: &Mat, g_inv: &Mat) -> Result<(PartialFlag, PartialFlag, CartanVector)> {
    let d = g.nrows();
    let full = RootSubset::full(d);
    let std = PartialFlag::standard(full.clone());
    let x = std.act(g);
    let y = PartialFlag::opposite_standard(full).act(g);
    let u = iwasawa_cocycle_dual(g, g_inv, &std)?;
    Ok((x, y, u))
}

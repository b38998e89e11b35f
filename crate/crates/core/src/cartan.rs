//! Coordinates on the Cartan subspace `a = {diag(t₁,…,t_d) : Σ tᵢ = 0}` of
//! `sl(d, R)`, the simple roots `αⱼ = tⱼ − tⱼ₊₁`, fundamental weights
//! `ωⱼ = t₁ + ⋯ + tⱼ`, and the Cartan/Jordan projections of `SL(d, R)`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::tol;

/// A point of the Cartan subspace in diagonal coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CartanVector(pub Vec<f64>);

impl CartanVector {
    pub fn new(entries: Vec<f64>) -> Self {
        CartanVector(entries)
    }

    pub fn zeros(d: usize) -> Self {
        CartanVector(vec![0.0; d])
    }

    /// Project an arbitrary diagonal onto the trace-zero subspace.
    pub fn from_diagonal(mut entries: Vec<f64>) -> Self {
        let mean = entries.iter().sum::<f64>() / entries.len() as f64;
        for t in &mut entries {
            *t -= mean;
        }
        CartanVector(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_chamber(&self) -> bool {
        self.0.windows(2).all(|w| w[0] >= w[1] - 1e-12)
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, t| m.max(t.abs()))
    }

    pub fn dist_sup(&self, other: &CartanVector) -> f64 {
        (self - other).sup_norm()
    }

    /// Sort entries in non-increasing order (stable on ties).
    pub fn into_chamber(mut self) -> Self {
        self.0.sort_by(|a, b| b.total_cmp(a));
        self
    }

    pub fn scale(&self, c: f64) -> Self {
        CartanVector(self.0.iter().map(|t| c * t).collect())
    }
}

impl Add for &CartanVector {
    type Output = CartanVector;
    fn add(self, rhs: &CartanVector) -> CartanVector {
        CartanVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &CartanVector {
    type Output = CartanVector;
    fn sub(self, rhs: &CartanVector) -> CartanVector {
        CartanVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<&CartanVector> for f64 {
    type Output = CartanVector;
    fn mul(self, rhs: &CartanVector) -> CartanVector {
        rhs.scale(self)
    }
}

impl fmt::Display for CartanVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{t:.6}")?;
        }
        write!(f, ")")
    }
}

/// A subset `θ ⊂ Δ = {α₁,…,α_{d−1}}`, stored as sorted 1-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RootSubset {
    dim: usize,
    indices: Vec<usize>,
}

impl RootSubset {
    pub fn new(dim: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::EmptyRootSubset);
        }
        for &j in &indices {
            if j == 0 || j >= dim {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    bound: dim.saturating_sub(1),
                });
            }
        }
        Ok(RootSubset { dim, indices })
    }

    /// `θ = Δ`.
    pub fn full(dim: usize) -> Self {
        RootSubset {
            dim,
            indices: (1..dim).collect(),
        }
    }

    pub fn single(dim: usize, j: usize) -> Result<Self> {
        Self::new(dim, [j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() + 1 == self.dim
    }

    pub fn max_index(&self) -> usize {
        *self.indices.last().expect("nonempty")
    }

    /// `i*θ`, under which `αⱼ ↦ α_{d−j}`.
    pub fn istar(&self) -> Self {
        let mut indices: Vec<usize> = self.indices.iter().map(|j| self.dim - j).collect();
        indices.sort_unstable();
        RootSubset {
            dim: self.dim,
            indices,
        }
    }

    pub fn is_subset_of(&self, other: &RootSubset) -> bool {
        self.indices.iter().all(|j| other.contains(*j))
    }
}

impl fmt::Display for RootSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.indices.iter().map(|j| format!("a{j}")).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// A linear functional on `a`, stored by its coefficients over the
/// fundamental weights `ω₁,…,ω_{d−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub weight_coeffs: Vec<f64>,
}

impl Functional {
    pub fn new(weight_coeffs: Vec<f64>) -> Self {
        Functional { weight_coeffs }
    }

    /// The fundamental weight `ωⱼ` on `a ⊂ sl(d)`.
    pub fn fundamental_weight(d: usize, j: usize) -> Result<Self> {
        if j == 0 || j >= d {
            return Err(Error::IndexOutOfRange {
                index: j,
                bound: d - 1,
            });
        }
        let mut c = vec![0.0; d - 1];
        c[j - 1] = 1.0;
        Ok(Functional::new(c))
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.weight_coeffs.len() + 1
    }

    pub fn eval(&self, h: &CartanVector) -> f64 {
        functional_eval(self, h)
    }

    /// Coefficients against the diagonal coordinates `t₁,…,t_d`.
    pub fn diagonal_coeffs(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut acc = 0.0;
        for i in (0..d - 1).rev() {
            acc += self.weight_coeffs[i];
            out[i] = acc;
        }
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        Functional::new(self.weight_coeffs.iter().map(|x| c * x).collect())
    }

    pub fn combine(&self, a: f64, other: &Functional, b: f64) -> Self {
        Functional::new(
            self.weight_coeffs
                .iter()
                .zip(&other.weight_coeffs)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    /// Whether the functional lies in `a_θ* = span{ω_α : α ∈ θ}`.
    pub fn supported_on(&self, theta: &RootSubset) -> bool {
        self.weight_coeffs
            .iter()
            .enumerate()
            .all(|(i, c)| *c == 0.0 || theta.contains(i + 1))
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .weight_coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| format!("{c}*w{}", i + 1))
            .collect();
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

fn check_index(j: usize, h: &CartanVector) -> Result<()> {
    if j == 0 || j >= h.dim() {
        Err(Error::IndexOutOfRange {
            index: j,
            bound: h.dim() - 1,
        })
    } else {
        Ok(())
    }
}

/// `αⱼ(H) = tⱼ − tⱼ₊₁`.
pub fn root_eval(j: usize, h: &CartanVector) -> Result<f64> {
    check_index(j, h)?;
    Ok(h.0[j - 1] - h.0[j])
}

/// `ωⱼ(H) = t₁ + ⋯ + tⱼ`.
pub fn weight_eval(j: usize, h: &CartanVector) -> Result<f64> {
    check_index(j, h)?;
    Ok(h.0[..j].iter().sum())
}

/// `φ(H) = Σ cⱼ ωⱼ(H)`.
pub fn functional_eval(phi: &Functional, h: &CartanVector) -> f64 {
    let mut partial = 0.0;
    let mut acc = 0.0;
    for (j, c) in phi.weight_coeffs.iter().enumerate() {
        partial += h.0[j];
        acc += c * partial;
    }
    acc
}

/// Opposition involution `i(diag(t₁,…,t_d)) = diag(−t_d,…,−t₁)`.
pub fn opposition(h: &CartanVector) -> CartanVector {
    CartanVector(h.0.iter().rev().map(|t| -t).collect())
}

/// Dual of the opposition involution: `(i*φ)(H) = φ(iH)`, i.e. `cⱼ ↦ c_{d−j}`.
pub fn istar(phi: &Functional) -> Functional {
    Functional::new(phi.weight_coeffs.iter().rev().copied().collect())
}

/// Fundamental coweight `Hⱼ`, characterised by `αᵢ(Hⱼ) = δᵢⱼ`.
pub fn fundamental_coweight(d: usize, j: usize) -> CartanVector {
    let hi = (d - j) as f64 / d as f64;
    let lo = -(j as f64) / d as f64;
    CartanVector((0..d).map(|i| if i < j { hi } else { lo }).collect())
}

/// The projection `π_θ : a → a_θ` fixed by `ω_α(π_θ H) = ω_α(H)` for
/// `α ∈ θ`, solved in the basis of fundamental coweights of `θ`.
pub fn pi_theta(h: &CartanVector, theta: &RootSubset) -> Result<CartanVector> {
    let d = h.dim();
    if theta.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta.dim(),
        });
    }
    let idx = theta.indices();
    let k = idx.len();
    let basis: Vec<CartanVector> = idx.iter().map(|&j| fundamental_coweight(d, j)).collect();
    let a = Mat::from_fn(k, k, |r, c| basis[c].0[..idx[r]].iter().sum::<f64>());
    let b = DVector::from_iterator(k, idx.iter().map(|&j| h.0[..j].iter().sum::<f64>()));
    let x = a.lu().solve(&b).ok_or(Error::SingularSystem)?;
    let mut out = vec![0.0; d];
    for (c, v) in basis.iter().enumerate() {
        for i in 0..d {
            out[i] += x[c] * v.0[i];
        }
    }
    Ok(CartanVector(out))
}

fn check_unimodular(g: &Mat) -> Result<()> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch {
            expected: g.nrows(),
            got: g.ncols(),
        });
    }
    let det = linalg::det(g);
    if (det - 1.0).abs() > tol::DET_TOL {
        return Err(Error::NotUnimodular(det));
    }
    Ok(())
}

/// Cartan projection `κ(g)`: descending logs of the singular values of `g`.
pub fn cartan_projection(g: &Mat) -> Result<CartanVector> {
    check_unimodular(g)?;
    let s = linalg::singular_values_desc(g)?;
    Ok(CartanVector::from_diagonal(s.iter().map(|x| x.ln()).collect()).into_chamber())
}

/// Partial sums `ω₁(κ(g)),…,ω_{d−1}(κ(g))` from operator norms of exterior
/// powers of `g` and `g⁻¹`.
///
/// Products of many group elements lose their small singular values to
/// rounding, but the top singular value of each exterior power stays
/// accurate to relative precision. Using `ωⱼ(κ(g)) = ω_{d−j}(κ(g⁻¹))`, the
/// upper half of the weights is read from `g⁻¹`.
fn weights_from_pair(g: &Mat, g_inv: &Mat) -> Result<Vec<f64>> {
    let d = g.nrows();
    let mut w = Vec::with_capacity(d - 1);
    for j in 1..d {
        let v = if 2 * j <= d {
            linalg::top_singular_value(&linalg::compound(g, j))?.ln()
        } else {
            linalg::top_singular_value(&linalg::compound(g_inv, d - j))?.ln()
        };
        w.push(v);
    }
    Ok(w)
}

fn from_weights(w: &[f64]) -> CartanVector {
    let d = w.len() + 1;
    let mut t = Vec::with_capacity(d);
    let mut prev = 0.0;
    for &x in w {
        t.push(x - prev);
        prev = x;
    }
    t.push(-prev);
    CartanVector(t).into_chamber()
}

/// Cartan projection of `g` given an independently accumulated inverse.
/// This is the route used for long group words.
pub fn cartan_projection_with_inverse(g: &Mat, g_inv: &Mat) -> Result<CartanVector> {
    Ok(from_weights(&weights_from_pair(g, g_inv)?))
}

/// Jordan projection `λ(g)`: descending log-moduli of the eigenvalues.
///
/// Computed as successive differences of `log ρ(∧ʲg)`, so only dominant
/// eigenvalues enter.
pub fn jordan_projection(g: &Mat) -> Result<CartanVector> {
    check_unimodular(g)?;
    let g_inv = linalg::inverse(g)?;
    jordan_projection_with_inverse(g, &g_inv)
}

pub fn jordan_projection_with_inverse(g: &Mat, g_inv: &Mat) -> Result<CartanVector> {
    let d = g.nrows();
    let mut w = Vec::with_capacity(d - 1);
    for j in 1..d {
        let v = if 2 * j <= d {
            linalg::spectral_radius(&linalg::compound(g, j))?.ln()
        } else {
            linalg::spectral_radius(&linalg::compound(g_inv, d - j))?.ln()
        };
        w.push(v);
    }
    Ok(from_weights(&w))
}

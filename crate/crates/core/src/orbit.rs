//! Word enumeration of finitely generated subgroups, orbital counting,
//! Poincaré series and critical exponents.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cartan::{self, CartanVector, Functional};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::par::{self, *};
use crate::tol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordPolicy {
    /// Every freely reduced word is a distinct element.
    FreeReduced,
    /// Reduced words whose matrices agree to six decimals are identified.
    HashDedup,
}

/// Generators with their inverses appended. Letter `i < k` is generator
/// `i`, letter `k + i` its inverse.
#[derive(Clone, Debug)]
pub struct GeneratorSet {
    dim: usize,
    labels: Vec<String>,
    letters: Vec<Mat>,
    policy: WordPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub label: String,
    /// Row-major rows.
    pub rows: Vec<Vec<f64>>,
}

impl LabeledMatrix {
    pub fn to_matrix(&self) -> Result<Mat> {
        let d = self.rows.len();
        if d == 0 || self.rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput(format!(
                "generator {} is not a square matrix",
                self.label
            )));
        }
        Ok(Mat::from_fn(d, d, |r, c| self.rows[r][c]))
    }

    pub fn from_matrix(label: &str, m: &Mat) -> Self {
        LabeledMatrix {
            label: label.to_string(),
            rows: (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
                .collect(),
        }
    }
}

fn inverse_label(label: &str) -> String {
    let mut chars = label.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_lowercase() => c.to_ascii_uppercase().to_string(),
        _ => format!("{label}^-1"),
    }
}

impl GeneratorSet {
    pub fn new(generators: Vec<(String, Mat)>, policy: WordPolicy) -> Result<Self> {
        let Some((_, first)) = generators.first() else {
            return Err(Error::InvalidInput("empty generator list".into()));
        };
        let dim = first.nrows();
        let mut seen = HashSet::new();
        let mut labels = Vec::new();
        let mut mats = Vec::new();
        let mut invs = Vec::new();
        for (label, g) in generators {
            if g.nrows() != dim || g.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: g.nrows(),
                });
            }
            let det = linalg::det(&g);
            if (det - 1.0).abs() > tol::DET_TOL {
                return Err(Error::NotUnimodular(det));
            }
            if !seen.insert(label.clone()) {
                return Err(Error::InvalidInput(format!("duplicate label {label}")));
            }
            invs.push(linalg::inverse(&g)?);
            mats.push(g);
            labels.push(label);
        }
        let k = labels.len();
        if 2 * k > u8::MAX as usize {
            return Err(Error::InvalidInput("too many generators".into()));
        }
        let inv_labels: Vec<String> = labels.iter().map(|l| inverse_label(l)).collect();
        labels.extend(inv_labels);
        mats.extend(invs);
        Ok(GeneratorSet {
            dim,
            labels,
            letters: mats,
            policy,
        })
    }

    pub fn from_labeled(gens: &[LabeledMatrix], policy: WordPolicy) -> Result<Self> {
        let pairs = gens
            .iter()
            .map(|g| Ok((g.label.clone(), g.to_matrix()?)))
            .collect::<Result<Vec<_>>>()?;
        GeneratorSet::new(pairs, policy)
    }

    pub fn to_labeled(&self) -> Vec<LabeledMatrix> {
        (0..self.rank())
            .map(|i| LabeledMatrix::from_matrix(&self.labels[i], &self.letters[i]))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of generators (without inverses).
    pub fn rank(&self) -> usize {
        self.letters.len() / 2
    }

    pub fn num_letters(&self) -> usize {
        self.letters.len()
    }

    pub fn policy(&self) -> WordPolicy {
        self.policy
    }

    pub fn with_policy(&self, policy: WordPolicy) -> Self {
        GeneratorSet {
            policy,
            ..self.clone()
        }
    }

    pub fn letter(&self, l: usize) -> &Mat {
        &self.letters[l]
    }

    pub fn label(&self, l: usize) -> &str {
        &self.labels[l]
    }

    pub fn letter_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn inverse_letter(&self, l: usize) -> usize {
        let k = self.rank();
        if l < k {
            l + k
        } else {
            l - k
        }
    }

    pub fn generator(&self, i: usize) -> &Mat {
        &self.letters[i]
    }

    /// Conjugate every generator: `g ↦ h g h⁻¹`.
    pub fn conjugate(&self, h: &Mat) -> Result<Self> {
        let h_inv = linalg::inverse(h)?;
        let gens = (0..self.rank())
            .map(|i| (self.labels[i].clone(), h * &self.letters[i] * &h_inv))
            .collect();
        GeneratorSet::new(gens, self.policy)
    }

    /// Matrix and inverse of a word given as letter indices.
    pub fn evaluate(&self, word: &[usize]) -> (Mat, Mat) {
        let mut g = Mat::identity(self.dim, self.dim);
        let mut g_inv = g.clone();
        for &l in word {
            g = &g * &self.letters[l];
            g_inv = &self.letters[self.inverse_letter(l)] * &g_inv;
        }
        (g, g_inv)
    }

    pub fn parse_word(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|s| {
                self.letter_index(s)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown letter {s}")))
            })
            .collect()
    }

    pub fn is_reduced(&self, word: &[usize]) -> bool {
        word.windows(2).all(|w| w[1] != self.inverse_letter(w[0]))
    }

    /// Strip cancelling first/last letter pairs of a reduced word. The result
    /// is conjugate to the input and has the same eigenvalues.
    pub fn cyclic_reduction<'a>(&self, word: &'a [usize]) -> &'a [usize] {
        let (mut lo, mut hi) = (0, word.len());
        while hi - lo >= 2 && word[hi - 1] == self.inverse_letter(word[lo]) {
            lo += 1;
            hi -= 1;
        }
        &word[lo..hi]
    }

    /// Jordan projection of a word, computed on its cyclic reduction:
    /// a long conjugator makes the product matrix too non-normal for its
    /// eigenvalues to survive rounding.
    pub fn jordan_projection(&self, word: &[usize]) -> Result<CartanVector> {
        let (g, g_inv) = self.evaluate(self.cyclic_reduction(word));
        cartan::jordan_projection_with_inverse(&g, &g_inv)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    pub candidates: usize,
    pub collapsed: usize,
}

/// A ball in the word metric, stored flat: element `i` has matrix, inverse
/// and Cartan projection in slices of the shared buffers and is the child
/// of `parent[i]` by one letter. Elements are in shortlex order.
#[derive(Clone, Debug)]
pub struct OrbitBall {
    gens: GeneratorSet,
    max_len: usize,
    parent: Vec<u32>,
    last: Vec<u8>,
    mats: Vec<f64>,
    invs: Vec<f64>,
    kappa: Vec<f64>,
    shells: Vec<usize>,
    dedup: DedupStats,
}

struct Child {
    parent: u32,
    letter: u8,
    mat: Mat,
    inv: Mat,
    kappa: CartanVector,
}

const LEVEL_CHUNK: usize = 1 << 15;

fn dedup_key(m: &Mat) -> Vec<u64> {
    let scale = 10f64.powi(tol::DEDUP_DECIMALS);
    m.iter()
        .map(|&x| {
            let r = (x * scale).round() / scale;
            // fold -0.0 into 0.0
            (r + 0.0).to_bits()
        })
        .collect()
}

impl OrbitBall {
    /// Breadth-first enumeration of all elements with word length at most
    /// `max_len` under the generator set's policy.
    pub fn enumerate(gens: &GeneratorSet, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::InvalidInput("max_len must be at least 1".into()));
        }
        if max_len > u8::MAX as usize {
            return Err(Error::InvalidInput("max_len too large".into()));
        }
        let mut ball = OrbitBall::identity_with(gens.clone());
        ball.max_len = max_len;
        let d = gens.dim;
        let mut keys: HashSet<Vec<u64>> = HashSet::new();
        if gens.policy == WordPolicy::HashDedup {
            keys.insert(dedup_key(&Mat::identity(d, d)));
        }
        for _len in 1..=max_len {
            let start = ball.shells[ball.shells.len() - 2];
            let end = ball.shells[ball.shells.len() - 1];
            let mut pos = start;
            while pos < end {
                let stop = (pos + LEVEL_CHUNK).min(end);
                let children: Vec<Vec<Child>> = (pos..stop)
                    .into_par_iter()
                    .map(|p| ball.children_of(p))
                    .collect::<Result<Vec<_>>>()?;
                for batch in children {
                    for c in batch {
                        ball.dedup.candidates += 1;
                        if gens.policy == WordPolicy::HashDedup && !keys.insert(dedup_key(&c.mat)) {
                            ball.dedup.collapsed += 1;
                            continue;
                        }
                        ball.push(c);
                    }
                }
                pos = stop;
            }
            if ball.parent.len() > u32::MAX as usize {
                return Err(Error::InvalidInput("orbit ball too large".into()));
            }
            ball.shells.push(ball.parent.len());
        }
        let DedupStats {
            candidates,
            collapsed,
        } = ball.dedup;
        if gens.policy == WordPolicy::HashDedup
            && collapsed as f64 > tol::DEDUP_COLLAPSE_FRACTION * candidates as f64
        {
            return Err(Error::DiscretenessSuspect {
                collapsed,
                candidates,
            });
        }
        Ok(ball)
    }

    /// The ball containing only the identity.
    pub fn identity(gens: &GeneratorSet) -> Self {
        OrbitBall::identity_with(gens.clone())
    }

    fn identity_with(gens: GeneratorSet) -> Self {
        let d = gens.dim;
        let id = Mat::identity(d, d);
        let mut ball = OrbitBall {
            gens,
            max_len: 0,
            parent: Vec::new(),
            last: Vec::new(),
            mats: Vec::new(),
            invs: Vec::new(),
            kappa: Vec::new(),
            shells: vec![0],
            dedup: DedupStats::default(),
        };
        ball.push(Child {
            parent: u32::MAX,
            letter: u8::MAX,
            mat: id.clone(),
            inv: id,
            kappa: CartanVector::zeros(d),
        });
        ball.shells.push(1);
        ball
    }

    fn push(&mut self, c: Child) {
        self.parent.push(c.parent);
        self.last.push(c.letter);
        self.mats.extend(c.mat.iter());
        self.invs.extend(c.inv.iter());
        self.kappa.extend(c.kappa.0.iter());
    }

    fn children_of(&self, p: usize) -> Result<Vec<Child>> {
        let g = self.matrix(p);
        let g_inv = self.inverse(p);
        let nl = self.gens.num_letters();
        let forbidden = if p == 0 {
            usize::MAX
        } else {
            self.gens.inverse_letter(self.last[p] as usize)
        };
        let mut out = Vec::with_capacity(nl);
        for l in 0..nl {
            if l == forbidden {
                continue;
            }
            let mat = &g * self.gens.letter(l);
            let inv = self.gens.letter(self.gens.inverse_letter(l)) * &g_inv;
            let kappa = cartan::cartan_projection_with_inverse(&mat, &inv)?;
            out.push(Child {
                parent: p as u32,
                letter: l as u8,
                mat,
                inv,
                kappa,
            });
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gens.dim
    }

    pub fn generators(&self) -> &GeneratorSet {
        &self.gens
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dedup_stats(&self) -> DedupStats {
        self.dedup
    }

    /// Index range of the elements of word length `len`.
    pub fn shell(&self, len: usize) -> Range<usize> {
        if len + 1 >= self.shells.len() {
            return self.len()..self.len();
        }
        self.shells[len]..self.shells[len + 1]
    }

    /// Elements of word length at most `len`.
    pub fn ball(&self, len: usize) -> Range<usize> {
        0..self.shells[(len + 1).min(self.shells.len() - 1)]
    }

    pub fn matrix(&self, i: usize) -> Mat {
        let d2 = self.dim() * self.dim();
        Mat::from_column_slice(self.dim(), self.dim(), &self.mats[i * d2..(i + 1) * d2])
    }

    pub fn inverse(&self, i: usize) -> Mat {
        let d2 = self.dim() * self.dim();
        Mat::from_column_slice(self.dim(), self.dim(), &self.invs[i * d2..(i + 1) * d2])
    }

    pub fn kappa_slice(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.kappa[i * d..(i + 1) * d]
    }

    pub fn kappa(&self, i: usize) -> CartanVector {
        CartanVector(self.kappa_slice(i).to_vec())
    }

    pub fn word_len(&self, i: usize) -> usize {
        let mut n = 0;
        let mut j = i;
        while j != 0 {
            j = self.parent[j] as usize;
            n += 1;
        }
        n
    }

    /// Letter indices of element `i`.
    pub fn word(&self, i: usize) -> Vec<usize> {
        let mut w = Vec::new();
        let mut j = i;
        while j != 0 {
            w.push(self.last[j] as usize);
            j = self.parent[j] as usize;
        }
        w.reverse();
        w
    }

    pub fn word_labels(&self, i: usize) -> Vec<String> {
        self.word(i)
            .into_iter()
            .map(|l| self.gens.label(l).to_string())
            .collect()
    }

    pub fn word_string(&self, i: usize) -> String {
        let w = self.word_labels(i);
        if w.is_empty() {
            "e".into()
        } else if w.iter().all(|l| l.chars().count() == 1) {
            w.concat()
        } else {
            w.join(" ")
        }
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        (i != 0).then(|| self.parent[i] as usize)
    }

    pub fn last_letter(&self, i: usize) -> Option<usize> {
        (i != 0).then(|| self.last[i] as usize)
    }

    /// `φ(κ(γ))` for every element, in element order.
    pub fn values(&self, phi: &Functional) -> Vec<f64> {
        let coeffs = phi.diagonal_coeffs();
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.kappa_slice(i)
                    .iter()
                    .zip(&coeffs)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `(φ(κ(γ)), |γ|)` pairs for the exponent estimators.
    pub fn values_with_len(&self, phi: &Functional) -> Vec<(f64, usize)> {
        let vals = self.values(phi);
        let mut out = Vec::with_capacity(vals.len());
        for len in 0..self.shells.len() - 1 {
            for i in self.shell(len) {
                out.push((vals[i], len));
            }
        }
        out
    }

    /// Write as JSON lines: a header with the generators, then one line per
    /// element with its word, row-major matrix and Cartan projection.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = OrbitHeader {
            dim: self.dim(),
            generators: self.gens.to_labeled(),
            policy: self.gens.policy,
            max_len: self.max_len,
            count: self.len(),
            dedup: self.dedup,
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for i in 0..self.len() {
            let m = self.matrix(i);
            let rec = ElementRecord {
                word: self.word_labels(i),
                matrix: m.transpose().iter().copied().collect(),
                kappa: self.kappa_slice(i).to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Read a ball written by [`OrbitBall::write_jsonl`]. Inverses are
    /// recomputed from the words.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: OrbitHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::InvalidInput("empty orbit file".into())),
        };
        let gens = GeneratorSet::from_labeled(&header.generators, header.policy)?;
        let d = gens.dim;
        let mut ball = OrbitBall::identity_with(gens.clone());
        ball.shells.clear();
        ball.parent.clear();
        ball.last.clear();
        ball.mats.clear();
        ball.invs.clear();
        ball.kappa.clear();
        ball.max_len = header.max_len;
        ball.dedup = header.dedup;
        let mut index: std::collections::HashMap<Vec<usize>, usize> = Default::default();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ElementRecord = serde_json::from_str(&line)?;
            let word = gens.parse_word(&rec.word)?;
            if rec.matrix.len() != d * d || rec.kappa.len() != d {
                return Err(Error::InvalidInput("element record size".into()));
            }
            if word.len() + 1 < ball.shells.len() || (ball.shells.is_empty() && !word.is_empty()) {
                return Err(Error::InvalidInput("elements out of order".into()));
            }
            while ball.shells.len() <= word.len() {
                ball.shells.push(ball.parent.len());
            }
            let (parent, letter) = match word.split_last() {
                None => (u32::MAX, u8::MAX),
                Some((&l, prefix)) => {
                    let p = *index
                        .get(prefix)
                        .ok_or_else(|| Error::InvalidInput("missing prefix".into()))?;
                    (p as u32, l as u8)
                }
            };
            let mat = Mat::from_row_slice(d, d, &rec.matrix);
            let inv = if word.is_empty() {
                Mat::identity(d, d)
            } else {
                gens.letter(gens.inverse_letter(letter as usize)) * ball.inverse(parent as usize)
            };
            index.insert(word, ball.parent.len());
            ball.push(Child {
                parent,
                letter,
                mat,
                inv,
                kappa: CartanVector(rec.kappa),
            });
        }
        ball.shells.push(ball.parent.len());
        if ball.is_empty() {
            return Err(Error::InvalidInput("orbit file has no elements".into()));
        }
        Ok(ball)
    }
}

#[derive(Serialize, Deserialize)]
struct OrbitHeader {
    dim: usize,
    generators: Vec<LabeledMatrix>,
    policy: WordPolicy,
    max_len: usize,
    count: usize,
    dedup: DedupStats,
}

#[derive(Serialize, Deserialize)]
struct ElementRecord {
    word: Vec<String>,
    matrix: Vec<f64>,
    kappa: Vec<f64>,
}

/// `N(T) = #{γ : φ(κ(γ)) ≤ T}` over the enumerated ball.
pub fn counting_function(orbit: &OrbitBall, phi: &Functional, t: f64) -> usize {
    orbit.values(phi).iter().filter(|&&v| v <= t).count()
}

/// `Σ e^{−sφ(κ(γ))}` over the enumerated ball.
pub fn poincare_partial(orbit: &OrbitBall, phi: &Functional, s: f64) -> f64 {
    let vals = orbit.values(phi);
    par::det_sum(vals.len(), |i| (-s * vals[i]).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExponentMethod {
    CountRegression,
    SeriesRoot,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub delta_hat: f64,
    pub method: ExponentMethod,
    pub window: (f64, f64),
    /// Standard error of the regression slope (count method) or the
    /// half-spread between consecutive shell ratios (series method).
    pub slope_stderr: f64,
    /// `|δ̂_count − δ̂_series|` when both methods succeed.
    pub cross_method_gap: Option<f64>,
    /// Distinct values of `φ(κ)` inside the regression window.
    pub distinct_in_window: usize,
    /// Slope in `L` of the log shell sums at `s = δ̂`. Values near zero or
    /// positive suggest divergence at the exponent; this is a heuristic only.
    pub divergence_heuristic: f64,
    pub negative_values: usize,
}

/// Critical exponent estimate for `φ` on the ball.
pub fn critical_exponent(
    orbit: &OrbitBall,
    phi: &Functional,
    method: ExponentMethod,
) -> Result<ExponentEstimate> {
    critical_exponent_from_values(&orbit.values_with_len(phi), method)
}

struct CountFit {
    slope: f64,
    stderr: f64,
    window: (f64, f64),
    distinct: usize,
}

fn count_regression(values: &[(f64, usize)]) -> Result<CountFit> {
    let max_len = values.iter().map(|v| v.1).max().unwrap_or(0);
    let t_max = values
        .iter()
        .filter(|v| v.1 == max_len)
        .map(|v| v.0)
        .fold(f64::INFINITY, f64::min);
    if max_len == 0 || !t_max.is_finite() || t_max <= 0.0 {
        return Err(Error::InsufficientRange { distinct: 0 });
    }
    let lo = tol::WINDOW_LO * t_max;
    let hi = tol::WINDOW_HI * t_max;
    let mut sorted: Vec<f64> = values.iter().map(|v| v.0).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = 0;
    let mut prev = f64::NAN;
    for &v in sorted.iter().filter(|&&v| v >= lo && v <= hi) {
        if !(v - prev).abs().le(&1e-9) {
            distinct += 1;
            prev = v;
        }
    }
    if distinct < tol::MIN_DISTINCT {
        return Err(Error::InsufficientRange { distinct });
    }
    let n = tol::REGRESSION_GRID;
    let xs: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&t| (sorted.partition_point(|&v| v <= t) as f64).ln())
        .collect();
    let (slope, stderr) = ols(&xs, &ys);
    Ok(CountFit {
        slope,
        stderr,
        window: (lo, hi),
        distinct,
    })
}

/// Least-squares slope and its standard error.
pub(crate) fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = if xs.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, stderr)
}

fn log_shell_sum(values: &[(f64, usize)], len: usize, s: f64) -> f64 {
    let vals: Vec<f64> = values
        .iter()
        .filter(|v| v.1 == len)
        .map(|v| -s * v.0)
        .collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Root in `s` of `log A_L(s) − log A_{L−2}(s)`, with `A_L` the shell sum.
fn shell_ratio_root(values: &[(f64, usize)], len: usize) -> Option<f64> {
    let f = |s: f64| log_shell_sum(values, len, s) - log_shell_sum(values, len - 2, s);
    let f0 = f(0.0);
    if !f0.is_finite() {
        return None;
    }
    if f0 <= 0.0 {
        return Some(0.0);
    }
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn series_root(values: &[(f64, usize)]) -> Result<(f64, f64)> {
    let max_len = values.iter().map(|v| v.1).max().unwrap_or(0);
    if max_len < 2 {
        return Err(Error::InsufficientRange { distinct: 0 });
    }
    let s = shell_ratio_root(values, max_len).ok_or(Error::InsufficientRange { distinct: 0 })?;
    let spread = if max_len >= 3 {
        shell_ratio_root(values, max_len - 1)
            .map(|s2| 0.5 * (s - s2).abs())
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    Ok((s, spread))
}

fn tail_slope(values: &[(f64, usize)], s: f64) -> f64 {
    let max_len = values.iter().map(|v| v.1).max().unwrap_or(0);
    let first = max_len.saturating_sub(4).max(1);
    if max_len < first + 2 {
        return f64::NAN;
    }
    let xs: Vec<f64> = (first..=max_len).map(|l| l as f64).collect();
    let ys: Vec<f64> = (first..=max_len)
        .map(|l| log_shell_sum(values, l, s))
        .collect();
    ols(&xs, &ys).0
}

/// Critical exponent estimate from `(value, word length)` pairs. Shared by
/// the Cartan and Hilbert pipelines.
pub fn critical_exponent_from_values(
    values: &[(f64, usize)],
    method: ExponentMethod,
) -> Result<ExponentEstimate> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty orbit".into()));
    }
    let negative_values = values.iter().filter(|v| v.0 < -1e-9).count();
    let unbounded = values.iter().any(|v| v.0 > 1e-9);
    if !unbounded {
        return Ok(ExponentEstimate {
            delta_hat: 0.0,
            method,
            window: (0.0, 0.0),
            slope_stderr: 0.0,
            cross_method_gap: None,
            distinct_in_window: 0,
            divergence_heuristic: f64::NAN,
            negative_values,
        });
    }
    let count = count_regression(values);
    let series = series_root(values);
    let gap = match (&count, &series) {
        (Ok(c), Ok(s)) => Some((c.slope.max(0.0) - s.0).abs()),
        _ => None,
    };
    let est = match method {
        ExponentMethod::CountRegression => {
            let c = count?;
            let delta = c.slope.max(0.0);
            ExponentEstimate {
                delta_hat: delta,
                method,
                window: c.window,
                slope_stderr: c.stderr,
                cross_method_gap: gap,
                distinct_in_window: c.distinct,
                divergence_heuristic: tail_slope(values, delta),
                negative_values,
            }
        }
        ExponentMethod::SeriesRoot => {
            let (delta, spread) = series?;
            let (window, distinct) = count
                .as_ref()
                .map(|c| (c.window, c.distinct))
                .unwrap_or(((0.0, 0.0), 0));
            ExponentEstimate {
                delta_hat: delta,
                method,
                window,
                slope_stderr: spread,
                cross_method_gap: gap,
                distinct_in_window: distinct,
                divergence_heuristic: tail_slope(values, delta),
                negative_values,
            }
        }
    };
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartan::RootSubset;
    use crate::linalg::exp_diag;

    fn cyclic(t: f64) -> GeneratorSet {
        GeneratorSet::new(
            vec![("a".into(), exp_diag(&[t, 0.0, -t]))],
            WordPolicy::FreeReduced,
        )
        .unwrap()
    }

    fn phi_h(d: usize) -> Functional {
        let mut c = vec![0.0; d - 1];
        c[0] = 0.5;
        c[d - 2] += 0.5;
        Functional::new(c)
    }

    fn two_diag_free() -> GeneratorSet {
        let a = exp_diag(&[1.0, -1.0]);
        let r = nalgebra::Rotation2::new(0.7);
        let k = Mat::from_column_slice(2, 2, r.matrix().as_slice());
        let b = &k * exp_diag(&[1.3, -1.3]) * k.transpose();
        GeneratorSet::new(
            vec![("a".into(), a), ("b".into(), b)],
            WordPolicy::FreeReduced,
        )
        .unwrap()
    }

    #[test]
    fn free_counts() {
        let g = two_diag_free();
        let ball = OrbitBall::enumerate(&g, 2).unwrap();
        assert_eq!(ball.len(), 17);
        let ball = OrbitBall::enumerate(&g, 5).unwrap();
        let expected: usize = 1 + (1..=5).map(|n| 4 * 3usize.pow(n - 1)).sum::<usize>();
        assert_eq!(ball.len(), expected);
        for i in 0..ball.len() {
            assert!(g.is_reduced(&ball.word(i)));
        }
    }

    #[test]
    fn cyclic_counts() {
        for n in [1, 3, 7] {
            let ball = OrbitBall::enumerate(&cyclic(1.0), n).unwrap();
            assert_eq!(ball.len(), 2 * n + 1);
        }
    }

    #[test]
    fn shortlex_order() {
        let g = two_diag_free();
        let ball = OrbitBall::enumerate(&g, 3).unwrap();
        let words: Vec<Vec<usize>> = (0..ball.len()).map(|i| ball.word(i)).collect();
        for w in words.windows(2) {
            assert!((w[0].len(), &w[0]) < (w[1].len(), &w[1]));
        }
        assert_eq!(ball.word_string(0), "e");
        assert_eq!(ball.word_string(1), "a");
        assert_eq!(ball.word_string(3), "A");
    }

    #[test]
    fn cached_kappa_matches_direct() {
        let g = two_diag_free();
        let ball = OrbitBall::enumerate(&g, 4).unwrap();
        for i in 0..ball.len() {
            let direct = cartan::cartan_projection(&ball.matrix(i)).unwrap();
            assert!(direct.dist_sup(&ball.kappa(i)) <= 1e-10);
            let (m, inv) = g.evaluate(&ball.word(i));
            assert!(linalg::max_abs_diff(&m, &ball.matrix(i)) < 1e-9);
            assert!(linalg::max_abs_diff(&inv, &ball.inverse(i)) < 1e-9);
        }
    }

    #[test]
    fn hash_dedup_agrees_on_free_group() {
        let g = two_diag_free();
        let free = OrbitBall::enumerate(&g, 4).unwrap();
        let hashed = OrbitBall::enumerate(&g.with_policy(WordPolicy::HashDedup), 4).unwrap();
        assert_eq!(free.len(), hashed.len());
        assert_eq!(hashed.dedup_stats().collapsed, 0);
    }

    #[test]
    fn hash_dedup_flags_relations() {
        // two commuting diagonal matrices: many reduced words coincide
        let a = exp_diag(&[1.0, 0.0, -1.0]);
        let b = exp_diag(&[0.0, 1.0, -1.0]);
        let g = GeneratorSet::new(
            vec![("a".into(), a), ("b".into(), b)],
            WordPolicy::HashDedup,
        )
        .unwrap();
        assert!(matches!(
            OrbitBall::enumerate(&g, 4),
            Err(Error::DiscretenessSuspect { .. })
        ));
    }

    #[test]
    fn generator_validation() {
        let bad = exp_diag(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            GeneratorSet::new(vec![("a".into(), bad)], WordPolicy::FreeReduced),
            Err(Error::NotUnimodular(_))
        ));
        let a = exp_diag(&[1.0, 0.0, -1.0]);
        assert!(GeneratorSet::new(
            vec![("a".into(), a.clone()), ("a".into(), a)],
            WordPolicy::FreeReduced
        )
        .is_err());
        assert!(OrbitBall::enumerate(&cyclic(1.0), 0).is_err());
    }

    #[test]
    fn counting_on_cyclic() {
        let ball = OrbitBall::enumerate(&cyclic(1.0), 10).unwrap();
        let phi = phi_h(3);
        assert_eq!(counting_function(&ball, &phi, -0.5), 0);
        assert_eq!(counting_function(&ball, &phi, 0.0), 1);
        for t in [0.5f64, 1.0, 2.5, 7.0, 9.99] {
            let n = 2 * t.floor() as usize + 1;
            assert_eq!(counting_function(&ball, &phi, t + 1e-9), n);
        }
        assert_eq!(counting_function(&ball, &phi, f64::INFINITY), ball.len());
    }

    #[test]
    fn poincare_on_cyclic() {
        let n = 12;
        let ball = OrbitBall::enumerate(&cyclic(1.0), n).unwrap();
        let phi = phi_h(3);
        assert_eq!(poincare_partial(&ball, &phi, 0.0), ball.len() as f64);
        for s in [0.1, 0.5, 1.0, 3.0] {
            let closed = 1.0 + 2.0 * (1..=n).map(|k| (-s * k as f64).exp()).sum::<f64>();
            assert!((poincare_partial(&ball, &phi, s) - closed).abs() < 1e-10);
        }
        assert!((poincare_partial(&ball, &phi, 60.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cyclic_exponent_is_small() {
        let ball = OrbitBall::enumerate(&cyclic(1.0), 40).unwrap();
        let est = critical_exponent(&ball, &phi_h(3), ExponentMethod::CountRegression).unwrap();
        assert!(est.delta_hat <= 0.1, "{est:?}");
        let est = critical_exponent(&ball, &phi_h(3), ExponentMethod::SeriesRoot).unwrap();
        assert!(est.delta_hat <= 0.1, "{est:?}");
    }

    #[test]
    fn short_cyclic_ball_is_insufficient() {
        let ball = OrbitBall::enumerate(&cyclic(1.0), 6).unwrap();
        assert!(matches!(
            critical_exponent(&ball, &phi_h(3), ExponentMethod::CountRegression),
            Err(Error::InsufficientRange { .. })
        ));
    }

    #[test]
    fn bounded_functional_gives_zero() {
        let ball = OrbitBall::enumerate(&cyclic(1.0), 4).unwrap();
        let zero = Functional::new(vec![0.0, 0.0]);
        let est = critical_exponent(&ball, &zero, ExponentMethod::CountRegression).unwrap();
        assert_eq!(est.delta_hat, 0.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let g = two_diag_free();
        let ball = OrbitBall::enumerate(&g, 3).unwrap();
        let mut buf = Vec::new();
        ball.write_jsonl(&mut buf).unwrap();
        let back = OrbitBall::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), ball.len());
        assert_eq!(back.max_len(), 3);
        for i in 0..ball.len() {
            assert_eq!(back.word(i), ball.word(i));
            assert!(linalg::max_abs_diff(&back.matrix(i), &ball.matrix(i)) < 1e-12);
            assert!(linalg::max_abs_diff(&back.inverse(i), &ball.inverse(i)) < 1e-9);
        }
        for l in 0..=3 {
            assert_eq!(back.shell(l), ball.shell(l));
        }
    }

    #[test]
    fn cyclic_reduction_and_jordan() {
        let g = crate::fixtures::f2_sl2();
        let w = g.parse_word(&["B", "B", "a", "b", "b", "b"].map(String::from)).unwrap();
        assert_eq!(g.cyclic_reduction(&w), &w[2..4]);
        assert_eq!(g.cyclic_reduction(&w[2..4]), &w[2..4]);
        let (m, _) = g.evaluate(&w);
        let direct = cartan::jordan_projection(&m).unwrap();
        let reduced = g.jordan_projection(&w).unwrap();
        assert!(direct.dist_sup(&reduced) < 1e-8);
        assert!(g.cyclic_reduction(&[]).is_empty());
    }

    #[test]
    fn identity_ball() {
        let ball = OrbitBall::identity(&cyclic(1.0));
        assert_eq!(ball.len(), 1);
        assert_eq!(ball.kappa(0).sup_norm(), 0.0);
        let _ = RootSubset::full(3);
    }
}

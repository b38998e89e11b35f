//! Shadows, atomic Patterson measures and their diagnostics, and conical
//! tracking of boundary points along geodesic words.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cartan::{self, CartanVector, Functional, RootSubset};
use crate::error::{Error, Result};
use crate::flags::{self, FlagRecord, PartialFlag};
use crate::linalg::{self, Mat};
use crate::orbit::{self, ExponentMethod, GeneratorSet, OrbitBall};
use crate::par::{self, *};
use crate::tol;

/// The shadow `O_R^θ(g)`.
#[derive(Clone, Debug)]
pub struct ShadowSpec {
    pub g: Mat,
    pub g_inv: Mat,
    pub kappa: CartanVector,
    pub r: f64,
    pub theta: RootSubset,
    thr: Vec<(usize, f64)>,
}

impl ShadowSpec {
    pub fn new(g: &Mat, r: f64, theta: RootSubset) -> Result<Self> {
        let g_inv = linalg::inverse(g)?;
        Self::with_inverse(g, &g_inv, r, theta)
    }

    pub fn with_inverse(g: &Mat, g_inv: &Mat, r: f64, theta: RootSubset) -> Result<Self> {
        if r <= 0.0 || !r.is_finite() {
            return Err(Error::InvalidInput(format!(
                "shadow radius must be positive, got {r}"
            )));
        }
        let kappa = cartan::cartan_projection_with_inverse(g, g_inv)?;
        Ok(ShadowSpec::build(g.clone(), g_inv.clone(), kappa, r, theta))
    }

    fn build(g: Mat, g_inv: Mat, kappa: CartanVector, r: f64, theta: RootSubset) -> Self {
        let w = weights(&kappa);
        let thr = theta.indices().iter().map(|&j| (j, w[j - 1] - r)).collect();
        ShadowSpec {
            g,
            g_inv,
            kappa,
            r,
            theta,
            thr,
        }
    }

    pub fn from_orbit(orbit: &OrbitBall, i: usize, r: f64, theta: RootSubset) -> Result<Self> {
        if r <= 0.0 || !r.is_finite() {
            return Err(Error::InvalidInput(format!(
                "shadow radius must be positive, got {r}"
            )));
        }
        Ok(ShadowSpec::build(
            orbit.matrix(i),
            orbit.inverse(i),
            orbit.kappa(i),
            r,
            theta,
        ))
    }

    /// `(j, ω_j(κ(g)) − R)` for `j ∈ θ`.
    pub fn thresholds(&self) -> &[(usize, f64)] {
        &self.thr
    }

    /// Membership from the leading frame columns of `ξ`, via
    /// `ω_j B(g, g⁻¹ξ) = −ω_j B(g⁻¹, ξ)`.
    pub fn contains_columns(&self, cols: &Mat) -> bool {
        let w = flags::iwasawa_weights(&self.g_inv, cols);
        self.thr.iter().all(|&(j, thr)| -w[j - 1] > thr)
    }

    /// As [`ShadowSpec::contains_columns`] on a column-major `d×k` slice
    /// with `k ≥ max θ`; needs `d ≤ RAW_MAX_DIM`.
    pub fn contains_slice(&self, cols: &[f64], k: usize) -> bool {
        let d = self.g.nrows();
        let mut w = [0.0; flags::RAW_MAX_DIM];
        flags::iwasawa_weights_raw(self.g_inv.as_slice(), d, cols, k, &mut w);
        self.thr.iter().all(|&(j, thr)| -w[j - 1] > thr)
    }
}

fn weights(h: &CartanVector) -> Vec<f64> {
    let mut acc = 0.0;
    h.0.iter()
        .map(|t| {
            acc += t;
            acc
        })
        .collect()
}

/// `ξ ∈ O_R^θ(g)`: for every `j ∈ θ`,
/// `ω_j(B_θ(g, g⁻¹ξ)) > ω_j(κ(g)) − R`. The boundary is excluded.
///
/// The cocycle identity `B(g, g⁻¹ξ) = −B(g⁻¹, ξ)` avoids moving `ξ` by
/// `g⁻¹`, which loses all precision when `g` is a long word.
pub fn shadow_contains(spec: &ShadowSpec, xi: &PartialFlag) -> Result<bool> {
    if xi.theta() != &spec.theta {
        return Err(Error::InvalidInput(
            "flag and shadow use different θ".into(),
        ));
    }
    let b = flags::partial_iwasawa(&spec.g_inv, xi)?.scale(-1.0);
    let wb = weights(&b);
    let wk = weights(&spec.kappa);
    Ok(spec
        .theta
        .indices()
        .iter()
        .all(|&j| wb[j - 1] > wk[j - 1] - spec.r))
}

/// Radius for which `g·O_R(h) ⊂ O_{R'}(gh)`.
pub fn translate_radius(r: f64, g_kappa: &CartanVector) -> f64 {
    let w = weights(g_kappa);
    r + 2.0 * w.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub phi: Vec<f64>,
    pub s: f64,
    pub max_len: usize,
}

/// A finitely supported probability measure on `F_θ`. Only the leading
/// `max θ` frame columns of each atom are stored.
#[derive(Clone, Debug)]
pub struct AtomicMeasure {
    dim: usize,
    theta: RootSubset,
    k: usize,
    cols: Vec<f64>,
    weights: Vec<f64>,
    source: Vec<u32>,
    pub provenance: Provenance,
    pub skipped: usize,
}

impl AtomicMeasure {
    /// Measure from explicit flags and positive weights (normalised here).
    pub fn from_atoms(atoms: &[(PartialFlag, f64)], provenance: Provenance) -> Result<Self> {
        let Some((first, _)) = atoms.first() else {
            return Err(Error::AllDegenerate);
        };
        let theta = first.theta().clone();
        let dim = theta.dim();
        let k = theta.max_index();
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let mut m = AtomicMeasure {
            dim,
            theta: theta.clone(),
            k,
            cols: Vec::new(),
            weights: Vec::new(),
            source: Vec::new(),
            provenance,
            skipped: 0,
        };
        for (i, (x, w)) in atoms.iter().enumerate() {
            if x.theta() != &theta || !(*w > 0.0) {
                return Err(Error::InvalidInput(
                    "atoms must share θ and have positive weight".into(),
                ));
            }
            m.cols.extend(x.frame().columns(0, k).iter());
            m.weights.push(w / total);
            m.source.push(i as u32);
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn theta(&self) -> &RootSubset {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the orbit element (or input atom) behind atom `i`.
    pub fn source(&self, i: usize) -> usize {
        self.source[i] as usize
    }

    pub fn atom_columns(&self, i: usize) -> Mat {
        let n = self.dim * self.k;
        Mat::from_column_slice(self.dim, self.k, &self.cols[i * n..(i + 1) * n])
    }

    /// Column-major `d×k` leading columns of atom `i`, `k = max θ`.
    pub fn atom_slice(&self, i: usize) -> &[f64] {
        let n = self.dim * self.k;
        &self.cols[i * n..(i + 1) * n]
    }

    /// Number of stored columns per atom.
    pub fn columns_per_atom(&self) -> usize {
        self.k
    }

    pub fn atom(&self, i: usize) -> PartialFlag {
        PartialFlag::from_columns(self.theta.clone(), &self.atom_columns(i))
            .expect("stored atoms are orthonormal")
    }

    pub fn total(&self) -> f64 {
        par::det_sum(self.len(), |i| self.weights[i])
    }

    /// `μ(E)` for `E = {x : pred(columns of x)}`.
    pub fn mass_where<F>(&self, pred: F) -> f64
    where
        F: Fn(&Mat) -> bool + Sync + Send,
    {
        par::det_sum(self.len(), |i| {
            if pred(&self.atom_columns(i)) {
                self.weights[i]
            } else {
                0.0
            }
        })
    }

    /// Masses of `m` sets in one pass over the atoms: `classify` marks, for
    /// the atom's leading columns, which of the sets contain it.
    pub fn masses_by<F>(&self, m: usize, classify: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [bool]) + Sync + Send,
    {
        const CHUNK: usize = 4096;
        let n = self.len();
        let chunks = n.div_ceil(CHUNK);
        let partial: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; m];
                let mut hit = vec![false; m];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    hit.iter_mut().for_each(|h| *h = false);
                    classify(self.atom_slice(i), &mut hit);
                    let w = self.weights[i];
                    for (a, &h) in acc.iter_mut().zip(&hit) {
                        if h {
                            *a += w;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; m];
        for p in partial {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }

    pub fn shadow_masses(&self, specs: &[ShadowSpec]) -> Vec<f64> {
        let k = self.k;
        if self.dim > flags::RAW_MAX_DIM {
            return specs
                .iter()
                .map(|spec| self.mass_where(|c| spec.contains_columns(c)))
                .collect();
        }
        self.masses_by(specs.len(), |cols, hit| {
            for (h, spec) in hit.iter_mut().zip(specs) {
                *h = spec.contains_slice(cols, k);
            }
        })
    }

    pub fn shadow_mass(&self, spec: &ShadowSpec) -> f64 {
        self.shadow_masses(std::slice::from_ref(spec))[0]
    }

    /// Mass within `radius` of `x` in the flag distance.
    pub fn ball_mass(&self, x: &PartialFlag, radius: f64) -> f64 {
        let target = x.with_theta(self.theta.clone());
        self.mass_where(|c| {
            let y = PartialFlag::from_columns(self.theta.clone(), c).expect("orthonormal");
            flags::flag_distance(&y, &target) < radius
        })
    }

    /// Atom table rows: weight, source index, then the projector
    /// coordinates of the leading span.
    pub fn csv_rows(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let j = self.k;
        let d = self.dim;
        let mut header = vec!["weight".to_string(), "source".to_string()];
        for r in 0..d {
            for c in 0..d {
                header.push(format!("p{}_{}{}", j, r + 1, c + 1));
            }
        }
        let rows = (0..self.len())
            .map(|i| {
                let cols = self.atom_columns(i);
                let p = &cols * cols.transpose();
                let mut row = vec![self.weights[i], self.source[i] as f64];
                for r in 0..d {
                    for c in 0..d {
                        row.push(p[(r, c)]);
                    }
                }
                row
            })
            .collect();
        (header, rows)
    }
}

/// Patterson's atomic approximation: atoms `U_θ(γ)` with weights
/// proportional to `e^{−sφ(κ(γ))}`. Elements without a `θ`-gap are skipped.
pub fn patterson_construct(
    orbit: &OrbitBall,
    phi: &Functional,
    s: f64,
    theta: &RootSubset,
) -> Result<AtomicMeasure> {
    if !(s > 0.0) {
        return Err(Error::InvalidInput("exponent s must be positive".into()));
    }
    let d = orbit.dim();
    let k = theta.max_index();
    let vals = orbit.values(phi);
    let atoms: Vec<Option<(Vec<f64>, f64)>> = (0..orbit.len())
        .into_par_iter()
        .map(|i| {
            let kappa = orbit.kappa(i);
            match flags::u_theta_columns(
                &orbit.matrix(i),
                &orbit.inverse(i),
                &kappa,
                theta,
                tol::GAP_FLOOR,
            ) {
                Ok(cols) => Some((cols.iter().copied().collect(), -s * vals[i])),
                Err(_) => None,
            }
        })
        .collect();
    let mut cols = Vec::new();
    let mut logw = Vec::new();
    let mut source = Vec::new();
    let mut skipped = 0;
    for (i, a) in atoms.into_iter().enumerate() {
        match a {
            Some((c, w)) => {
                cols.extend(c);
                logw.push(w);
                source.push(i as u32);
            }
            None => skipped += 1,
        }
    }
    if logw.is_empty() {
        return Err(Error::AllDegenerate);
    }
    let lse = par::det_logsumexp(logw.len(), |i| logw[i]);
    let weights: Vec<f64> = logw.iter().map(|w| (w - lse).exp()).collect();
    Ok(AtomicMeasure {
        dim: d,
        theta: theta.clone(),
        k,
        cols,
        weights,
        source,
        provenance: Provenance {
            phi: phi.weight_coeffs.clone(),
            s,
            max_len: orbit.max_len(),
        },
        skipped,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PattersonFamily {
    pub delta_hat: f64,
    pub epsilons: Vec<f64>,
    pub measures: Vec<MeasureSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub s: f64,
    pub atoms: usize,
    pub skipped: usize,
    pub total: f64,
}

/// Measures at `s = δ̂ + ε` for the configured `ε` schedule.
pub fn patterson_family(
    orbit: &OrbitBall,
    phi: &Functional,
    theta: &RootSubset,
    epsilons: &[f64],
) -> Result<(f64, Vec<AtomicMeasure>)> {
    let est = orbit::critical_exponent(orbit, phi, ExponentMethod::CountRegression)?;
    let measures = epsilons
        .iter()
        .map(|eps| patterson_construct(orbit, phi, est.delta_hat + eps, theta))
        .collect::<Result<Vec<_>>>()?;
    Ok((est.delta_hat, measures))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShadowRatio {
    pub word: String,
    pub word_len: usize,
    pub mass: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShadowLemmaReport {
    pub r: f64,
    pub delta: f64,
    pub ratios: Vec<ShadowRatio>,
    /// Words whose shadow carries no atom.
    pub empty: Vec<String>,
    pub c_hat: f64,
    /// `(word length, min ratio, max ratio)`.
    pub profile: Vec<(usize, f64, f64)>,
}

/// `μ(O_R(γ)) e^{δφ(κ(γ))}` for the elements `γ` of the ball with word
/// length `1..=test_len`; `C_hat` is the max/min ratio over non-empty
/// shadows.
pub fn shadow_lemma_report(
    mu: &AtomicMeasure,
    orbit: &OrbitBall,
    r: f64,
    delta: f64,
    phi: &Functional,
    test_len: usize,
) -> Result<ShadowLemmaReport> {
    let vals = orbit.values(phi);
    let tested: Vec<usize> = (1..=test_len.min(orbit.max_len()))
        .flat_map(|l| orbit.shell(l))
        .collect();
    let specs = tested
        .iter()
        .map(|&i| ShadowSpec::from_orbit(orbit, i, r, mu.theta().clone()))
        .collect::<Result<Vec<_>>>()?;
    let masses = mu.shadow_masses(&specs);
    let mut ratios = Vec::new();
    let mut empty = Vec::new();
    for (&i, &mass) in tested.iter().zip(&masses) {
        let word = orbit.word_string(i);
        if mass > 0.0 {
            ratios.push(ShadowRatio {
                word,
                word_len: orbit.word_len(i),
                mass,
                ratio: mass * (delta * vals[i]).exp(),
            });
        } else {
            empty.push(word);
        }
    }
    let max = ratios
        .iter()
        .map(|r| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let c_hat = if ratios.is_empty() {
        f64::INFINITY
    } else {
        max / min
    };
    let mut profile = Vec::new();
    for l in 1..=test_len {
        let rs: Vec<f64> = ratios
            .iter()
            .filter(|x| x.word_len == l)
            .map(|x| x.ratio)
            .collect();
        if !rs.is_empty() {
            profile.push((
                l,
                rs.iter().copied().fold(f64::INFINITY, f64::min),
                rs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ));
        }
    }
    Ok(ShadowLemmaReport {
        r,
        delta,
        ratios,
        empty,
        c_hat,
        profile,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConformalityReport {
    pub residuals: Vec<f64>,
    pub matched: usize,
    pub tested: usize,
    pub median_abs: f64,
    pub iqr: (f64, f64),
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Finite-scale Radon–Nikodym check. For each sample index `η`, with
/// `O = O_R(η)` and `x_O = U_θ(η)`, the residual is
/// `log(μ(γO)/μ(O)) + δ φ(B(γ, x_O))`.
pub fn conformality_residual(
    mu: &AtomicMeasure,
    orbit: &OrbitBall,
    gamma: &Mat,
    delta: f64,
    phi: &Functional,
    r: f64,
    samples: &[usize],
) -> Result<ConformalityReport> {
    let theta = mu.theta().clone();
    let d = mu.dim();
    if d > flags::RAW_MAX_DIM {
        return Err(Error::InvalidInput(
            "dimension too large for shadow kernels".into(),
        ));
    }
    let k = mu.columns_per_atom();
    let gamma_inv = linalg::inverse(gamma)?;
    let specs = samples
        .iter()
        .map(|&e| ShadowSpec::from_orbit(orbit, e, r, theta.clone()))
        .collect::<Result<Vec<_>>>()?;
    let composites: Vec<Mat> = specs.iter().map(|s| &s.g_inv * &gamma_inv).collect();
    // y ∈ γO  ⟺  −ω_j[B(η⁻¹γ⁻¹, y) − B(γ⁻¹, y)] > ω_jκ(η) − R
    let masses = mu.masses_by(2 * specs.len(), |cols, hit| {
        let mut base = [0.0; flags::RAW_MAX_DIM];
        let mut w = [0.0; flags::RAW_MAX_DIM];
        flags::iwasawa_weights_raw(gamma_inv.as_slice(), d, cols, k, &mut base);
        for (e, spec) in specs.iter().enumerate() {
            hit[2 * e] = spec.contains_slice(cols, k);
            flags::iwasawa_weights_raw(composites[e].as_slice(), d, cols, k, &mut w);
            hit[2 * e + 1] = spec
                .thresholds()
                .iter()
                .all(|&(j, t)| -(w[j - 1] - base[j - 1]) > t);
        }
    });
    let mut residuals = Vec::new();
    for (e, spec) in specs.iter().enumerate() {
        let (m_o, m_go) = (masses[2 * e], masses[2 * e + 1]);
        if m_o <= 0.0 || m_go <= 0.0 {
            continue;
        }
        let x = flags::u_theta_with_inverse(&spec.g, &spec.g_inv, &theta, tol::GAP_FLOOR)?;
        let b = flags::iwasawa_cocycle(gamma, &x.lift())?;
        residuals.push((m_go / m_o).ln() + delta * phi.eval(&b));
    }
    if residuals.is_empty() {
        return Err(Error::InsufficientMatchedMass);
    }
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(ConformalityReport {
        matched: residuals.len(),
        tested: samples.len(),
        median_abs: quantile(&abs, 0.5),
        iqr: (quantile(&sorted, 0.25), quantile(&sorted, 0.75)),
        residuals,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    pub n: usize,
    pub min_gap: f64,
    pub flag: Option<FlagRecord>,
    pub increment: Option<f64>,
    pub degenerate: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trace {
    pub word: Vec<String>,
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
    pub converged_at: Option<usize>,
    /// Last `U_θ` and `U_Θ` of the prefixes.
    pub limit_theta: Option<FlagRecord>,
    pub limit: Option<FlagRecord>,
}

impl Trace {
    pub fn limit_flag(&self) -> Option<PartialFlag> {
        self.limit
            .clone()
            .and_then(|r| PartialFlag::try_from(r).ok())
    }

    pub fn limit_theta_flag(&self) -> Option<PartialFlag> {
        self.limit_theta
            .clone()
            .and_then(|r| PartialFlag::try_from(r).ok())
    }
}

/// Follow `U_Θ(γ_n)` along the prefixes `γ_n` of a reduced word.
pub fn conical_tracking(
    gens: &GeneratorSet,
    word: &[usize],
    theta: &RootSubset,
    big_theta: &RootSubset,
) -> Result<Trace> {
    if !theta.is_subset_of(big_theta) {
        return Err(Error::InvalidInput("θ must be contained in Θ".into()));
    }
    if !gens.is_reduced(word) {
        return Err(Error::InvalidInput("word is not reduced".into()));
    }
    let d = gens.dim();
    let mut g = Mat::identity(d, d);
    let mut g_inv = g.clone();
    let mut entries = Vec::with_capacity(word.len());
    let mut prev: Option<PartialFlag> = None;
    let mut converged_at = None;
    let mut last_theta = None;
    for (n, &l) in word.iter().enumerate() {
        g = &g * gens.letter(l);
        g_inv = gens.letter(gens.inverse_letter(l)) * &g_inv;
        let kappa = cartan::cartan_projection_with_inverse(&g, &g_inv)?;
        let min_gap = big_theta
            .indices()
            .iter()
            .map(|&j| cartan::root_eval(j, &kappa).unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min);
        let entry = match flags::u_theta_with_inverse(&g, &g_inv, big_theta, tol::GAP_FLOOR) {
            Ok(x) => {
                let inc = prev.as_ref().map(|p| flags::flag_distance(p, &x));
                if converged_at.is_none()
                    && inc.is_some_and(|v| v < tol::TRACK_INCREMENT)
                    && min_gap > tol::TRACK_MIN_GAP
                {
                    converged_at = Some(n + 1);
                }
                last_theta = Some(x.with_theta(theta.clone()));
                let rec = FlagRecord::from(&x);
                prev = Some(x);
                TraceEntry {
                    n: n + 1,
                    min_gap,
                    flag: Some(rec),
                    increment: inc,
                    degenerate: None,
                }
            }
            Err(Error::DegenerateGap(j)) => TraceEntry {
                n: n + 1,
                min_gap,
                flag: None,
                increment: None,
                degenerate: Some(j),
            },
            Err(e) => return Err(e),
        };
        entries.push(entry);
    }
    Ok(Trace {
        word: word.iter().map(|&l| gens.label(l).to_string()).collect(),
        entries,
        converged: converged_at.is_some(),
        converged_at,
        limit_theta: last_theta.as_ref().map(FlagRecord::from),
        limit: prev.as_ref().map(FlagRecord::from),
    })
}

/// Uniformly random reduced word of length `n`.
pub fn random_reduced_word<R: Rng + ?Sized>(
    rng: &mut R,
    gens: &GeneratorSet,
    n: usize,
) -> Vec<usize> {
    let nl = gens.num_letters();
    let mut w: Vec<usize> = Vec::with_capacity(n);
    for _ in 0..n {
        let l = match w.last() {
            None => rng.random_range(0..nl),
            Some(&prev) => {
                let forbidden = gens.inverse_letter(prev);
                let k = rng.random_range(0..nl - 1);
                if k >= forbidden {
                    k + 1
                } else {
                    k
                }
            }
        };
        w.push(l);
    }
    w
}

/// Free reduction of `prefix · word`.
pub fn reduce_product(gens: &GeneratorSet, prefix: &[usize], word: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(prefix.len() + word.len());
    for &l in prefix.iter().chain(word) {
        if out.last().is_some_and(|&p| gens.inverse_letter(p) == l) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftPoint {
    pub word: Vec<String>,
    pub x: FlagRecord,
    pub lift: FlagRecord,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquivarianceCheck {
    pub word: Vec<String>,
    pub translate: Vec<String>,
    pub distance: f64,
}

/// Equivariance of the empirical lift: trace `γ·w` and compare its limit
/// with `γ` applied to the limit of `w`.
pub fn lift_equivariance(
    gens: &GeneratorSet,
    word: &[usize],
    gamma: &[usize],
    theta: &RootSubset,
    big_theta: &RootSubset,
) -> Result<EquivarianceCheck> {
    let base = conical_tracking(gens, word, theta, big_theta)?;
    let moved_word = reduce_product(gens, gamma, word);
    let moved = conical_tracking(gens, &moved_word, theta, big_theta)?;
    let (g, _) = gens.evaluate(gamma);
    let (Some(x), Some(y)) = (base.limit_flag(), moved.limit_flag()) else {
        return Err(Error::DegenerateGap(0));
    };
    Ok(EquivarianceCheck {
        word: base.word.clone(),
        translate: gamma.iter().map(|&l| gens.label(l).to_string()).collect(),
        distance: flags::flag_distance(&x.act(&g), &y),
    })
}

//! Entropy functionals, the comparison between `φ_H` and `φ_p, φ̄_p`,
//! harmonic-mean bounds on critical exponents and their strictness, the
//! middle-eigenvalue probe, and level-set scans of `φ ↦ δ^φ`.

use serde::{Deserialize, Serialize};

use crate::cartan::{CartanVector, Functional};
use crate::error::{Error, Result};
use crate::orbit::{self, ExponentEstimate, ExponentMethod, OrbitBall};
use crate::par::*;
use crate::tol;

fn weight(d: usize, j: usize) -> Result<Functional> {
    Functional::fundamental_weight(d, j)
}

fn check_p(d: usize, p: usize) -> Result<()> {
    if d < 3 || p == 0 || p > d - 2 {
        return Err(Error::IndexOutOfRange { index: p, bound: d.saturating_sub(2) });
    }
    Ok(())
}

/// `φ_H = ½(ω₁ + ω_{d−1})`, i.e. `½(t₁ − t_d)`.
pub fn hilbert_functional(d: usize) -> Result<Functional> {
    if d < 2 {
        return Err(Error::IndexOutOfRange { index: d, bound: 2 });
    }
    let mut c = vec![0.0; d - 1];
    c[0] += 0.5;
    c[d - 2] += 0.5;
    Ok(Functional::new(c))
}

/// `φ_p = (p+1)ω₁ − ω_{p+1}`.
pub fn phi_p(d: usize, p: usize) -> Result<Functional> {
    check_p(d, p)?;
    Ok(weight(d, 1)?.combine((p + 1) as f64, &weight(d, p + 1)?, -1.0))
}

/// `φ̄_p = (p+1)ω_{d−1} − ω_{d−p−1}`.
pub fn phi_bar_p(d: usize, p: usize) -> Result<Functional> {
    check_p(d, p)?;
    Ok(weight(d, d - 1)?.combine((p + 1) as f64, &weight(d, d - p - 1)?, -1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub middle_equal: bool,
}

/// `p·φ_H(X)` against `½(φ_p + φ̄_p)(X)` at a chamber point.
pub fn functional_comparison(x: &CartanVector, d: usize, p: usize) -> Result<Comparison> {
    check_p(d, p)?;
    if x.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.dim() });
    }
    if !x.is_chamber() {
        return Err(Error::InvalidInput("X must be chamber-ordered".into()));
    }
    let lhs = p as f64 * hilbert_functional(d)?.eval(x);
    let rhs = 0.5 * (phi_p(d, p)?.eval(x) + phi_bar_p(d, p)?.eval(x));
    Ok(Comparison {
        lhs,
        rhs,
        slack: lhs - rhs,
        middle_equal: (x.0[1] - x.0[d - 2]).abs() <= tol::MIDDLE_EQUAL_TOL,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyReport {
    pub phi: Functional,
    pub phi1: Functional,
    pub phi2: Functional,
    pub c1: f64,
    pub c2: f64,
    pub delta_phi: ExponentEstimate,
    pub delta_phi1: ExponentEstimate,
    pub delta_phi2: ExponentEstimate,
    /// `1 / (c₁/δ̂₁ + c₂/δ̂₂)`.
    pub bound: f64,
    /// `bound − δ̂^φ`.
    pub gap: f64,
    /// Standard error of the gap, adding the first-order contributions of
    /// all three estimates without assuming independence.
    pub combined_stderr: f64,
    /// `min (φ − c₁φ₁ − c₂φ₂)(κ(γ))` over the ball; the comparison premise
    /// holds when this is `≥ −1e-9`.
    pub premise_min: f64,
    pub premise_holds: bool,
    /// The bound is respected up to estimator noise.
    pub bound_respected: bool,
    /// `gap > 2 × combined_stderr`.
    pub strict: bool,
}

fn estimate(orbit: &OrbitBall, phi: &Functional) -> Result<ExponentEstimate> {
    orbit::critical_exponent(orbit, phi, ExponentMethod::CountRegression)
}

fn min_over_orbit(orbit: &OrbitBall, f: &Functional) -> f64 {
    let vals = orbit.values(f);
    vals[1..].iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn convexity_gap(
    orbit: &OrbitBall,
    phi: &Functional,
    phi1: &Functional,
    phi2: &Functional,
    c1: f64,
    c2: f64,
) -> Result<EntropyReport> {
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::InvalidInput("c₁, c₂ must be positive".into()));
    }
    let premise_min = min_over_orbit(orbit, &phi.combine(1.0, &phi1.combine(c1, phi2, c2), -1.0));
    let e = estimate(orbit, phi)?;
    let e1 = estimate(orbit, phi1)?;
    let e2 = estimate(orbit, phi2)?;
    let (d1, d2) = (e1.delta_hat, e2.delta_hat);
    let bound = 1.0 / (c1 / d1 + c2 / d2);
    let db1 = bound * bound * c1 / (d1 * d1);
    let db2 = bound * bound * c2 / (d2 * d2);
    let combined_stderr = e.slope_stderr + db1 * e1.slope_stderr + db2 * e2.slope_stderr;
    let gap = bound - e.delta_hat;
    Ok(EntropyReport {
        phi: phi.clone(),
        phi1: phi1.clone(),
        phi2: phi2.clone(),
        c1,
        c2,
        bound,
        gap,
        combined_stderr,
        premise_min,
        premise_holds: premise_min >= -1e-9,
        bound_respected: e.delta_hat <= bound + tol::ESTIMATOR_NOISE,
        strict: gap > 2.0 * combined_stderr,
        delta_phi: e,
        delta_phi1: e1,
        delta_phi2: e2,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderReport {
    /// Diagnostic when the premise fails and the check is skipped.
    pub skipped: Option<String>,
    pub delta_phi1: f64,
    pub delta_phi2: f64,
    pub delta_phi: Option<f64>,
    /// Smallest `C` with `φ ≥ tφ₁ + (1−t)φ₂ − C` on the ball.
    pub constant: f64,
    /// `1 − δ̂^φ`.
    pub margin: Option<f64>,
    pub passed: bool,
}

/// With `δ̂^{φ₁} = δ̂^{φ₂} = 1` and `φ ≥ tφ₁ + (1−t)φ₂ − C`, confirm
/// `δ̂^φ ≤ 1` up to estimator noise.
pub fn holder_bound_check(
    orbit: &OrbitBall,
    phi: &Functional,
    phi1: &Functional,
    phi2: &Functional,
    t: f64,
) -> Result<HolderReport> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput("t must lie in [0, 1]".into()));
    }
    let d1 = estimate(orbit, phi1)?.delta_hat;
    let d2 = estimate(orbit, phi2)?.delta_hat;
    let comb = phi1.combine(t, phi2, 1.0 - t);
    let constant = -min_over_orbit(orbit, &phi.combine(1.0, &comb, -1.0)).min(0.0);
    let off = |x: f64| (x - 1.0).abs() > tol::ESTIMATOR_NOISE;
    if off(d1) || off(d2) {
        return Ok(HolderReport {
            skipped: Some(format!(
                "premise δ(φ₁) = δ(φ₂) = 1 violated: got {d1:.4} and {d2:.4}; rescale the functionals"
            )),
            delta_phi1: d1,
            delta_phi2: d2,
            delta_phi: None,
            constant,
            margin: None,
            passed: false,
        });
    }
    let d = estimate(orbit, phi)?.delta_hat;
    Ok(HolderReport {
        skipped: None,
        delta_phi1: d1,
        delta_phi2: d2,
        delta_phi: Some(d),
        constant,
        margin: Some(1.0 - d),
        passed: d <= 1.0 + tol::ESTIMATOR_NOISE,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiddleProbe {
    pub deviation: f64,
    /// Word attaining the deviation.
    pub argmax: String,
}

/// `max_γ max_{2≤i≤d−1} |log λ_i(γ)|` over the ball.
pub fn middle_eigenvalue_probe(orbit: &OrbitBall) -> Result<MiddleProbe> {
    let d = orbit.dim();
    let devs: Vec<f64> = (0..orbit.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            if d < 3 {
                return Ok(0.0);
            }
            let lambda = orbit.generators().jordan_projection(&orbit.word(i))?;
            Ok(lambda.0[1..d - 1].iter().fold(0.0f64, |m, x| m.max(x.abs())))
        })
        .collect::<Result<_>>()?;
    let (mut best, mut arg) = (0.0, 0);
    for (i, &v) in devs.iter().enumerate() {
        if v > best {
            best = v;
            arg = i;
        }
    }
    Ok(MiddleProbe { deviation: best, argmax: orbit.word_string(arg) })
}

/// Points of the simplex `{a ≥ 0, Σ a = 1}` in `k` coordinates with
/// `steps + 1` values per axis, in lexicographic order.
pub fn simplex_grid(k: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(k, left - c, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanCell {
    pub coeffs: Vec<f64>,
    pub delta_hat: Option<f64>,
    pub stderr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MidpointCheck {
    pub a: usize,
    pub b: usize,
    pub delta_mid: f64,
    pub max_end: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrictnessProbe {
    pub a: usize,
    pub b: usize,
    /// `δ̂` of the midpoint of the two functionals rescaled to `δ̂ = 1`.
    pub delta_mid: f64,
    pub gap: f64,
    pub stderr: f64,
    pub strict: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelSetScan {
    pub cells: Vec<ScanCell>,
    pub midpoints: Vec<MidpointCheck>,
    pub strictness: Vec<StrictnessProbe>,
    /// `(c, δ̂^{cφ}, δ̂^φ / c)` at the first successful cell.
    pub scaling: Vec<(f64, f64, f64)>,
}

impl LevelSetScan {
    pub fn csv_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let k = self.cells.first().map_or(0, |c| c.coeffs.len());
        let mut header: Vec<String> = (1..=k).map(|j| format!("c{j}")).collect();
        header.extend(["delta_hat".into(), "stderr".into(), "error".into()]);
        let fmt = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
        let rows = self
            .cells
            .iter()
            .map(|c| {
                let mut r: Vec<String> = c.coeffs.iter().map(|x| format!("{x}")).collect();
                r.push(fmt(c.delta_hat));
                r.push(fmt(c.stderr));
                r.push(c.error.clone().unwrap_or_default());
                r
            })
            .collect();
        (header, rows)
    }
}

/// Number of grid steps per axis in default scans (21 points per axis).
pub const SCAN_STEPS: usize = 20;

/// `δ̂^φ` over a grid of functionals, with the scaling, midpoint and
/// strictness checks. `grid` holds weight coefficients; `probes` lists
/// index pairs whose rescaled midpoints test strict convexity.
pub fn q_levelset_scan(orbit: &OrbitBall, grid: &[Vec<f64>], probes: &[(usize, usize)]) -> Result<LevelSetScan> {
    for g in grid {
        if g.len() + 1 != orbit.dim() {
            return Err(Error::DimensionMismatch { expected: orbit.dim() - 1, got: g.len() });
        }
        let f = Functional::new(g.clone());
        if orbit.len() > 1 && !(min_over_orbit(orbit, &f) > 0.0) {
            return Err(Error::InvalidInput(format!("functional {f} is not positive on the orbit")));
        }
    }
    let est: Vec<Result<ExponentEstimate>> = grid
        .par_iter()
        .map(|g| estimate(orbit, &Functional::new(g.clone())))
        .collect();
    let cells: Vec<ScanCell> = grid
        .iter()
        .zip(&est)
        .map(|(g, e)| match e {
            Ok(e) => ScanCell {
                coeffs: g.clone(),
                delta_hat: Some(e.delta_hat),
                stderr: Some(e.slope_stderr),
                error: None,
            },
            Err(err) => ScanCell {
                coeffs: g.clone(),
                delta_hat: None,
                stderr: None,
                error: Some(err.kind().to_string()),
            },
        })
        .collect();

    let mut scaling = Vec::new();
    if let Some((i, d)) = cells.iter().enumerate().find_map(|(i, c)| c.delta_hat.map(|d| (i, d))) {
        for c in [0.5, 2.0] {
            let e = estimate(orbit, &Functional::new(grid[i].clone()).scale(c))?;
            scaling.push((c, e.delta_hat, d / c));
        }
    }

    // grid pairs whose midpoint is again a grid point
    let mut midpoints = Vec::new();
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            let mid: Vec<f64> = grid[a].iter().zip(&grid[b]).map(|(x, y)| 0.5 * (x + y)).collect();
            let Some(m) = grid.iter().position(|g| g.iter().zip(&mid).all(|(x, y)| (x - y).abs() < 1e-12))
            else {
                continue;
            };
            if let (Some(da), Some(db), Some(dm)) = (cells[a].delta_hat, cells[b].delta_hat, cells[m].delta_hat) {
                let max_end = da.max(db);
                midpoints.push(MidpointCheck {
                    a,
                    b,
                    delta_mid: dm,
                    max_end,
                    ok: dm <= max_end + tol::ESTIMATOR_NOISE,
                });
            }
        }
    }

    let mut strictness = Vec::new();
    for &(a, b) in probes {
        let (Some(ea), Some(eb)) = (est.get(a).and_then(|e| e.as_ref().ok()), est.get(b).and_then(|e| e.as_ref().ok()))
        else {
            continue;
        };
        let fa = Functional::new(grid[a].clone()).scale(ea.delta_hat);
        let fb = Functional::new(grid[b].clone()).scale(eb.delta_hat);
        let em = estimate(orbit, &fa.combine(0.5, &fb, 0.5))?;
        // rescaling errors shift the midpoint exponent proportionally
        let stderr = em.slope_stderr
            + 0.5 * em.delta_hat * (ea.slope_stderr / ea.delta_hat + eb.slope_stderr / eb.delta_hat);
        let gap = 1.0 - em.delta_hat;
        strictness.push(StrictnessProbe {
            a,
            b,
            delta_mid: em.delta_hat,
            gap,
            stderr,
            strict: gap > 2.0 * stderr,
        });
    }
    Ok(LevelSetScan { cells, midpoints, strictness, scaling })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(t: &[f64]) -> CartanVector {
        CartanVector(t.to_vec())
    }

    #[test]
    fn functional_examples() {
        let h = hilbert_functional(3).unwrap();
        assert_eq!(h.weight_coeffs, vec![0.5, 0.5]);
        assert!((h.eval(&diag(&[2.0, 0.0, -2.0])) - 2.0).abs() < 1e-15);
        let p2 = phi_p(5, 2).unwrap();
        assert!((p2.eval(&diag(&[2.0, 1.0, 0.0, -1.0, -2.0])) - 3.0).abs() < 1e-15);
        for d in 3..8 {
            for p in 1..=d - 2 {
                assert_eq!(crate::cartan::istar(&phi_p(d, p).unwrap()), phi_bar_p(d, p).unwrap());
            }
            let h = hilbert_functional(d).unwrap();
            let w = weight(d, 1).unwrap().combine(0.5, &weight(d, d - 1).unwrap(), 0.5);
            assert_eq!(h, w);
        }
        assert!(phi_p(3, 2).is_err() && phi_p(4, 0).is_err());
    }

    #[test]
    fn comparison_examples() {
        let c = functional_comparison(&diag(&[2.0, 1.0, 0.0, -1.0, -2.0]), 5, 2).unwrap();
        assert!((c.lhs - 4.0).abs() < 1e-12 && (c.rhs - 3.0).abs() < 1e-12 && (c.slack - 1.0).abs() < 1e-12);
        let c = functional_comparison(&diag(&[4.0, 0.0, 0.0, 0.0, -4.0]), 5, 2).unwrap();
        assert!(c.slack.abs() < 1e-12 && c.middle_equal);
        for d in 3..7 {
            for p in 1..=d - 2 {
                let mut t = vec![0.0; d];
                t[0] = 1.5;
                t[d - 1] = -1.5;
                assert!(functional_comparison(&diag(&t), d, p).unwrap().slack.abs() < 1e-12);
            }
        }
    }

    /// `½ Σ_{i=2}^{min(p+1, d−p−1)} (t_i − t_{d+1−i})`.
    fn slack_oracle(t: &[f64], p: usize) -> f64 {
        let d = t.len();
        let top = (p + 1).min(d - p - 1);
        (2..=top).map(|i| 0.5 * (t[i - 1] - t[d - i])).sum()
    }

    fn random_chamber(rng: &mut ChaCha8Rng, d: usize) -> CartanVector {
        let mut t: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mean = t.iter().sum::<f64>() / d as f64;
        t.iter_mut().for_each(|x| *x -= mean);
        CartanVector(t).into_chamber()
    }

    #[test]
    fn slack_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let d = rng.random_range(3..9);
            let p = rng.random_range(1..=d - 2);
            let x = random_chamber(&mut rng, d);
            let c = functional_comparison(&x, d, p).unwrap();
            assert!((c.slack - slack_oracle(&x.0, p)).abs() < 1e-10);
            assert!(c.slack >= -1e-12);
            if d == 4 && p == 2 {
                assert!(c.slack.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simplex_grid_shape() {
        let g = simplex_grid(2, 20);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], vec![0.0, 1.0]);
        assert_eq!(simplex_grid(3, 20).len(), 231);
        assert!(simplex_grid(3, 4).iter().all(|c| (c.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn middle_probe_cases() {
        let orbit = OrbitBall::enumerate(&fixtures::f2_so21(), 6).unwrap();
        assert!(middle_eigenvalue_probe(&orbit).unwrap().deviation <= 1e-6);
        let f3 = OrbitBall::enumerate(&fixtures::f3().unwrap(), 3).unwrap();
        assert!(middle_eigenvalue_probe(&f3).unwrap().deviation > 0.1);
        let id = OrbitBall::identity(&fixtures::f3().unwrap());
        assert_eq!(middle_eigenvalue_probe(&id).unwrap().deviation, 0.0);
    }

    #[test]
    fn degenerate_combination_has_no_gap() {
        let orbit = OrbitBall::enumerate(&fixtures::f2_so21(), 8).unwrap();
        let h = hilbert_functional(3).unwrap();
        let r = convexity_gap(&orbit, &h, &h, &h, 0.5, 0.5).unwrap();
        assert!(r.gap.abs() < 1e-12);
        assert!(r.premise_holds && r.bound_respected);
    }

    #[test]
    fn holder_paths() {
        let orbit = OrbitBall::enumerate(&fixtures::f2_so21(), 8).unwrap();
        let w1 = weight(3, 1).unwrap();
        let d1 = estimate(&orbit, &w1).unwrap().delta_hat;
        let scaled = w1.scale(d1);
        let r = holder_bound_check(&orbit, &scaled, &scaled, &w1, 1.0).unwrap();
        assert!(r.skipped.is_some());
        let w2 = weight(3, 2).unwrap();
        let scaled2 = w2.scale(estimate(&orbit, &w2).unwrap().delta_hat);
        let r = holder_bound_check(&orbit, &scaled, &scaled, &scaled2, 1.0).unwrap();
        assert!(r.skipped.is_none() && r.passed);
        assert!(r.margin.unwrap().abs() < 1e-9);
        assert!(r.constant.abs() < 1e-9);
    }
}
